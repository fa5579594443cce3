//! Adaptive annealed sequential Monte Carlo over an abstract target.
//!
//! The engine sees a target only through its reference density, its
//! unnormalized posterior density, a way to sample the reference and a
//! kernel that leaves each tempered distribution invariant.

pub mod conjugate;
pub mod gbmds;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GbmdsError, Result};
use crate::special::log_sum_exp;

/// Random number generator used for every stream.
pub type SmcRng = ChaCha8Rng;

/// Stream tags; each (seed, tag, a, b) tuple keys an independent generator.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const PROPAGATE: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const FINAL_RESAMPLE: u64 = 4;
    pub const SWEEP_CELL: u64 = 5;
    pub const BATCH: u64 = 6;
    pub const HARNESS: u64 = 7;
}

/// Deterministic generator for the stream keyed by (seed, tag, a, b).
pub fn stream_rng(seed: u64, tag: u64, a: u64, b: u64) -> SmcRng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([seed, tag, a, b]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    SmcRng::from_seed(key)
}

/// Derive a child seed from (seed, tag, a).
pub fn derive_seed(seed: u64, tag: u64, a: u64) -> u64 {
    stream_rng(seed, tag, a, u64::MAX).random()
}

/// Metropolis–Hastings bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn merge(&mut self, other: MoveStats) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }

    /// Accepted fraction; 1 when nothing was proposed.
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// A sequence of distributions γ_τ ∝ π̃₀^(1-τ) (ℓπ)^τ.
pub trait AnnealedTarget: Sync {
    type State: Clone + Send + Sync;

    /// log π̃₀(state).
    fn reference_log_density(&self, state: &Self::State) -> f64;

    /// log ℓ(D | state) + log π(state).
    fn posterior_log_density(&self, state: &Self::State) -> f64;

    /// posterior minus reference; override when the difference can be
    /// formed without cancellation.
    fn log_density_gap(&self, state: &Self::State) -> f64 {
        self.posterior_log_density(state) - self.reference_log_density(state)
    }

    fn sample_reference(&self, rng: &mut SmcRng) -> Result<Self::State>;

    /// One application of a γ_τ-invariant kernel.
    fn propagate(&self, state: &mut Self::State, tau: f64, rng: &mut SmcRng) -> MoveStats;
}

/// How latent coordinates are proposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelScheme {
    /// One Gaussian random-walk proposal per selected object.
    RowWise,
    /// A single joint proposal for every selected coordinate together with σ² and ψ.
    Joint,
    /// One proposal per selected object from a Gauss-Newton approximation
    /// of its tempered conditional (Euclidean latent metric; the cosine
    /// metric uses random-walk rows).
    Newton,
}

/// Settings of the model-specific propagation kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Step-size constant; `None` means 2.38²/p.
    pub cstep: Option<f64>,
    /// Fraction of objects whose coordinates are updated per propagation.
    pub subset_fraction: f64,
    /// Kernel applications per propagation.
    pub sweeps: usize,
    pub scheme: KernelScheme,
    /// Distance-preserving whole-configuration moves per sweep.
    pub rigid_moves: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            cstep: None,
            subset_fraction: 1.0,
            sweeps: 1,
            scheme: KernelScheme::Newton,
            rigid_moves: 5,
        }
    }
}

/// Engine settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    /// Number of particles K.
    pub particles: usize,
    /// rCESS threshold φ.
    pub rcess_threshold: f64,
    /// Resampling threshold ε on rESS; 0 disables conditional resampling.
    pub ess_threshold: f64,
    pub seed: u64,
    /// Stopping tolerance of the bisection for τ.
    pub bisection_tol: f64,
    pub max_iterations: usize,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    pub threads: Option<usize>,
    pub kernel: KernelConfig,
    /// Keep per-iteration weight vectors in the output.
    pub record_trace: bool,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 200,
            rcess_threshold: 0.8,
            ess_threshold: 0.5,
            seed: 0,
            bisection_tol: 1e-10,
            max_iterations: 10_000,
            threads: None,
            kernel: KernelConfig::default(),
            record_trace: false,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GbmdsError::InvalidInput(m));
        if self.particles < 2 {
            return bad(format!("need at least 2 particles, got {}", self.particles));
        }
        let k = self.particles as f64;
        if !(self.rcess_threshold > 1.0 / k && self.rcess_threshold < 1.0) {
            return bad(format!(
                "rCESS threshold {} must lie in (1/K, 1)",
                self.rcess_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.ess_threshold) {
            return bad(format!("resampling threshold {} must lie in [0, 1]", self.ess_threshold));
        }
        if !(self.bisection_tol > 0.0) {
            return bad("bisection tolerance must be positive".into());
        }
        if self.max_iterations == 0 {
            return bad("iteration cap must be positive".into());
        }
        if !(self.kernel.subset_fraction > 0.0 && self.kernel.subset_fraction <= 1.0) {
            return bad(format!(
                "subset fraction {} must lie in (0, 1]",
                self.kernel.subset_fraction
            ));
        }
        if let Some(c) = self.kernel.cstep {
            if !(c > 0.0) || !c.is_finite() {
                return bad(format!("step constant {c} must be positive"));
            }
        }
        if self.kernel.sweeps == 0 {
            return bad("kernel sweeps must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("thread count must be positive".into());
        }
        Ok(())
    }
}

/// Weighted particles with their annealing history.
#[derive(Clone, Debug)]
pub struct ParticleCloud<S> {
    pub particles: Vec<S>,
    /// Normalized log-weights log W_k.
    pub log_weights: Vec<f64>,
    pub schedule: Vec<f64>,
    pub log_evidence: f64,
    pub iteration: usize,
}

impl<S> ParticleCloud<S> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn tau(&self) -> f64 {
        *self.schedule.last().unwrap_or(&0.0)
    }

    /// Normalized weights W_k.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn set_uniform_weights(&mut self) {
        let lw = -(self.particles.len() as f64).ln();
        self.log_weights.iter_mut().for_each(|w| *w = lw);
    }
}

/// One row of the per-iteration diagnostics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub tau: f64,
    /// rCESS achieved by the chosen τ.
    pub rcess: f64,
    /// rESS after reweighting, before any resampling.
    pub ress: f64,
    pub resampled: bool,
    pub acceptance_rate: f64,
    pub log_evidence: f64,
}

/// Weight vectors of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTrace {
    pub log_weights_prev: Vec<f64>,
    pub log_incremental: Vec<f64>,
}

/// Output of an engine run.
#[derive(Clone, Debug)]
pub struct SmcOutput<S> {
    pub cloud: ParticleCloud<S>,
    pub diagnostics: Vec<IterationRecord>,
    pub trace: Vec<WeightTrace>,
}

impl<S> SmcOutput<S> {
    pub fn log_evidence(&self) -> f64 {
        self.cloud.log_evidence
    }

    pub fn schedule(&self) -> &[f64] {
        &self.cloud.schedule
    }

    /// Mean acceptance rate over all iterations.
    pub fn mean_acceptance(&self) -> f64 {
        if self.diagnostics.is_empty() {
            return f64::NAN;
        }
        self.diagnostics.iter().map(|r| r.acceptance_rate).sum::<f64>() / self.diagnostics.len() as f64
    }
}

/// K independent reference draws with uniform weights at τ = 0.
pub fn initialize_particles<T: AnnealedTarget>(
    target: &T,
    k: usize,
    seed: u64,
) -> Result<ParticleCloud<T::State>> {
    if k < 2 {
        return Err(GbmdsError::InvalidInput(format!("need at least 2 particles, got {k}")));
    }
    let particles = (0..k)
        .into_par_iter()
        .map(|i| target.sample_reference(&mut stream_rng(seed, stream::INIT, i as u64, 0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticleCloud {
        particles,
        log_weights: vec![-(k as f64).ln(); k],
        schedule: vec![0.0],
        log_evidence: 0.0,
        iteration: 0,
    })
}

/// Per-particle log-density gaps (posterior minus reference).
pub fn density_gaps<T: AnnealedTarget>(
    target: &T,
    cloud: &ParticleCloud<T::State>,
) -> Vec<f64> {
    cloud
        .particles
        .par_iter()
        .map(|s| target.log_density_gap(s))
        .collect()
}

/// log w̃_k = Δτ·gap_k, with 0 when Δτ = 0.
pub fn scale_gaps(gaps: &[f64], dtau: f64) -> Vec<f64> {
    if dtau == 0.0 {
        return vec![0.0; gaps.len()];
    }
    gaps.iter().map(|g| dtau * g).collect()
}

/// Incremental log-weights of moving the cloud's current states by Δτ.
pub fn incremental_log_weights<T: AnnealedTarget>(
    cloud: &ParticleCloud<T::State>,
    dtau: f64,
    target: &T,
) -> Result<Vec<f64>> {
    if !(dtau >= 0.0 && dtau <= 1.0 - cloud.tau() + 1e-15) {
        return Err(GbmdsError::InvalidInput(format!("increment {dtau} outside [0, 1 - τ]")));
    }
    let gaps = density_gaps(target, cloud);
    if gaps.iter().any(|g| g.is_nan()) {
        return Err(GbmdsError::NonFiniteDensity {
            iteration: cloud.iteration,
        });
    }
    Ok(scale_gaps(&gaps, dtau))
}

/// Relative conditional ESS (Σ W w̃)² / Σ W w̃², from log W and log w̃.
/// NaN when every w̃ is zero.
pub fn rcess(log_w: &[f64], log_incr: &[f64]) -> f64 {
    let mut a = Vec::with_capacity(log_w.len());
    let mut b = Vec::with_capacity(log_w.len());
    for (w, g) in log_w.iter().zip(log_incr) {
        a.push(w + g);
        b.push(w + 2.0 * g);
    }
    let la = log_sum_exp(&a);
    let lb = log_sum_exp(&b);
    if la == f64::NEG_INFINITY {
        return f64::NAN;
    }
    (2.0 * la - lb).exp().min(1.0)
}

/// Relative ESS 1/(K ΣW²) from normalized log-weights.
pub fn ress(log_w: &[f64]) -> f64 {
    let s: f64 = log_w.iter().map(|w| (2.0 * w).exp()).sum();
    1.0 / (log_w.len() as f64 * s)
}

/// Next annealing parameter: 1 if rCESS(1) ≥ φ, otherwise the bisection
/// root of rCESS(τ) = φ on (τ_prev, 1]. Returns (τ, rCESS(τ)).
pub fn next_tau(log_w: &[f64], gaps: &[f64], tau_prev: f64, phi: f64, tol: f64) -> (f64, f64) {
    let f = |t: f64| {
        let v = rcess(log_w, &scale_gaps(gaps, t - tau_prev));
        if v.is_nan() {
            0.0
        } else {
            v
        }
    };
    let at_one = f(1.0);
    if at_one >= phi {
        return (1.0, at_one);
    }
    let mut lo = tau_prev;
    let mut hi = 1.0;
    let mut f_lo = 1.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if (fm - phi).abs() <= tol {
            return (mid, fm);
        }
        if fm > phi {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    if lo > tau_prev {
        (lo, f_lo)
    } else {
        (hi, f(hi))
    }
}

/// K iid categorical draws from normalized weights.
pub fn multinomial_indices(weights: &[f64], k: usize, rng: &mut SmcRng) -> Vec<usize> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    let total = acc;
    let last = weights.len() - 1;
    (0..k)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            cum.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

/// Multinomial resampling; weights reset to 1/K.
pub fn multinomial_resample<S: Clone>(cloud: &mut ParticleCloud<S>, rng: &mut SmcRng) {
    let k = cloud.particles.len();
    let idx = multinomial_indices(&cloud.weights(), k, rng);
    cloud.particles = idx.iter().map(|&i| cloud.particles[i].clone()).collect();
    cloud.set_uniform_weights();
}

/// Adaptive annealed SMC: τ is chosen each iteration so that rCESS = φ.
pub fn run_asmc<T: AnnealedTarget>(target: &T, config: &SmcConfig) -> Result<SmcOutput<T::State>> {
    config.validate()?;
    with_pool(config, || run_inner(target, config, None))
}

/// Annealed SMC along a fixed schedule 0 = τ_0 < … < τ_R = 1.
pub fn run_asmc_fixed<T: AnnealedTarget>(
    target: &T,
    config: &SmcConfig,
    schedule: &[f64],
) -> Result<SmcOutput<T::State>> {
    config.validate()?;
    let ok = schedule.len() >= 2
        && schedule[0] == 0.0
        && *schedule.last().unwrap() == 1.0
        && schedule.windows(2).all(|w| w[1] > w[0]);
    if !ok {
        return Err(GbmdsError::InvalidInput(
            "schedule must increase strictly from 0 to 1".into(),
        ));
    }
    with_pool(config, || run_inner(target, config, Some(schedule)))
}

fn with_pool<R: Send>(config: &SmcConfig, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    match config.threads {
        None => f(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| GbmdsError::InvalidInput(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn run_inner<T: AnnealedTarget>(
    target: &T,
    config: &SmcConfig,
    fixed: Option<&[f64]>,
) -> Result<SmcOutput<T::State>> {
    let k = config.particles;
    let mut cloud = initialize_particles(target, k, config.seed)?;
    let mut diagnostics = Vec::new();
    let mut trace = Vec::new();

    while cloud.tau() < 1.0 {
        let r = cloud.iteration + 1;
        if r > config.max_iterations {
            return Err(GbmdsError::IterationCap {
                cap: config.max_iterations,
            });
        }
        let tau_prev = cloud.tau();
        let gaps = density_gaps(target, &cloud);
        if gaps.iter().any(|g| g.is_nan()) {
            return Err(GbmdsError::NonFiniteDensity { iteration: r });
        }
        let (tau, achieved) = match fixed {
            Some(s) => {
                let t = s[r];
                (t, rcess(&cloud.log_weights, &scale_gaps(&gaps, t - tau_prev)))
            }
            None => next_tau(
                &cloud.log_weights,
                &gaps,
                tau_prev,
                config.rcess_threshold,
                config.bisection_tol,
            ),
        };
        let incr = scale_gaps(&gaps, tau - tau_prev);
        let num: Vec<f64> = cloud.log_weights.iter().zip(&incr).map(|(w, g)| w + g).collect();
        let lse = log_sum_exp(&num);
        if !lse.is_finite() {
            return Err(GbmdsError::NonFiniteDensity { iteration: r });
        }
        if config.record_trace {
            trace.push(WeightTrace {
                log_weights_prev: cloud.log_weights.clone(),
                log_incremental: incr.clone(),
            });
        }
        cloud.log_evidence += lse;
        cloud.log_weights = num.iter().map(|v| v - lse).collect();
        cloud.schedule.push(tau);
        cloud.iteration = r;

        let seed = config.seed;
        let stats = cloud
            .particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = stream_rng(seed, stream::PROPAGATE, i as u64, r as u64);
                target.propagate(s, tau, &mut rng)
            })
            .collect::<Vec<_>>();
        let mut moves = MoveStats::default();
        stats.into_iter().for_each(|s| moves.merge(s));

        let current_ress = ress(&cloud.log_weights);
        let resampled = current_ress < config.ess_threshold;
        if resampled {
            let mut rng = stream_rng(seed, stream::RESAMPLE, 0, r as u64);
            multinomial_resample(&mut cloud, &mut rng);
        }
        log::debug!(
            "iteration {r}: tau = {tau:.6e}, rcess = {achieved:.4}, ress = {current_ress:.4}, accept = {:.3}",
            moves.rate()
        );
        diagnostics.push(IterationRecord {
            iteration: r,
            tau,
            rcess: achieved,
            ress: current_ress,
            resampled,
            acceptance_rate: moves.rate(),
            log_evidence: cloud.log_evidence,
        });
    }
    let mut rng = stream_rng(config.seed, stream::FINAL_RESAMPLE, 0, 0);
    multinomial_resample(&mut cloud, &mut rng);
    Ok(SmcOutput {
        cloud,
        diagnostics,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rcess_examples() {
        let lw = [0.5f64.ln(), 0.5f64.ln()];
        let v = rcess(&lw, &[0.0, 3f64.ln()]);
        assert!((v - 0.8).abs() < 1e-15);
        assert_eq!(rcess(&lw, &[1.3, 1.3]), 1.0);
        let single = [0.0, f64::NEG_INFINITY];
        assert_eq!(rcess(&single, &[0.2, 5.0]), 1.0);
        assert!(rcess(&lw, &[f64::NEG_INFINITY; 2]).is_nan());
    }

    #[test]
    fn ress_examples() {
        let k = 4;
        let uniform = vec![-(k as f64).ln(); k];
        assert!((ress(&uniform) - 1.0).abs() < 1e-15);
        let one = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!((ress(&one) - 1.0 / 3.0).abs() < 1e-15);
        let v = ress(&[0.8f64.ln(), 0.2f64.ln()]);
        assert!((v - 1.0 / (2.0 * 0.68)).abs() < 1e-12);
    }

    #[test]
    fn incremental_weights_arithmetic() {
        let w = scale_gaps(&[0.0, 2f64.ln()], 1.0);
        assert_eq!(w[0].exp(), 1.0);
        assert!((w[1].exp() - 2.0).abs() < 1e-15);
        assert_eq!(scale_gaps(&[f64::NEG_INFINITY, 3.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn next_tau_identical_gaps() {
        let lw = vec![-(3f64).ln(); 3];
        assert_eq!(next_tau(&lw, &[5.0; 3], 0.0, 0.8, 1e-10).0, 1.0);
    }

    #[test]
    fn point_mass_resample() {
        let mut cloud = ParticleCloud {
            particles: vec![0, 1, 2],
            log_weights: vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY],
            schedule: vec![0.0],
            log_evidence: 0.0,
            iteration: 0,
        };
        multinomial_resample(&mut cloud, &mut stream_rng(1, 0, 0, 0));
        assert_eq!(cloud.particles, vec![1, 1, 1]);
        assert!(cloud.weights().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn streams_are_distinct() {
        let a: u64 = stream_rng(1, 2, 3, 4).random();
        let b: u64 = stream_rng(1, 2, 4, 3).random();
        let c: u64 = stream_rng(1, 2, 3, 4).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn config_validation() {
        assert!(SmcConfig::default().validate().is_ok());
        let bad = SmcConfig {
            rcess_threshold: 1.0,
            ..SmcConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SmcConfig {
            particles: 1,
            ..SmcConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
