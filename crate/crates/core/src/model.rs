//! Likelihoods, priors and the annealed target for the three error models.
//!
//! All densities keep their normalizing constants so that marginal
//! likelihoods are comparable across families.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::cmds::{classical_mds, CmdsResult, Configuration};
use crate::dissimilarity::{cosine_unchecked, DissimilarityMatrix, Metric};
use crate::error::{GbmdsError, Result};
use crate::special::{log_norm_cdf, log_norm_diff, log_skew_normal_diff, LN_SQRT_2PI};

/// Replacement for observed dissimilarities that are exactly zero.
pub const ZERO_DISSIMILARITY: f64 = 1e-12;

/// Error distribution for the observed dissimilarities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Truncated normal.
    #[serde(rename = "tn")]
    Tn,
    /// Truncated skew-normal.
    #[serde(rename = "tsn")]
    Tsn,
    /// Truncated Student-t as a scale mixture of normals.
    #[serde(rename = "tt")]
    Tt,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Tn => "tn",
            Family::Tsn => "tsn",
            Family::Tt => "tt",
        }
    }

    pub fn has_shape(self) -> bool {
        self == Family::Tsn
    }

    pub fn has_mixture(self) -> bool {
        self == Family::Tt
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = GbmdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tn" => Ok(Family::Tn),
            "tsn" => Ok(Family::Tsn),
            "tt" => Ok(Family::Tt),
            other => Err(GbmdsError::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

/// Family, latent metric, latent dimension and truncation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub metric: Metric,
    pub dim: usize,
    pub upper: f64,
}

impl ModelSpec {
    pub fn new(family: Family, metric: Metric, dim: usize, upper: f64) -> Result<Self> {
        let spec = Self {
            family,
            metric,
            dim,
            upper,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.metric == Metric::Jaccard {
            return Err(GbmdsError::IncompatibleMetric {
                metric: "jaccard".into(),
                input: "latent coordinates".into(),
            });
        }
        if self.dim == 0 {
            return Err(GbmdsError::InvalidInput("dimension must be at least 1".into()));
        }
        if !(self.upper > 0.0) {
            return Err(GbmdsError::InvalidInput(format!(
                "upper bound {} must be positive",
                self.upper
            )));
        }
        Ok(())
    }
}

/// Prior hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Inverse-gamma shape for σ².
    pub a: f64,
    /// Inverse-gamma scale for σ².
    pub b: f64,
    /// Lower bound of the uniform prior on ψ.
    pub c: f64,
    /// Upper bound of the uniform prior on ψ.
    pub d: f64,
    /// Inverse-gamma shape for each λ_k.
    pub alpha: f64,
    /// Inverse-gamma scales for λ_k, one per latent coordinate.
    pub beta: Vec<f64>,
    /// Degrees of freedom of the Student-t mixture.
    pub nu: f64,
}

/// Floor applied to empirical-Bayes scales that would otherwise be zero.
pub const SCALE_FLOOR: f64 = 1e-10;

impl HyperParams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |what: &str| Err(GbmdsError::InvalidInput(format!("hyperparameter {what}")));
        if !(self.a > 0.0) || !(self.b > 0.0) {
            return bad("a and b must be positive");
        }
        if !(self.c < self.d) || !self.c.is_finite() || !self.d.is_finite() {
            return bad("c must be below d");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if self.beta.len() != dim {
            return Err(GbmdsError::LengthMismatch {
                left: self.beta.len(),
                right: dim,
            });
        }
        if self.beta.iter().any(|b| !(*b > 0.0)) {
            return bad("beta must be positive");
        }
        if !(self.nu > 0.0) {
            return bad("nu must be positive");
        }
        Ok(())
    }

    /// Empirical-Bayes defaults from a classical-scaling fit:
    /// a = 5, b = SSR/m, c = -2, d = 2, α = 1/2, β_k = half the sample
    /// variance of coordinate k, ν = 5.
    pub fn from_cmds(d: &DissimilarityMatrix, spec: &ModelSpec) -> Result<(Self, CmdsResult)> {
        let cmds = classical_mds(d, spec.dim)?;
        let hyper = Self::from_configuration(d, &cmds.config, spec)?;
        Ok((hyper, cmds))
    }

    pub fn from_configuration(
        d: &DissimilarityMatrix,
        x: &Configuration,
        spec: &ModelSpec,
    ) -> Result<Self> {
        let n = x.n();
        let m = (n * (n - 1) / 2) as f64;
        let mut delta = delta_matrix(x, spec.metric).unwrap_or_else(|_| {
            LatentDistances::from_delta(x.pairwise_euclidean())
        });
        let ssr = delta.fill_ssr(&d.lower_triangle())?;
        let mut b = ssr / m;
        if !(b > SCALE_FLOOR) {
            log::warn!("prior scale b = {b} floored at {SCALE_FLOOR}");
            b = SCALE_FLOOR;
        }
        let centroid = x.centroid();
        let beta = (0..x.p())
            .map(|k| {
                let var = x
                    .rows()
                    .map(|r| (r[k] - centroid[k]).powi(2))
                    .sum::<f64>()
                    / n as f64;
                let beta = 0.5 * var;
                if beta > SCALE_FLOOR {
                    beta
                } else {
                    log::warn!("prior scale beta_{k} = {beta} floored at {SCALE_FLOOR}");
                    SCALE_FLOOR
                }
            })
            .collect();
        Ok(Self {
            a: 5.0,
            b,
            c: -2.0,
            d: 2.0,
            alpha: 0.5,
            beta,
            nu: 5.0,
        })
    }
}

/// User overrides applied on top of the empirical-Bayes defaults. `beta`
/// sets every λ_k scale.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperOverrides {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub nu: Option<f64>,
}

impl HyperOverrides {
    pub fn apply(&self, h: &mut HyperParams) {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut h.a, self.a);
        set(&mut h.b, self.b);
        set(&mut h.c, self.c);
        set(&mut h.d, self.d);
        set(&mut h.alpha, self.alpha);
        set(&mut h.nu, self.nu);
        if let Some(b) = self.beta {
            h.beta.iter_mut().for_each(|v| *v = b);
        }
    }
}

/// One posterior sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub x: Configuration,
    pub sigma2: f64,
    /// Skewness; pinned to 0 outside the skew-normal family.
    pub psi: f64,
    /// Mixture precisions in pair order; empty outside the Student-t family.
    pub zeta: Vec<f64>,
    /// Prior variances of the latent coordinates.
    pub lambda: Vec<f64>,
}

/// Position of pair (i, j), i > j, in lower-triangle order.
#[inline]
pub fn pair_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

/// Distance between two latent points.
#[inline]
pub fn latent_distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    match metric {
        Metric::Euclidean => Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        Metric::Cosine => cosine_unchecked(a, b)
            .map(|v| v.max(0.0))
            .ok_or(GbmdsError::ZeroNorm),
        Metric::Jaccard => Err(GbmdsError::IncompatibleMetric {
            metric: "jaccard".into(),
            input: "latent coordinates".into(),
        }),
    }
}

/// Latent distances δ_ij in pair order, with the residual sum of squares
/// once observed dissimilarities are supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistances {
    pub delta: Vec<f64>,
    pub ssr: Option<f64>,
}

impl LatentDistances {
    pub fn from_delta(delta: Vec<f64>) -> Self {
        Self { delta, ssr: None }
    }

    pub fn pair_count(&self) -> usize {
        self.delta.len()
    }

    /// Compute and store Σ(d_ij - δ_ij)².
    pub fn fill_ssr(&mut self, d_pairs: &[f64]) -> Result<f64> {
        if d_pairs.len() != self.delta.len() {
            return Err(GbmdsError::LengthMismatch {
                left: d_pairs.len(),
                right: self.delta.len(),
            });
        }
        let ssr = sum_sq_residual(d_pairs, &self.delta);
        self.ssr = Some(ssr);
        Ok(ssr)
    }
}

pub(crate) fn sum_sq_residual(d: &[f64], delta: &[f64]) -> f64 {
    d.iter().zip(delta).map(|(d, e)| (d - e) * (d - e)).sum()
}

/// δ_ij = metric(x_i, x_j) for all i > j.
pub fn delta_matrix(x: &Configuration, metric: Metric) -> Result<LatentDistances> {
    let n = x.n();
    let mut delta = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 1..n {
        for j in 0..i {
            delta.push(latent_distance(x.row(i), x.row(j), metric).map_err(|e| e.at_pair(i, j))?);
        }
    }
    Ok(LatentDistances::from_delta(delta))
}

/// Observed dissimilarities in pair order, validated against the support (0, U].
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedPairs {
    pub n: usize,
    pub values: Vec<f64>,
}

impl ObservedPairs {
    pub fn new(d: &DissimilarityMatrix, upper: f64) -> Result<Self> {
        let mut values = d.lower_triangle();
        let mut zeros = 0usize;
        for (k, v) in values.iter_mut().enumerate() {
            if *v > upper {
                let (i, j) = pair_from_index(k);
                return Err(GbmdsError::InvalidInput(format!(
                    "dissimilarity {v} at ({i}, {j}) exceeds upper bound {upper}"
                )));
            }
            if *v == 0.0 {
                *v = ZERO_DISSIMILARITY;
                zeros += 1;
            }
        }
        if zeros > 0 {
            log::warn!("{zeros} zero dissimilarities replaced by {ZERO_DISSIMILARITY}");
        }
        Ok(Self { n: d.n(), values })
    }

    /// Pairs among the first `k` objects.
    pub fn leading(&self, k: usize) -> Self {
        Self {
            n: k,
            values: self.values[..k * (k - 1) / 2].to_vec(),
        }
    }
}

/// Inverse of [`pair_index`].
pub fn pair_from_index(k: usize) -> (usize, usize) {
    let mut i = (((8 * k + 1) as f64).sqrt() as usize).div_ceil(2);
    while i * (i - 1) / 2 > k {
        i -= 1;
    }
    while (i + 1) * i / 2 <= k {
        i += 1;
    }
    (i, k - i * (i - 1) / 2)
}

/// log F(x) for the skew-normal with location `loc`, scale `scale` and shape `shape`.
pub fn log_skew_normal_cdf(x: f64, loc: f64, scale: f64, shape: f64) -> f64 {
    crate::special::log_skew_normal_cdf((x - loc) / scale, shape)
}

/// Log density of one observation under the skew-normal truncated to (0, U).
#[inline]
pub fn tsn_pair_log_density(d: f64, delta: f64, sigma: f64, psi: f64, upper: f64) -> f64 {
    let z = (d - delta) / sigma;
    let lo = -delta / sigma;
    let hi = (upper - delta) / sigma;
    let norm = log_skew_normal_diff(lo, hi, psi);
    let skew = if psi == 0.0 {
        0.0
    } else {
        LN_2 + log_norm_cdf(psi * z)
    };
    -sigma.ln() - LN_SQRT_2PI - 0.5 * z * z + skew - norm
}

/// Log density of one observation under N(δ, σ²/ζ) truncated to (0, U).
#[inline]
pub fn tt_pair_log_density(d: f64, delta: f64, sigma: f64, zeta: f64, upper: f64) -> f64 {
    let s = sigma / zeta.sqrt();
    let z = (d - delta) / s;
    let norm = log_norm_diff(-delta / s, (upper - delta) / s);
    -s.ln() - LN_SQRT_2PI - 0.5 * z * z - norm
}

/// log of the truncation normalizer Φ((U-δ)√ζ/σ) - Φ(-δ√ζ/σ).
#[inline]
pub(crate) fn tt_log_normalizer(delta: f64, sigma: f64, zeta: f64, upper: f64) -> f64 {
    let s = sigma / zeta.sqrt();
    log_norm_diff(-delta / s, (upper - delta) / s)
}

fn checked_sum<F>(m: usize, mut term: F) -> Result<f64>
where
    F: FnMut(usize) -> f64,
{
    let mut total = 0.0;
    for k in 0..m {
        let t = term(k);
        if !t.is_finite() {
            let (i, j) = pair_from_index(k);
            return Err(GbmdsError::NormalizerUnderflow { i, j });
        }
        total += t;
    }
    Ok(total)
}

/// Skew-normal log-likelihood from pairwise quantities.
pub fn log_lik_tsn_pairs(d: &[f64], delta: &[f64], sigma2: f64, psi: f64, upper: f64) -> Result<f64> {
    if d.len() != delta.len() {
        return Err(GbmdsError::LengthMismatch {
            left: d.len(),
            right: delta.len(),
        });
    }
    let sigma = sigma2.sqrt();
    checked_sum(d.len(), |k| tsn_pair_log_density(d[k], delta[k], sigma, psi, upper))
}

/// Student-t mixture log-likelihood from pairwise quantities.
pub fn log_lik_tt_pairs(
    d: &[f64],
    delta: &[f64],
    sigma2: f64,
    zeta: &[f64],
    upper: f64,
) -> Result<f64> {
    if d.len() != delta.len() || d.len() != zeta.len() {
        return Err(GbmdsError::LengthMismatch {
            left: d.len(),
            right: delta.len().min(zeta.len()),
        });
    }
    let sigma = sigma2.sqrt();
    checked_sum(d.len(), |k| tt_pair_log_density(d[k], delta[k], sigma, zeta[k], upper))
}

/// Truncated skew-normal log-likelihood of D given X, σ² and ψ.
pub fn log_lik_tsn(
    d: &DissimilarityMatrix,
    x: &Configuration,
    metric: Metric,
    sigma2: f64,
    psi: f64,
    upper: f64,
) -> Result<f64> {
    let obs = ObservedPairs::new(d, upper)?;
    let delta = delta_matrix(x, metric)?;
    log_lik_tsn_pairs(&obs.values, &delta.delta, sigma2, psi, upper)
}

/// Truncated Student-t mixture log-likelihood of D given X, σ² and ζ.
pub fn log_lik_tt(
    d: &DissimilarityMatrix,
    x: &Configuration,
    metric: Metric,
    sigma2: f64,
    zeta: &[f64],
    upper: f64,
) -> Result<f64> {
    let obs = ObservedPairs::new(d, upper)?;
    let delta = delta_matrix(x, metric)?;
    log_lik_tt_pairs(&obs.values, &delta.delta, sigma2, zeta, upper)
}

/// Log-likelihood of `state` under `spec`.
pub fn log_lik(d: &DissimilarityMatrix, state: &ParticleState, spec: &ModelSpec) -> Result<f64> {
    match spec.family {
        Family::Tn => log_lik_tsn(d, &state.x, spec.metric, state.sigma2, 0.0, spec.upper),
        Family::Tsn => log_lik_tsn(d, &state.x, spec.metric, state.sigma2, state.psi, spec.upper),
        Family::Tt => log_lik_tt(d, &state.x, spec.metric, state.sigma2, &state.zeta, spec.upper),
    }
}

/// log N(x; 0, diag(λ)).
#[inline]
pub fn log_normal_diag(x: &[f64], lambda: &[f64]) -> f64 {
    x.iter()
        .zip(lambda)
        .map(|(x, l)| -LN_SQRT_2PI - 0.5 * l.ln() - 0.5 * x * x / l)
        .sum()
}

/// Inverse-gamma log density with shape `a` and scale `b`.
#[inline]
pub fn log_inv_gamma(v: f64, a: f64, b: f64) -> f64 {
    if !(v > 0.0) {
        return f64::NEG_INFINITY;
    }
    a * b.ln() - ln_gamma(a) - (a + 1.0) * v.ln() - b / v
}

/// Gamma log density with shape `k` and rate `r`.
#[inline]
pub fn log_gamma_density(v: f64, k: f64, r: f64) -> f64 {
    if !(v > 0.0) {
        return f64::NEG_INFINITY;
    }
    k * r.ln() - ln_gamma(k) + (k - 1.0) * v.ln() - r * v
}

/// log U(ψ; c, d).
#[inline]
pub fn log_uniform(v: f64, c: f64, d: f64) -> f64 {
    if v < c || v > d {
        f64::NEG_INFINITY
    } else {
        -(d - c).ln()
    }
}

/// Log prior of everything except the latent coordinates.
pub fn log_prior_params(state: &ParticleState, hyper: &HyperParams, family: Family) -> f64 {
    let mut lp = log_inv_gamma(state.sigma2, hyper.a, hyper.b);
    if family.has_shape() {
        lp += log_uniform(state.psi, hyper.c, hyper.d);
    } else if state.psi != 0.0 {
        return f64::NEG_INFINITY;
    }
    if family.has_mixture() {
        let k = 0.5 * hyper.nu;
        lp += state.zeta.iter().map(|&z| log_gamma_density(z, k, k)).sum::<f64>();
    }
    lp += state
        .lambda
        .iter()
        .zip(&hyper.beta)
        .map(|(&l, &b)| log_inv_gamma(l, hyper.alpha, b))
        .sum::<f64>();
    lp
}

/// Joint log prior; -∞ outside the support.
pub fn log_prior(state: &ParticleState, hyper: &HyperParams, family: Family) -> f64 {
    if state.lambda.iter().any(|l| !(*l > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let lx: f64 = state.x.rows().map(|r| log_normal_diag(r, &state.lambda)).sum();
    lx + log_prior_params(state, hyper, family)
}

/// τ·(log-likelihood + log prior) + (1-τ)·reference.
pub fn annealed_log_target<R>(
    state: &ParticleState,
    tau: f64,
    reference: R,
    d: &DissimilarityMatrix,
    spec: &ModelSpec,
    hyper: &HyperParams,
) -> Result<f64>
where
    R: Fn(&ParticleState) -> f64,
{
    if !(0.0..=1.0).contains(&tau) {
        return Err(GbmdsError::InvalidInput(format!("annealing parameter {tau} outside [0, 1]")));
    }
    let reference = reference(state);
    if tau == 0.0 {
        return Ok(reference);
    }
    let post = log_lik(d, state, spec)? + log_prior(state, hyper, spec.family);
    if tau == 1.0 {
        return Ok(post);
    }
    Ok(tau * post + (1.0 - tau) * reference)
}
