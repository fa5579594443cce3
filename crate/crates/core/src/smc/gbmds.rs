//! The Bayesian MDS posterior as an annealed target.
//!
//! Reference: old objects ~ N(c_i, Σ), new objects and all parameters from
//! their priors. Each propagation applies, in order, a Gibbs update of Λ, an
//! update of the mixture precisions ζ (Student-t family), random-walk
//! Metropolis moves on the latent coordinates, and a joint random-walk move
//! on (σ², ψ). Every step leaves the tempered target invariant.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{AnnealedTarget, KernelConfig, KernelScheme, MoveStats, SmcRng};
use crate::cmds::Configuration;
use crate::dissimilarity::{DissimilarityMatrix, Metric};
use crate::error::{GbmdsError, Result};
use crate::model::{
    latent_distance, log_inv_gamma, log_normal_diag, log_prior, log_prior_params, log_uniform,
    pair_index, sum_sq_residual, tsn_pair_log_density, tt_log_normalizer, tt_pair_log_density,
    Family, HyperParams, ModelSpec, ObservedPairs, ParticleState,
};
use crate::special::LN_SQRT_2PI;

/// Standard deviation of the random-walk proposal for ψ.
pub const PSI_STEP_SD: f64 = 0.1;

/// Step scales of the rigid moves; each proposal picks one uniformly. A
/// rotation generator entry has this standard deviation, and a shift has ten
/// times this many prior standard deviations of the centroid.
const RIGID_SCALES: [f64; 5] = [0.003, 0.01, 0.03, 0.1, 0.3];


/// Gaussian reference for the first `n_old` objects: N(c_i, Σ) with shared Σ.
#[derive(Clone, Debug)]
pub struct LatentReference {
    centers: Configuration,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    prec: DMatrix<f64>,
    log_det: f64,
}

impl LatentReference {
    pub fn new(centers: Configuration, cov: DMatrix<f64>) -> Result<Self> {
        let p = centers.p();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(GbmdsError::LengthMismatch {
                left: cov.nrows(),
                right: p,
            });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| GbmdsError::InvalidInput("reference covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let prec = chol.inverse();
        Ok(Self {
            centers,
            cov,
            chol: l,
            prec,
            log_det,
        })
    }

    /// N(c_i, var·I) for every object.
    pub fn isotropic(centers: Configuration, var: f64) -> Result<Self> {
        let p = centers.p();
        Self::new(centers, DMatrix::identity(p, p) * var)
    }

    pub fn n_old(&self) -> usize {
        self.centers.n()
    }

    pub fn centers(&self) -> &Configuration {
        &self.centers
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// log N(x; c_i, Σ).
    pub fn log_density_row(&self, i: usize, x: &[f64]) -> f64 {
        let c = self.centers.row(i);
        let p = x.len();
        let mut quad = 0.0;
        for a in 0..p {
            let da = x[a] - c[a];
            for b in 0..p {
                quad += da * self.prec[(a, b)] * (x[b] - c[b]);
            }
        }
        -(p as f64) * LN_SQRT_2PI - 0.5 * self.log_det - 0.5 * quad
    }

    fn sample_row(&self, i: usize, rng: &mut SmcRng, out: &mut [f64]) {
        let p = out.len();
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let c = self.centers.row(i);
        for a in 0..p {
            let mut v = c[a];
            for b in 0..=a {
                v += self.chol[(a, b)] * z[b];
            }
            out[a] = v;
        }
    }
}

/// A particle with cached latent distances and per-pair log-likelihood terms.
#[derive(Clone, Debug)]
pub struct GbmdsParticle {
    state: ParticleState,
    delta: Vec<f64>,
    terms: Vec<f64>,
    log_lik: f64,
}

impl GbmdsParticle {
    pub fn state(&self) -> &ParticleState {
        &self.state
    }

    pub fn into_state(self) -> ParticleState {
        self.state
    }

    /// Latent distances in pair order.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn log_lik(&self) -> f64 {
        self.log_lik
    }
}

/// The annealed posterior of one model on one dissimilarity matrix.
#[derive(Clone, Debug)]
pub struct GbmdsTarget {
    spec: ModelSpec,
    hyper: HyperParams,
    obs: ObservedPairs,
    reference: LatentReference,
    kernel: KernelConfig,
    cstep: f64,
}

impl GbmdsTarget {
    pub fn new(
        d: &DissimilarityMatrix,
        spec: ModelSpec,
        hyper: HyperParams,
        reference: LatentReference,
        kernel: KernelConfig,
    ) -> Result<Self> {
        spec.validate()?;
        hyper.validate(spec.dim)?;
        let n = d.n();
        if spec.dim > n - 1 {
            return Err(GbmdsError::InvalidInput(format!(
                "dimension {} must be below the number of objects {n}",
                spec.dim
            )));
        }
        if reference.n_old() > n || reference.centers.p() != spec.dim {
            return Err(GbmdsError::InvalidInput(
                "reference does not match the data or the dimension".into(),
            ));
        }
        let obs = ObservedPairs::new(d, spec.upper)?;
        let cstep = kernel.cstep.unwrap_or(2.38 * 2.38 / spec.dim as f64);
        Ok(Self {
            spec,
            hyper,
            obs,
            reference,
            kernel,
            cstep,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn reference(&self) -> &LatentReference {
        &self.reference
    }

    pub fn n(&self) -> usize {
        self.obs.n
    }

    pub fn observed(&self) -> &[f64] {
        &self.obs.values
    }

    pub fn cstep(&self) -> f64 {
        self.cstep
    }

    #[inline]
    fn pair_term(&self, k: usize, delta: f64, sigma: f64, psi: f64, zeta: &[f64]) -> f64 {
        let d = self.obs.values[k];
        let t = match self.spec.family {
            Family::Tn => tsn_pair_log_density(d, delta, sigma, 0.0, self.spec.upper),
            Family::Tsn => tsn_pair_log_density(d, delta, sigma, psi, self.spec.upper),
            Family::Tt => tt_pair_log_density(d, delta, sigma, zeta[k], self.spec.upper),
        };
        if t.is_nan() {
            f64::NEG_INFINITY
        } else {
            t
        }
    }

    /// Wrap a state, computing its distance and likelihood caches.
    pub fn particle(&self, state: ParticleState) -> Result<GbmdsParticle> {
        let n = self.n();
        if state.x.n() != n || state.x.p() != self.spec.dim {
            return Err(GbmdsError::InvalidInput("state shape does not match the target".into()));
        }
        let m = n * (n - 1) / 2;
        if self.spec.family.has_mixture() && state.zeta.len() != m {
            return Err(GbmdsError::LengthMismatch {
                left: state.zeta.len(),
                right: m,
            });
        }
        let mut delta = Vec::with_capacity(m);
        for i in 1..n {
            for j in 0..i {
                delta.push(
                    latent_distance(state.x.row(i), state.x.row(j), self.spec.metric)
                        .map_err(|e| e.at_pair(i, j))?,
                );
            }
        }
        let sigma = state.sigma2.sqrt();
        let terms: Vec<f64> = (0..m)
            .map(|k| self.pair_term(k, delta[k], sigma, state.psi, &state.zeta))
            .collect();
        let log_lik = terms.iter().sum();
        Ok(GbmdsParticle {
            state,
            delta,
            terms,
            log_lik,
        })
    }

    fn log_prior_row(&self, x: &[f64], lambda: &[f64]) -> f64 {
        log_normal_diag(x, lambda)
    }

    /// Σ over old objects of log N(x_i; 0, Λ) - log N(x_i; c_i, Σ).
    fn old_block_gap(&self, s: &ParticleState) -> f64 {
        (0..self.reference.n_old())
            .map(|i| {
                let x = s.x.row(i);
                self.log_prior_row(x, &s.lambda) - self.reference.log_density_row(i, x)
            })
            .sum()
    }

    /// Log-density of row i under the tempered target, excluding likelihood terms.
    fn row_log_weight(&self, i: usize, x: &[f64], lambda: &[f64], tau: f64) -> f64 {
        let prior = self.log_prior_row(x, lambda);
        if i < self.reference.n_old() {
            tau * prior + (1.0 - tau) * self.reference.log_density_row(i, x)
        } else {
            prior
        }
    }

    fn gibbs_lambda(&self, s: &mut ParticleState, tau: f64, rng: &mut SmcRng) {
        let n_old = self.reference.n_old();
        let n = self.n();
        let p = self.spec.dim;
        for k in 0..p {
            let mut ss_old = 0.0;
            let mut ss_new = 0.0;
            for i in 0..n {
                let v = s.x.row(i)[k];
                if i < n_old {
                    ss_old += v * v;
                } else {
                    ss_new += v * v;
                }
            }
            let shape = self.hyper.alpha + 0.5 * (tau * n_old as f64 + (n - n_old) as f64);
            let scale = self.hyper.beta[k] + 0.5 * (tau * ss_old + ss_new);
            s.lambda[k] = sample_inv_gamma(shape, scale, rng);
        }
    }

    fn update_zeta(&self, p: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let mut stats = MoveStats::default();
        let sigma2 = p.state.sigma2;
        let sigma = sigma2.sqrt();
        let half_nu = 0.5 * self.hyper.nu;
        let shape = 0.5 * (tau + self.hyper.nu);
        let upper = self.spec.upper;
        for k in 0..p.terms.len() {
            let r = self.obs.values[k] - p.delta[k];
            let rate = tau * r * r / (2.0 * sigma2) + half_nu;
            let proposal = sample_gamma(shape, rate, rng);
            if !(proposal > 0.0) {
                stats.record(false);
                continue;
            }
            let current = p.state.zeta[k];
            let log_alpha = if tau == 0.0 {
                0.0
            } else {
                -tau * (tt_log_normalizer(p.delta[k], sigma, proposal, upper)
                    - tt_log_normalizer(p.delta[k], sigma, current, upper))
            };
            let accept = accept_mh(log_alpha, rng);
            if accept {
                p.state.zeta[k] = proposal;
                p.terms[k] = self.pair_term(k, p.delta[k], sigma, p.state.psi, &p.state.zeta);
            }
            stats.record(accept);
        }
        stats
    }

    fn selected_rows(&self, rng: &mut SmcRng) -> Vec<usize> {
        let n = self.n();
        if self.kernel.subset_fraction >= 1.0 {
            return (0..n).collect();
        }
        let count = ((self.kernel.subset_fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut rows = sample_indices(rng, n, count).into_vec();
        rows.sort_unstable();
        rows
    }

    /// Gaussian approximation N(μ, P⁻¹) of row i's tempered conditional,
    /// linearized at `x`: P from the Gauss-Newton curvature of the
    /// likelihood plus the prior/reference precision, μ one Newton step
    /// from `x`. Returns (μ, Cholesky factor of P).
    fn row_gaussian(
        &self,
        p: &GbmdsParticle,
        i: usize,
        x: &[f64],
        tau: f64,
    ) -> Option<(DVector<f64>, nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>)> {
        let n = self.n();
        let dim = self.spec.dim;
        let mut prec = DMatrix::<f64>::zeros(dim, dim);
        let mut grad = DVector::<f64>::zeros(dim);
        let lambda = &p.state.lambda;
        let old = i < self.reference.n_old();
        let w_prior = if old { tau } else { 1.0 };
        for k in 0..dim {
            prec[(k, k)] += w_prior / lambda[k];
            grad[k] -= w_prior * x[k] / lambda[k];
        }
        if old && tau < 1.0 {
            let c = self.reference.centers.row(i);
            let rp = &self.reference.prec;
            for a in 0..dim {
                for b in 0..dim {
                    prec[(a, b)] += (1.0 - tau) * rp[(a, b)];
                    grad[a] -= (1.0 - tau) * rp[(a, b)] * (x[b] - c[b]);
                }
            }
        }
        if tau > 0.0 {
            let inv_s2 = tau / p.state.sigma2;
            let mixture = self.spec.family.has_mixture();
            let mut g = vec![0.0; dim];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let k = if i > j { pair_index(i, j) } else { pair_index(j, i) };
                let xj = p.state.x.row(j);
                let mut dist2 = 0.0;
                for a in 0..dim {
                    g[a] = x[a] - xj[a];
                    dist2 += g[a] * g[a];
                }
                if !(dist2 > 0.0) {
                    continue;
                }
                let dist = dist2.sqrt();
                let w = if mixture { inv_s2 * p.state.zeta[k] } else { inv_s2 };
                let r = self.obs.values[k] - dist;
                for a in 0..dim {
                    g[a] /= dist;
                    grad[a] += w * r * g[a];
                }
                for a in 0..dim {
                    for b in 0..dim {
                        prec[(a, b)] += w * g[a] * g[b];
                    }
                }
            }
        }
        let chol = prec.cholesky()?;
        let step = chol.solve(&grad);
        let mu = DVector::from_iterator(dim, x.iter().zip(step.iter()).map(|(a, b)| a + b));
        Some((mu, chol))
    }

    /// log N(y; μ, P⁻¹) up to a constant shared by both directions.
    fn row_gaussian_log_density(y: &[f64], mu: &DVector<f64>, chol: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>) -> f64 {
        let l = chol.l_dirty();
        let dim = y.len();
        // (y - μ)ᵀ L Lᵀ (y - μ) = |Lᵀ (y - μ)|²
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for a in 0..dim {
            let mut v = 0.0;
            for b in a..dim {
                v += l[(b, a)] * (y[b] - mu[b]);
            }
            quad += v * v;
            log_det += l[(a, a)].ln();
        }
        log_det - 0.5 * quad
    }

    fn newton_row_moves(&self, p: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let mut stats = MoveStats::default();
        let n = self.n();
        let dim = self.spec.dim;
        let sigma = p.state.sigma2.sqrt();
        let mut proposal = vec![0.0; dim];
        let mut new_delta = vec![0.0; n];
        let mut new_terms = vec![0.0; n];
        for i in self.selected_rows(rng) {
            let current: Vec<f64> = p.state.x.row(i).to_vec();
            let Some((mu, chol)) = self.row_gaussian(p, i, &current, tau) else {
                stats.record(false);
                continue;
            };
            // y = μ + L⁻ᵀ z has covariance P⁻¹.
            let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let dev = chol.l_dirty().transpose().solve_upper_triangular(&z).expect("positive diagonal");
            for a in 0..dim {
                proposal[a] = mu[a] + dev[a];
            }
            let Some((mu_rev, chol_rev)) = self.row_gaussian(p, i, &proposal, tau) else {
                stats.record(false);
                continue;
            };
            let log_fwd = Self::row_gaussian_log_density(&proposal, &mu, &chol);
            let log_rev = Self::row_gaussian_log_density(&current, &mu_rev, &chol_rev);
            let mut d_lik = 0.0;
            let mut valid = true;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let k = if i > j { pair_index(i, j) } else { pair_index(j, i) };
                let delta = match latent_distance(&proposal, p.state.x.row(j), self.spec.metric) {
                    Ok(v) => v,
                    Err(_) => {
                        valid = false;
                        break;
                    }
                };
                let t = self.pair_term(k, delta, sigma, p.state.psi, &p.state.zeta);
                new_delta[j] = delta;
                new_terms[j] = t;
                d_lik += t - p.terms[k];
            }
            if !valid || d_lik.is_nan() {
                stats.record(false);
                continue;
            }
            let d_row = self.row_log_weight(i, &proposal, &p.state.lambda, tau)
                - self.row_log_weight(i, &current, &p.state.lambda, tau);
            let d_lik = if tau == 0.0 { 0.0 } else { tau * d_lik };
            let accept = accept_mh(d_lik + d_row + log_rev - log_fwd, rng);
            if accept {
                p.state.x.row_mut(i).copy_from_slice(&proposal);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let k = if i > j { pair_index(i, j) } else { pair_index(j, i) };
                    p.delta[k] = new_delta[j];
                    p.terms[k] = new_terms[j];
                }
            }
            stats.record(accept);
        }
        stats
    }

    fn row_moves(&self, p: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let mut stats = MoveStats::default();
        let n = self.n();
        let dim = self.spec.dim;
        let sd = (self.cstep * p.state.sigma2 / (n - 1) as f64).sqrt();
        let sigma = p.state.sigma2.sqrt();
        let mut proposal = vec![0.0; dim];
        let mut new_delta = vec![0.0; n];
        let mut new_terms = vec![0.0; n];
        for i in self.selected_rows(rng) {
            let current = p.state.x.row(i);
            for (q, c) in proposal.iter_mut().zip(current) {
                *q = c + sd * rng.sample::<f64, _>(StandardNormal);
            }
            let mut d_lik = 0.0;
            let mut valid = true;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let k = if i > j { pair_index(i, j) } else { pair_index(j, i) };
                let delta = match latent_distance(&proposal, p.state.x.row(j), self.spec.metric) {
                    Ok(v) => v,
                    Err(_) => {
                        valid = false;
                        break;
                    }
                };
                let t = self.pair_term(k, delta, sigma, p.state.psi, &p.state.zeta);
                new_delta[j] = delta;
                new_terms[j] = t;
                d_lik += t - p.terms[k];
            }
            if !valid || d_lik.is_nan() {
                stats.record(false);
                continue;
            }
            let current = p.state.x.row(i);
            let d_row = self.row_log_weight(i, &proposal, &p.state.lambda, tau)
                - self.row_log_weight(i, current, &p.state.lambda, tau);
            let log_alpha = if tau == 0.0 { d_row } else { tau * d_lik + d_row };
            let accept = accept_mh(log_alpha, rng);
            if accept {
                p.state.x.row_mut(i).copy_from_slice(&proposal);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let k = if i > j { pair_index(i, j) } else { pair_index(j, i) };
                    p.delta[k] = new_delta[j];
                    p.terms[k] = new_terms[j];
                }
            }
            stats.record(accept);
        }
        stats
    }

    /// Rotations about the origin and, under the Euclidean metric, shifts of
    /// the whole configuration. Latent distances are unchanged, so only the
    /// coordinate prior and reference enter the acceptance ratio and the
    /// likelihood caches stay valid.
    fn rigid_moves(&self, p: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let mut stats = MoveStats::default();
        let n = self.n();
        let dim = self.spec.dim;
        let lambda = p.state.lambda.clone();
        let weight = |x: &Configuration| -> f64 {
            (0..n).map(|i| self.row_log_weight(i, x.row(i), &lambda, tau)).sum()
        };
        let mut current = weight(&p.state.x);
        for _ in 0..self.kernel.rigid_moves {
            let scale = RIGID_SCALES[rng.random_range(0..RIGID_SCALES.len())];
            if dim > 1 {
                let mut a = DMatrix::<f64>::zeros(dim, dim);
                for k in 0..dim {
                    for l in 0..k {
                        let v = scale * rng.sample::<f64, _>(StandardNormal);
                        a[(k, l)] = v;
                        a[(l, k)] = -v;
                    }
                }
                let eye = DMatrix::<f64>::identity(dim, dim);
                let rot = (&eye - &a * 0.5)
                    .lu()
                    .solve(&(&eye + &a * 0.5))
                    .expect("Cayley transform of a skew matrix is invertible");
                let mut x = p.state.x.clone();
                for i in 0..n {
                    let row = p.state.x.row(i);
                    for (k, v) in x.row_mut(i).iter_mut().enumerate() {
                        *v = (0..dim).map(|l| rot[(k, l)] * row[l]).sum();
                    }
                }
                let proposed = weight(&x);
                let accept = accept_mh(proposed - current, rng);
                if accept {
                    p.state.x = x;
                    current = proposed;
                }
                stats.record(accept);
            }
            if self.spec.metric == Metric::Euclidean {
                let shift: Vec<f64> = lambda
                    .iter()
                    .map(|l| 10.0 * scale * (l / n as f64).sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let mut x = p.state.x.clone();
                for i in 0..n {
                    for (v, s) in x.row_mut(i).iter_mut().zip(&shift) {
                        *v += s;
                    }
                }
                let proposed = weight(&x);
                let accept = accept_mh(proposed - current, rng);
                if accept {
                    p.state.x = x;
                    current = proposed;
                }
                stats.record(accept);
            }
        }
        stats
    }

    /// Random-walk variance for σ²: Var IG(a + m/2, b + SSR/2).
    fn sigma2_step_var(&self, delta: &[f64]) -> f64 {
        let m = delta.len() as f64;
        let ssr = sum_sq_residual(&self.obs.values, delta);
        let shape = self.hyper.a + 0.5 * m;
        let scale = self.hyper.b + 0.5 * ssr;
        scale * scale / ((shape - 1.0) * (shape - 1.0) * (shape - 2.0))
    }

    fn log_param_prior(&self, sigma2: f64, psi: f64) -> f64 {
        let mut lp = log_inv_gamma(sigma2, self.hyper.a, self.hyper.b);
        if self.spec.family.has_shape() {
            lp += log_uniform(psi, self.hyper.c, self.hyper.d);
        }
        lp
    }

    fn propose_scale_shape(&self, p: &ParticleState, step_var: f64, rng: &mut SmcRng) -> (f64, f64) {
        let sigma2 = p.sigma2 + step_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let psi = if self.spec.family.has_shape() {
            p.psi + PSI_STEP_SD * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        (sigma2, psi)
    }

    /// Random walk on log σ². The step is 2.38 standard deviations of
    /// log σ² under IG(a + τm/2, ·), the tempered conditional without the
    /// truncation and skewness factors.
    fn sigma2_move(&self, p: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let mut stats = MoveStats::default();
        let m = self.obs.values.len() as f64;
        let shape = self.hyper.a + 0.5 * tau * m;
        let step = 2.38 / shape.sqrt();
        let eps = step * rng.sample::<f64, _>(StandardNormal);
        let proposal = p.state.sigma2 * eps.exp();
        if !(proposal > 0.0) || !proposal.is_finite() {
            stats.record(false);
            return stats;
        }
        let sigma = proposal.sqrt();
        let terms: Vec<f64> = (0..p.terms.len())
            .map(|k| self.pair_term(k, p.delta[k], sigma, p.state.psi, &p.state.zeta))
            .collect();
        let lik: f64 = terms.iter().sum();
        let d_prior = log_inv_gamma(proposal, self.hyper.a, self.hyper.b)
            - log_inv_gamma(p.state.sigma2, self.hyper.a, self.hyper.b);
        let d_lik = if tau == 0.0 { 0.0 } else { tau * (lik - p.log_lik) };
        let accept = !lik.is_nan() && accept_mh(d_lik + d_prior + eps, rng);
        if accept {
            p.state.sigma2 = proposal;
            p.terms = terms;
            p.log_lik = lik;
        }
        stats.record(accept);
        stats
    }

    fn psi_move(&self, p: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let mut stats = MoveStats::default();
        let psi = p.state.psi + PSI_STEP_SD * rng.sample::<f64, _>(StandardNormal);
        let d_prior = log_uniform(psi, self.hyper.c, self.hyper.d);
        if d_prior == f64::NEG_INFINITY {
            stats.record(false);
            return stats;
        }
        let sigma = p.state.sigma2.sqrt();
        let terms: Vec<f64> = (0..p.terms.len())
            .map(|k| self.pair_term(k, p.delta[k], sigma, psi, &p.state.zeta))
            .collect();
        let lik: f64 = terms.iter().sum();
        let log_alpha = if tau == 0.0 { 0.0 } else { tau * (lik - p.log_lik) };
        let accept = !lik.is_nan() && accept_mh(log_alpha, rng);
        if accept {
            p.state.psi = psi;
            p.terms = terms;
            p.log_lik = lik;
        }
        stats.record(accept);
        stats
    }

    fn joint_move(&self, p: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let mut stats = MoveStats::default();
        let n = self.n();
        let sd = (self.cstep * p.state.sigma2 / (n - 1) as f64).sqrt();
        let mut x = p.state.x.clone();
        let rows = self.selected_rows(rng);
        for &i in &rows {
            for v in x.row_mut(i) {
                *v += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let var_fwd = self.sigma2_step_var(&p.delta);
        let (sigma2, psi) = self.propose_scale_shape(&p.state, var_fwd, rng);
        let prior_new = self.log_param_prior(sigma2, psi);
        if !(sigma2 > 0.0) || prior_new == f64::NEG_INFINITY {
            stats.record(false);
            return stats;
        }
        let candidate = ParticleState {
            x,
            sigma2,
            psi,
            zeta: p.state.zeta.clone(),
            lambda: p.state.lambda.clone(),
        };
        let Ok(proposed) = self.particle(candidate) else {
            stats.record(false);
            return stats;
        };
        // Both step sizes depend on the current state, so the proposal is
        // not symmetric.
        let var_rev = self.sigma2_step_var(&proposed.delta);
        let moved = (rows.len() * self.spec.dim) as f64;
        let sq_step: f64 = p
            .state
            .x
            .as_slice()
            .iter()
            .zip(proposed.state.x.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let log_q = |sigma2_from: f64, sigma2_to: f64, var: f64| {
            let row_var = self.cstep * sigma2_from / (n - 1) as f64;
            let z = sigma2_to - sigma2_from;
            -0.5 * var.ln() - 0.5 * z * z / var - 0.5 * moved * row_var.ln() - 0.5 * sq_step / row_var
        };
        let log_hastings = log_q(sigma2, p.state.sigma2, var_rev) - log_q(p.state.sigma2, sigma2, var_fwd);
        let rows_new: f64 = (0..n)
            .map(|i| self.row_log_weight(i, proposed.state.x.row(i), &p.state.lambda, tau))
            .sum();
        let rows_old: f64 = (0..n)
            .map(|i| self.row_log_weight(i, p.state.x.row(i), &p.state.lambda, tau))
            .sum();
        let d_prior = prior_new - self.log_param_prior(p.state.sigma2, p.state.psi);
        let d_lik = if tau == 0.0 {
            0.0
        } else {
            tau * (proposed.log_lik - p.log_lik)
        };
        let log_alpha = d_lik + rows_new - rows_old + d_prior + log_hastings;
        let accept = !proposed.log_lik.is_nan() && accept_mh(log_alpha, rng);
        if accept {
            *p = proposed;
        }
        stats.record(accept);
        stats
    }

    /// One kernel application at annealing parameter τ.
    pub fn propagate_particle(&self, p: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let mut stats = MoveStats::default();
        for _ in 0..self.kernel.sweeps {
            self.gibbs_lambda(&mut p.state, tau, rng);
            if self.spec.family.has_mixture() {
                // ζ moves are exact draws up to a normalizer correction and
                // are not counted towards the acceptance rate.
                self.update_zeta(p, tau, rng);
            }
            stats.merge(self.rigid_moves(p, tau, rng));
            match self.kernel.scheme {
                KernelScheme::RowWise | KernelScheme::Newton => {
                    let rm = if self.kernel.scheme == KernelScheme::Newton && self.spec.metric == Metric::Euclidean {
                        self.newton_row_moves(p, tau, rng)
                    } else {
                        self.row_moves(p, tau, rng)
                    };
                    stats.merge(rm);
                    p.log_lik = p.terms.iter().sum();
                    stats.merge(self.sigma2_move(p, tau, rng));
                    if self.spec.family.has_shape() {
                        stats.merge(self.psi_move(p, tau, rng));
                    }
                }
                KernelScheme::Joint => {
                    p.log_lik = p.terms.iter().sum();
                    stats.merge(self.joint_move(p, tau, rng));
                }
            }
        }
        p.log_lik = p.terms.iter().sum();
        stats
    }

    /// log π̃₀ of the parameters and latent coordinates.
    pub fn reference_density(&self, s: &ParticleState) -> f64 {
        let n_old = self.reference.n_old();
        let mut lx = 0.0;
        for i in 0..self.n() {
            let x = s.x.row(i);
            lx += if i < n_old {
                self.reference.log_density_row(i, x)
            } else {
                self.log_prior_row(x, &s.lambda)
            };
        }
        lx + log_prior_params(s, &self.hyper, self.spec.family)
    }

    /// Draw a state from the reference distribution.
    pub fn sample_reference_state(&self, rng: &mut SmcRng) -> ParticleState {
        let n = self.n();
        let p = self.spec.dim;
        let lambda: Vec<f64> = self
            .hyper
            .beta
            .iter()
            .map(|&b| sample_inv_gamma(self.hyper.alpha, b, rng))
            .collect();
        let sigma2 = sample_inv_gamma(self.hyper.a, self.hyper.b, rng);
        let psi = if self.spec.family.has_shape() {
            rng.random_range(self.hyper.c..self.hyper.d)
        } else {
            0.0
        };
        let zeta = if self.spec.family.has_mixture() {
            let h = 0.5 * self.hyper.nu;
            (0..n * (n - 1) / 2).map(|_| sample_gamma(h, h, rng)).collect()
        } else {
            Vec::new()
        };
        let mut x = Configuration::zeros(n, p);
        for i in 0..n {
            if i < self.reference.n_old() {
                self.reference.sample_row(i, rng, x.row_mut(i));
            } else {
                for (v, l) in x.row_mut(i).iter_mut().zip(&lambda) {
                    *v = l.sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        ParticleState {
            x,
            sigma2,
            psi,
            zeta,
            lambda,
        }
    }
}

impl AnnealedTarget for GbmdsTarget {
    type State = GbmdsParticle;

    fn reference_log_density(&self, p: &GbmdsParticle) -> f64 {
        self.reference_density(&p.state)
    }

    fn posterior_log_density(&self, p: &GbmdsParticle) -> f64 {
        p.log_lik + log_prior(&p.state, &self.hyper, self.spec.family)
    }

    fn log_density_gap(&self, p: &GbmdsParticle) -> f64 {
        p.log_lik + self.old_block_gap(&p.state)
    }

    fn sample_reference(&self, rng: &mut SmcRng) -> Result<GbmdsParticle> {
        // A zero-norm latent point under the cosine metric has probability
        // zero; redraw on the off chance.
        for _ in 0..100 {
            let state = self.sample_reference_state(rng);
            match self.particle(state) {
                Ok(p) => return Ok(p),
                Err(GbmdsError::Pair { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(GbmdsError::InvalidInput("could not draw a valid reference state".into()))
    }

    fn propagate(&self, state: &mut GbmdsParticle, tau: f64, rng: &mut SmcRng) -> MoveStats {
        self.propagate_particle(state, tau, rng)
    }
}

/// One application of the GBMDS kernel at annealing parameter τ.
pub fn propagate_gbmds(
    target: &GbmdsTarget,
    particle: &mut GbmdsParticle,
    tau: f64,
    rng: &mut SmcRng,
) -> MoveStats {
    target.propagate_particle(particle, tau, rng)
}

#[inline]
fn accept_mh(log_alpha: f64, rng: &mut SmcRng) -> bool {
    if log_alpha.is_nan() {
        return false;
    }
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

/// Draw from the inverse gamma with shape `a` and scale `b`.
pub fn sample_inv_gamma(a: f64, b: f64, rng: &mut SmcRng) -> f64 {
    let g: f64 = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    b / g
}

/// Draw from the gamma with shape `k` and rate `r`.
pub fn sample_gamma(k: f64, r: f64, rng: &mut SmcRng) -> f64 {
    Gamma::new(k, 1.0 / r).expect("positive parameters").sample(rng)
}
