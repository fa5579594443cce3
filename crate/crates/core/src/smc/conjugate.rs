//! Gaussian-mean model with known noise variance and a Gaussian prior.
//!
//! Every tempered posterior is Gaussian, so the kernel is an exact draw and
//! the evidence has a closed form; used to check the engine.

use rand_distr::{Distribution, Normal};

use super::{AnnealedTarget, MoveStats, SmcRng};
use crate::error::{GbmdsError, Result};
use crate::special::LN_SQRT_2PI;

/// y_i ~ N(μ, noise_var), μ ~ N(prior_mean, prior_var); reference = prior.
#[derive(Clone, Debug)]
pub struct GaussianMeanTarget {
    pub observations: Vec<f64>,
    pub noise_var: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
    sum: f64,
}

impl GaussianMeanTarget {
    pub fn new(observations: Vec<f64>, noise_var: f64, prior_mean: f64, prior_var: f64) -> Result<Self> {
        if observations.is_empty() || !(noise_var > 0.0) || !(prior_var > 0.0) {
            return Err(GbmdsError::InvalidInput(
                "need observations and positive variances".into(),
            ));
        }
        let sum = observations.iter().sum();
        Ok(Self {
            observations,
            noise_var,
            prior_mean,
            prior_var,
            sum,
        })
    }

    fn log_prior(&self, mu: f64) -> f64 {
        let z = mu - self.prior_mean;
        -LN_SQRT_2PI - 0.5 * self.prior_var.ln() - 0.5 * z * z / self.prior_var
    }

    fn log_lik(&self, mu: f64) -> f64 {
        let n = self.observations.len() as f64;
        let ss: f64 = self.observations.iter().map(|y| (y - mu) * (y - mu)).sum();
        -n * LN_SQRT_2PI - 0.5 * n * self.noise_var.ln() - 0.5 * ss / self.noise_var
    }

    /// Mean and variance of the posterior tempered by τ.
    pub fn tempered_moments(&self, tau: f64) -> (f64, f64) {
        let n = self.observations.len() as f64;
        let prec = 1.0 / self.prior_var + tau * n / self.noise_var;
        let mean = (self.prior_mean / self.prior_var + tau * self.sum / self.noise_var) / prec;
        (mean, 1.0 / prec)
    }

    /// log p(y), integrating μ out.
    pub fn log_evidence(&self) -> f64 {
        let n = self.observations.len() as f64;
        let s2 = self.noise_var;
        let v0 = self.prior_var;
        let centered: Vec<f64> = self.observations.iter().map(|y| y - self.prior_mean).collect();
        let ss: f64 = centered.iter().map(|c| c * c).sum();
        let sum: f64 = centered.iter().sum();
        -n * LN_SQRT_2PI - 0.5 * n * s2.ln() - 0.5 * (1.0 + n * v0 / s2).ln()
            - 0.5 * (ss / s2 - v0 * sum * sum / (s2 * (s2 + n * v0)))
    }
}

impl AnnealedTarget for GaussianMeanTarget {
    type State = f64;

    fn reference_log_density(&self, state: &f64) -> f64 {
        self.log_prior(*state)
    }

    fn posterior_log_density(&self, state: &f64) -> f64 {
        self.log_lik(*state) + self.log_prior(*state)
    }

    fn log_density_gap(&self, state: &f64) -> f64 {
        self.log_lik(*state)
    }

    fn sample_reference(&self, rng: &mut SmcRng) -> Result<f64> {
        Ok(Normal::new(self.prior_mean, self.prior_var.sqrt())
            .map_err(|e| GbmdsError::InvalidInput(e.to_string()))?
            .sample(rng))
    }

    fn propagate(&self, state: &mut f64, tau: f64, rng: &mut SmcRng) -> MoveStats {
        let (m, v) = self.tempered_moments(tau);
        *state = Normal::new(m, v.sqrt()).expect("positive variance").sample(rng);
        MoveStats {
            proposed: 1,
            accepted: 1,
        }
    }
}

/// A target whose reference equals its posterior; every gap is zero.
#[derive(Clone, Debug)]
pub struct ReferenceIsPosterior {
    pub mean: f64,
    pub sd: f64,
}

impl AnnealedTarget for ReferenceIsPosterior {
    type State = f64;

    fn reference_log_density(&self, s: &f64) -> f64 {
        let z = (s - self.mean) / self.sd;
        -LN_SQRT_2PI - self.sd.ln() - 0.5 * z * z
    }

    fn posterior_log_density(&self, s: &f64) -> f64 {
        self.reference_log_density(s)
    }

    fn sample_reference(&self, rng: &mut SmcRng) -> Result<f64> {
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        Ok(self.mean + self.sd * z)
    }

    fn propagate(&self, state: &mut f64, _tau: f64, rng: &mut SmcRng) -> MoveStats {
        *state = self.sample_reference(rng).expect("normal draw");
        MoveStats {
            proposed: 1,
            accepted: 1,
        }
    }
}
