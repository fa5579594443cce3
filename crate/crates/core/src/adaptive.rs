//! Batch-wise incremental inference.
//!
//! Objects arrive in batches; each batch reruns the engine on all
//! dissimilarities seen so far, with a reference that keeps previously seen
//! objects near their last posterior.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cmds::{stress_pairs, Configuration};
use crate::dissimilarity::DissimilarityMatrix;
use crate::error::{GbmdsError, Result};
use crate::model::{HyperOverrides, HyperParams, ModelSpec};
use crate::postprocess::{fit_with_reference, FitOptions, FitResult};
use crate::smc::gbmds::LatentReference;
use crate::smc::{derive_seed, stream, SmcConfig};

/// Added to the pooled covariance of the old-object reference.
pub const REFERENCE_RIDGE: f64 = 1e-8;

/// Batch boundaries n_1 < n_2 < ... < n_B.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    cuts: Vec<usize>,
}

impl BatchPlan {
    /// From cumulative object counts; the last entry is the total.
    pub fn new(cuts: Vec<usize>) -> Result<Self> {
        let bad = |m: String| Err(GbmdsError::InvalidInput(m));
        let Some(&first) = cuts.first() else {
            return bad("batch plan needs at least one batch".into());
        };
        if first < 3 {
            return bad(format!("first batch needs at least 3 objects, got {first}"));
        }
        for w in cuts.windows(2) {
            if w[1] <= w[0] {
                return bad(format!("batch boundaries must increase strictly: {} then {}", w[0], w[1]));
            }
        }
        Ok(Self { cuts })
    }

    /// A single batch holding all `n` objects.
    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    /// Batches of `size` objects; the last one takes the remainder.
    pub fn uniform(n: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(GbmdsError::InvalidInput("batch size must be positive".into()));
        }
        let mut cuts: Vec<usize> = (1..).map(|b| b * size).take_while(|&c| c < n).collect();
        cuts.push(n);
        Self::new(cuts)
    }

    /// Parse "10,15" style cumulative boundaries.
    pub fn parse(text: &str) -> Result<Self> {
        let cuts = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| GbmdsError::InvalidInput(format!("bad batch boundary '{}'", t.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cuts)
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    pub fn batches(&self) -> usize {
        self.cuts.len()
    }

    /// Total number of objects.
    pub fn n(&self) -> usize {
        *self.cuts.last().expect("non-empty plan")
    }
}

/// Gaussian reference for previously seen objects.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSpec {
    pub centers: Configuration,
    /// Shared p×p covariance.
    pub covariance: DMatrix<f64>,
}

impl ReferenceSpec {
    pub fn to_reference(&self) -> Result<LatentReference> {
        LatentReference::new(self.centers.clone(), self.covariance.clone())
    }
}

/// Weighted means of the first `n_prev` objects and their pooled
/// within-object covariance. Uniform weights when `weights` is `None`.
pub fn reference_from_posterior(
    samples: &[Configuration],
    weights: Option<&[f64]>,
    n_prev: usize,
) -> Result<ReferenceSpec> {
    let Some(first) = samples.first() else {
        return Err(GbmdsError::InvalidInput("no posterior samples".into()));
    };
    let (n, p) = (first.n(), first.p());
    if n_prev > n {
        return Err(GbmdsError::InvalidInput(format!(
            "reference for {n_prev} objects requested from samples of {n}"
        )));
    }
    if n_prev == 0 {
        return Err(GbmdsError::InvalidInput("reference needs at least one object".into()));
    }
    if samples.iter().any(|s| s.n() != n || s.p() != p) {
        return Err(GbmdsError::InvalidInput("samples differ in shape".into()));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != samples.len() {
                return Err(GbmdsError::LengthMismatch {
                    left: w.len(),
                    right: samples.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(GbmdsError::InvalidInput("weights must be finite and non-negative".into()));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(GbmdsError::InvalidInput("weights sum to zero".into()));
            }
            w.iter().map(|v| v / total).collect()
        }
        None => vec![1.0 / samples.len() as f64; samples.len()],
    };

    let mut centers = Configuration::zeros(n_prev, p);
    for (s, &wk) in samples.iter().zip(&w) {
        for i in 0..n_prev {
            for (c, v) in centers.row_mut(i).iter_mut().zip(s.row(i)) {
                *c += wk * v;
            }
        }
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for (s, &wk) in samples.iter().zip(&w) {
        for i in 0..n_prev {
            let (x, c) = (s.row(i), centers.row(i));
            for a in 0..p {
                for b in 0..p {
                    cov[(a, b)] += wk * (x[a] - c[a]) * (x[b] - c[b]);
                }
            }
        }
    }
    cov /= n_prev as f64;
    for a in 0..p {
        cov[(a, a)] += REFERENCE_RIDGE;
    }
    Ok(ReferenceSpec {
        centers,
        covariance: cov,
    })
}

/// Fit the batches of `plan` in order; one result per batch.
pub fn run_adaptive(
    d: &DissimilarityMatrix,
    plan: &BatchPlan,
    spec: &ModelSpec,
    overrides: &HyperOverrides,
    config: &SmcConfig,
    options: &FitOptions,
) -> Result<Vec<FitResult>> {
    spec.validate()?;
    if plan.n() != d.n() {
        return Err(GbmdsError::InvalidInput(format!(
            "batch plan covers {} objects but the data has {}",
            plan.n(),
            d.n()
        )));
    }
    let mut results: Vec<FitResult> = Vec::with_capacity(plan.batches());
    for (b, &n_b) in plan.cuts().iter().enumerate() {
        let wrap = |e: GbmdsError| GbmdsError::Batch {
            batch: b + 1,
            source: Box::new(e),
        };
        let batch = || -> Result<FitResult> {
            if spec.dim >= n_b {
                return Err(GbmdsError::InvalidInput(format!(
                    "dimension {} must be below the number of objects {n_b}",
                    spec.dim
                )));
            }
            let d_b = d.leading(n_b)?;
            let (mut hyper, cmds) = HyperParams::from_cmds(&d_b, spec)?;
            overrides.apply(&mut hyper);
            let cmds_stress = stress_pairs(&d_b.lower_triangle(), &cmds.config.pairwise_euclidean())?;
            let reference = match results.last() {
                None => LatentReference::isotropic(cmds.config, options.reference_var)?,
                Some(prev) => {
                    reference_from_posterior(&prev.samples, None, prev.mode.n())?.to_reference()?
                }
            };
            let cfg = SmcConfig {
                seed: derive_seed(config.seed, stream::BATCH, b as u64),
                ..config.clone()
            };
            fit_with_reference(&d_b, spec, hyper, reference, cmds_stress, &cfg, options)
        };
        let r = batch().map_err(wrap)?;
        results.push(r);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rows: &[Vec<f64>]) -> Configuration {
        Configuration::from_rows(rows).unwrap()
    }

    #[test]
    fn plan_validation() {
        assert!(BatchPlan::new(vec![10, 15]).is_ok());
        assert!(BatchPlan::new(vec![2, 15]).is_err());
        assert!(BatchPlan::new(vec![10, 10]).is_err());
        assert!(BatchPlan::new(vec![]).is_err());
        assert_eq!(BatchPlan::uniform(12, 5).unwrap().cuts(), &[5, 10, 12]);
        assert_eq!(BatchPlan::uniform(10, 5).unwrap().cuts(), &[5, 10]);
        assert_eq!(BatchPlan::parse("10, 15").unwrap().cuts(), &[10, 15]);
        assert!(BatchPlan::parse("10,x").is_err());
    }

    #[test]
    fn single_sample_reference() {
        let s = cfg(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let r = reference_from_posterior(std::slice::from_ref(&s), None, 2).unwrap();
        assert_eq!(r.centers, s.leading(2));
        assert_eq!(r.covariance, DMatrix::identity(2, 2) * REFERENCE_RIDGE);
    }

    #[test]
    fn symmetric_samples_center_at_zero() {
        let a = cfg(&[vec![1.0, -2.0], vec![0.5, 0.5]]);
        let b = cfg(&[vec![-1.0, 2.0], vec![-0.5, -0.5]]);
        let r = reference_from_posterior(&[a, b], None, 2).unwrap();
        assert!(r.centers.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn weighted_moments() {
        let a = cfg(&[vec![0.0], vec![2.0]]);
        let b = cfg(&[vec![1.0], vec![0.0]]);
        let r = reference_from_posterior(&[a, b], Some(&[3.0, 1.0]), 2).unwrap();
        assert!((r.centers.row(0)[0] - 0.25).abs() < 1e-15);
        assert!((r.centers.row(1)[0] - 1.5).abs() < 1e-15);
        // object 0: 0.75·0.0625 + 0.25·0.5625 = 0.1875; object 1: 0.75·0.25 + 0.25·2.25 = 0.75
        let expect = (0.1875 + 0.75) / 2.0 + REFERENCE_RIDGE;
        assert!((r.covariance[(0, 0)] - expect).abs() < 1e-15);
    }

    #[test]
    fn too_many_objects_requested() {
        let a = cfg(&[vec![0.0], vec![2.0]]);
        assert!(reference_from_posterior(&[a], None, 3).is_err());
    }
}
