//! Posterior summaries: the minimum-SSR mode, Procrustes alignment, credible
//! regions, Bayes factors and model/dimension sweeps.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmds::{stress_pairs, Configuration};
use crate::dissimilarity::{DissimilarityMatrix, Metric};
use crate::error::{GbmdsError, Result};
use crate::model::{delta_matrix, Family, HyperOverrides, HyperParams, ModelSpec};
use crate::smc::gbmds::{GbmdsParticle, GbmdsTarget, LatentReference};
use crate::smc::{derive_seed, run_asmc, stream, IterationRecord, SmcConfig, SmcOutput};

/// Variance of the Gaussian reference around the classical-scaling solution.
pub const CMDS_REFERENCE_VAR: f64 = 0.01;

/// Transformations allowed when aligning a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    /// Rotation, reflection, translation and scaling.
    Similarity,
    /// Rotation, reflection and translation.
    Rigid,
    /// Rotation and reflection about the origin.
    Orthogonal,
}

impl Alignment {
    /// The transformations that leave latent distances under `metric`
    /// unchanged, plus scaling when `scale` is set and the metric allows
    /// translation.
    pub fn for_metric(metric: Metric, scale: bool) -> Self {
        match metric {
            Metric::Cosine => Alignment::Orthogonal,
            _ if scale => Alignment::Similarity,
            _ => Alignment::Rigid,
        }
    }
}

/// Least-squares similarity alignment of `x` onto `target`.
pub fn procrustes(x: &Configuration, target: &Configuration) -> Result<Configuration> {
    procrustes_with(x, target, Alignment::Similarity)
}

pub fn procrustes_with(x: &Configuration, target: &Configuration, mode: Alignment) -> Result<Configuration> {
    if x.n() != target.n() || x.p() != target.p() {
        return Err(GbmdsError::InvalidInput(format!(
            "cannot align a {}x{} configuration onto {}x{}",
            x.n(),
            x.p(),
            target.n(),
            target.p()
        )));
    }
    let centered = mode != Alignment::Orthogonal;
    let (mx, mt) = if centered {
        (x.centroid(), target.centroid())
    } else {
        (vec![0.0; x.p()], vec![0.0; x.p()])
    };
    let xc = centered_matrix(x, &mx);
    let tc = centered_matrix(target, &mt);
    let spread = xc.norm_squared();
    if !(spread > 1e-24) {
        log::warn!("configuration has no spread; aligning by translation only");
        return translate(&xc, &mt);
    }
    let svd = (xc.transpose() * &tc).svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GbmdsError::Eigen),
    };
    let rot = u * v_t;
    let scale = if mode == Alignment::Similarity {
        svd.singular_values.sum() / spread
    } else {
        1.0
    };
    translate(&(xc * rot * scale), &mt)
}

fn centered_matrix(x: &Configuration, mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.n(), x.p(), |i, k| x.row(i)[k] - mean[k])
}

fn translate(m: &DMatrix<f64>, shift: &[f64]) -> Result<Configuration> {
    let shifted = DMatrix::from_fn(m.nrows(), m.ncols(), |i, k| m[(i, k)] + shift[k]);
    Configuration::from_matrix(&shifted)
}

/// Sum of squared residuals between `d` and the distances of `x`.
pub fn ssr(d: &DissimilarityMatrix, x: &Configuration, metric: Metric) -> Result<f64> {
    let mut delta = delta_matrix(x, metric)?;
    delta.fill_ssr(&d.lower_triangle())
}

/// Index and configuration of the sample with the smallest SSR against `d`.
/// Ties go to the lowest index.
pub fn posterior_mode(
    samples: &[Configuration],
    d: &DissimilarityMatrix,
    metric: Metric,
) -> Result<(usize, Configuration)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, x) in samples.iter().enumerate() {
        let v = ssr(d, x, metric)?;
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((k, v));
        }
    }
    let (k, _) = best.ok_or_else(|| GbmdsError::InvalidInput("empty sample set".into()))?;
    Ok((k, samples[k].clone()))
}

/// Credible region for one object: an ellipse when p = 2, marginal
/// quantile intervals otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibleRegion {
    pub object: usize,
    pub center: Vec<f64>,
    /// Semi-axis lengths, major first.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub axes: Option<[f64; 2]>,
    /// Angle of the major axis from the first coordinate axis, radians.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub angle: Option<f64>,
    /// Sample covariance (row-major, after any regularization).
    pub covariance: Vec<f64>,
    /// Per-axis equal-tailed intervals.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub intervals: Option<Vec<[f64; 2]>>,
    pub level: f64,
}

impl CredibleRegion {
    /// Whether `z` falls inside the region.
    pub fn contains(&self, z: &[f64]) -> bool {
        match self.axes {
            Some(_) => {
                let [s00, s01, _, s11] = [
                    self.covariance[0],
                    self.covariance[1],
                    self.covariance[2],
                    self.covariance[3],
                ];
                let det = s00 * s11 - s01 * s01;
                let (a, b) = (z[0] - self.center[0], z[1] - self.center[1]);
                let q = (s11 * a * a - 2.0 * s01 * a * b + s00 * b * b) / det;
                q <= chi2_2_quantile(self.level)
            }
            None => self
                .intervals
                .as_ref()
                .is_some_and(|iv| iv.iter().zip(z).all(|(r, v)| r[0] <= *v && *v <= r[1])),
        }
    }
}

/// Quantile of χ² with two degrees of freedom.
pub fn chi2_2_quantile(level: f64) -> f64 {
    -2.0 * (1.0 - level).ln()
}

/// Per-object credible regions from aligned samples.
pub fn credible_ellipses(samples: &[Configuration], level: f64) -> Result<Vec<CredibleRegion>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(GbmdsError::InvalidInput(format!("credible level {level} outside (0, 1)")));
    }
    let first = samples
        .first()
        .ok_or_else(|| GbmdsError::InvalidInput("no samples".into()))?;
    let (n, p) = (first.n(), first.p());
    if samples.iter().any(|s| s.n() != n || s.p() != p) {
        return Err(GbmdsError::InvalidInput("samples differ in shape".into()));
    }
    if samples.len() < p + 1 {
        return Err(GbmdsError::InvalidInput(format!(
            "need at least {} samples for dimension {p}, got {}",
            p + 1,
            samples.len()
        )));
    }
    (0..n)
        .map(|i| {
            let points: Vec<&[f64]> = samples.iter().map(|s| s.row(i)).collect();
            object_region(i, &points, level)
        })
        .collect()
}

fn object_region(object: usize, points: &[&[f64]], level: f64) -> Result<CredibleRegion> {
    let p = points[0].len();
    let k = points.len() as f64;
    let center: Vec<f64> = (0..p)
        .map(|a| points.iter().map(|x| x[a]).sum::<f64>() / k)
        .collect();
    let mut cov = vec![0.0; p * p];
    for x in points {
        for a in 0..p {
            for b in 0..p {
                cov[a * p + b] += (x[a] - center[a]) * (x[b] - center[b]);
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= k - 1.0);

    if p != 2 {
        let lo = 0.5 * (1.0 - level);
        let intervals = (0..p)
            .map(|a| {
                let mut v: Vec<f64> = points.iter().map(|x| x[a]).collect();
                v.sort_by(f64::total_cmp);
                [quantile(&v, lo), quantile(&v, 1.0 - lo)]
            })
            .collect();
        return Ok(CredibleRegion {
            object,
            center,
            axes: None,
            angle: None,
            covariance: cov,
            intervals: Some(intervals),
            level,
        });
    }

    let (s00, s01, s11) = (cov[0], cov[1], cov[3]);
    let trace = s00 + s11;
    let half_gap = (0.25 * (s00 - s11) * (s00 - s11) + s01 * s01).sqrt();
    let mut l1 = 0.5 * trace + half_gap;
    let mut l2 = 0.5 * trace - half_gap;
    let floor = 1e-12 * l1.max(1.0);
    if !(l2 > floor) {
        log::warn!("object {object}: singular sample covariance regularized");
        let ridge = floor - l2.min(0.0);
        cov[0] += ridge;
        cov[3] += ridge;
        l1 += ridge;
        l2 += ridge;
    }
    let angle = if s01 == 0.0 && s00 >= s11 {
        0.0
    } else {
        (l1 - s00).atan2(s01)
    };
    let c = chi2_2_quantile(level);
    Ok(CredibleRegion {
        object,
        center,
        axes: Some([(c * l1).sqrt(), (c * l2).sqrt()]),
        angle: Some(angle),
        covariance: cov,
        intervals: None,
        level,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Strength of evidence on the Kass-Raftery scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evidence {
    Weak,
    Substantial,
    Strong,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    /// exp(logM1 - logM2).
    pub value: f64,
    pub log_value: f64,
    /// True when the factor is below one and the label refers to model 2.
    pub favors_second: bool,
    pub evidence: Evidence,
}

impl BayesFactor {
    pub fn label(&self) -> String {
        let strength = match self.evidence {
            Evidence::Weak => "weak",
            Evidence::Substantial => "substantial",
            Evidence::Strong => "strong",
        };
        if self.favors_second {
            format!("favors-model-2: {strength}")
        } else {
            strength.to_string()
        }
    }
}

pub fn bayes_factor(log_m1: f64, log_m2: f64) -> Result<BayesFactor> {
    if !log_m1.is_finite() || !log_m2.is_finite() {
        return Err(GbmdsError::NonFinite);
    }
    let log_value = log_m1 - log_m2;
    let favors_second = log_value < 0.0;
    let strength = log_value.abs().exp();
    let evidence = if strength > 10.0 {
        Evidence::Strong
    } else if strength > 3.0 {
        Evidence::Substantial
    } else {
        Evidence::Weak
    };
    Ok(BayesFactor {
        value: log_value.exp(),
        log_value,
        favors_second,
        evidence,
    })
}

/// Settings of the summary stage of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Include scaling in the alignment of samples (Euclidean metric only).
    pub scale: bool,
    pub level: f64,
    /// Variance of the Gaussian reference around the classical solution.
    pub reference_var: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            scale: true,
            level: 0.95,
            reference_var: CMDS_REFERENCE_VAR,
        }
    }
}

/// Posterior mean and standard deviation of a scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

impl Moments {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let k = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / k;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
        Self { mean, sd: var.sqrt() }
    }
}

/// Summary of one engine run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub hyper: HyperParams,
    pub seed: u64,
    /// Minimum-SSR posterior sample.
    pub mode: Configuration,
    /// Posterior samples aligned onto the mode.
    pub samples: Vec<Configuration>,
    pub regions: Vec<CredibleRegion>,
    pub stress: f64,
    /// STRESS of the classical-scaling solution at the same dimension.
    pub cmds_stress: f64,
    pub log_evidence: f64,
    pub schedule: Vec<f64>,
    pub diagnostics: Vec<IterationRecord>,
    pub mean_acceptance: f64,
    pub sigma2: Moments,
    pub psi: Moments,
}

impl FitResult {
    /// Number of annealing steps R.
    pub fn iterations(&self) -> usize {
        self.schedule.len() - 1
    }
}

/// Classical scaling, empirical-Bayes priors, an engine run with the
/// classical solution as reference, then summaries.
pub fn fit(
    d: &DissimilarityMatrix,
    spec: &ModelSpec,
    overrides: &HyperOverrides,
    config: &SmcConfig,
    options: &FitOptions,
) -> Result<FitResult> {
    spec.validate()?;
    if spec.dim >= d.n() {
        return Err(GbmdsError::InvalidInput(format!(
            "dimension {} must be below the number of objects {}",
            spec.dim,
            d.n()
        )));
    }
    let (mut hyper, cmds) = HyperParams::from_cmds(d, spec)?;
    overrides.apply(&mut hyper);
    let reference = LatentReference::isotropic(cmds.config.clone(), options.reference_var)?;
    let cmds_stress = stress_pairs(&d.lower_triangle(), &cmds.config.pairwise_euclidean())?;
    fit_with_reference(d, spec, hyper, reference, cmds_stress, config, options)
}

/// Run the engine against an explicit reference and summarize.
pub fn fit_with_reference(
    d: &DissimilarityMatrix,
    spec: &ModelSpec,
    hyper: HyperParams,
    reference: LatentReference,
    cmds_stress: f64,
    config: &SmcConfig,
    options: &FitOptions,
) -> Result<FitResult> {
    let target = GbmdsTarget::new(d, *spec, hyper.clone(), reference, config.kernel.clone())?;
    let out = run_asmc(&target, config)?;
    summarize(d, spec, hyper, cmds_stress, config.seed, out, options)
}

fn summarize(
    d: &DissimilarityMatrix,
    spec: &ModelSpec,
    hyper: HyperParams,
    cmds_stress: f64,
    seed: u64,
    out: SmcOutput<GbmdsParticle>,
    options: &FitOptions,
) -> Result<FitResult> {
    let states: Vec<_> = out.cloud.particles.iter().map(|p| p.state()).collect();
    let sigma2 = Moments::of(states.iter().map(|s| s.sigma2));
    let psi = Moments::of(states.iter().map(|s| s.psi));

    // Particles cache their distances, so the mode scan reuses them.
    let d_pairs = d.lower_triangle();
    let mut best = (0, f64::INFINITY);
    for (k, p) in out.cloud.particles.iter().enumerate() {
        let v: f64 = d_pairs.iter().zip(p.delta()).map(|(a, b)| (a - b) * (a - b)).sum();
        if v < best.1 {
            best = (k, v);
        }
    }
    let mode = states[best.0].x.clone();
    let stress = stress_pairs(&d_pairs, out.cloud.particles[best.0].delta())?;

    let align = Alignment::for_metric(spec.metric, options.scale);
    let samples = states
        .iter()
        .map(|s| procrustes_with(&s.x, &mode, align))
        .collect::<Result<Vec<_>>>()?;
    let regions = credible_ellipses(&samples, options.level)?;
    let mean_acceptance = out.mean_acceptance();
    Ok(FitResult {
        spec: *spec,
        hyper,
        seed,
        mode,
        samples,
        regions,
        stress,
        cmds_stress,
        log_evidence: out.cloud.log_evidence,
        schedule: out.cloud.schedule,
        diagnostics: out.diagnostics,
        mean_acceptance,
        sigma2,
        psi,
    })
}

/// One cell of a model/dimension sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: Family,
    pub metric: Metric,
    pub dim: usize,
    pub seed: u64,
    pub log_evidence: Option<f64>,
    pub stress: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

impl ComparisonRow {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Valid row with the largest log evidence.
    pub winner: Option<usize>,
}

/// Grid of candidate models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub families: Vec<Family>,
    pub metrics: Vec<Metric>,
    pub dims: Vec<usize>,
}

impl SweepGrid {
    /// Cells in family-major, then metric, then dimension order.
    pub fn cells(&self) -> Vec<(Family, Metric, usize)> {
        let mut out = Vec::new();
        for &f in &self.families {
            for &m in &self.metrics {
                for &p in &self.dims {
                    out.push((f, m, p));
                }
            }
        }
        out
    }
}

/// Fit every cell of `grid` with its own seed derived from `config.seed`.
/// Failed cells are recorded and skipped when picking the winner.
pub fn sweep(
    d: &DissimilarityMatrix,
    grid: &SweepGrid,
    overrides: &HyperOverrides,
    config: &SmcConfig,
) -> Result<ComparisonTable> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(GbmdsError::InvalidInput("empty sweep grid".into()));
    }
    let upper = d.upper_bound();
    let rows: Vec<ComparisonRow> = cells
        .par_iter()
        .enumerate()
        .map(|(idx, &(family, metric, dim))| {
            let seed = derive_seed(config.seed, stream::SWEEP_CELL, idx as u64);
            let cfg = SmcConfig {
                seed,
                ..config.clone()
            };
            let result = ModelSpec::new(family, metric, dim, upper)
                .and_then(|spec| fit(d, &spec, overrides, &cfg, &FitOptions::default()));
            match result {
                Ok(r) => ComparisonRow {
                    family,
                    metric,
                    dim,
                    seed,
                    log_evidence: Some(r.log_evidence),
                    stress: Some(r.stress),
                    iterations: Some(r.iterations()),
                    error: None,
                },
                Err(e) => {
                    log::warn!("cell {family}/{metric}/p={dim} failed: {e}");
                    ComparisonRow {
                        family,
                        metric,
                        dim,
                        seed,
                        log_evidence: None,
                        stress: None,
                        iterations: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let winner = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.log_evidence.map(|v| (i, v)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i);
    Ok(ComparisonTable { rows, winner })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(rows: &[[f64; 2]]) -> Configuration {
        Configuration::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn procrustes_identity() {
        let x = config(&[[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0], [0.7, -1.1]]);
        let y = procrustes(&x, &x).unwrap();
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn procrustes_recovers_rotation_reflection_shift() {
        let target = config(&[[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0], [0.7, -1.1]]);
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let moved: Vec<[f64; 2]> = target
            .rows()
            .map(|r| [2.0 * (c * r[0] - s * r[1]) + 3.0, -2.0 * (s * r[0] + c * r[1]) - 1.0])
            .collect();
        let y = procrustes(&config(&moved), &target).unwrap();
        for (a, b) in target.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        let rigid = procrustes_with(&config(&moved), &target, Alignment::Rigid).unwrap();
        let spread: f64 = rigid.centroid().iter().zip(target.centroid()).map(|(a, b)| (a - b).abs()).sum();
        assert!(spread < 1e-12);
    }

    #[test]
    fn degenerate_alignment_translates() {
        let x = config(&[[1.0, 1.0], [1.0, 1.0]]);
        let t = config(&[[0.0, 0.0], [2.0, 0.0]]);
        let y = procrustes(&x, &t).unwrap();
        assert_eq!(y.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn bayes_factor_labels() {
        let bf = bayes_factor(0.0, 0.0).unwrap();
        assert_eq!((bf.value, bf.label().as_str()), (1.0, "weak"));
        let bf = bayes_factor(5f64.ln(), 0.0).unwrap();
        assert!((bf.value - 5.0).abs() < 1e-12);
        assert_eq!(bf.evidence, Evidence::Substantial);
        let bf = bayes_factor(20f64.ln(), 0.0).unwrap();
        assert_eq!(bf.evidence, Evidence::Strong);
        let bf = bayes_factor(0.0, 20f64.ln()).unwrap();
        assert_eq!(bf.label(), "favors-model-2: strong");
        assert!(bayes_factor(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn mode_picks_exact_fit() {
        let exact = config(&[[0.0, 0.0], [3.0, 4.0], [0.0, 8.0]]);
        let d = DissimilarityMatrix::from_full(
            3,
            vec![0.0, 5.0, 8.0, 5.0, 0.0, 5.0, 8.0, 5.0, 0.0],
            Metric::Euclidean,
            f64::INFINITY,
        )
        .unwrap();
        let other = config(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let (k, m) = posterior_mode(&[other.clone(), exact.clone(), other], &d, Metric::Euclidean).unwrap();
        assert_eq!(k, 1);
        assert_eq!(m, exact);
    }

    #[test]
    fn identical_samples_give_point_region() {
        let x = config(&[[1.0, 2.0], [3.0, 4.0]]);
        let regions = credible_ellipses(&vec![x; 5], 0.95).unwrap();
        let axes = regions[0].axes.unwrap();
        assert!(axes[0] < 1e-5 && axes[1] < 1e-5);
        assert_eq!(regions[1].center, vec![3.0, 4.0]);
    }

    #[test]
    fn intervals_for_other_dimensions() {
        let samples: Vec<Configuration> = (0..11)
            .map(|k| Configuration::new(1, 3, vec![k as f64, 0.0, -(k as f64)]).unwrap())
            .collect();
        let r = &credible_ellipses(&samples, 0.8).unwrap()[0];
        let iv = r.intervals.as_ref().unwrap();
        assert!((iv[0][0] - 1.0).abs() < 1e-12 && (iv[0][1] - 9.0).abs() < 1e-12);
        assert!(r.axes.is_none());
    }
}
