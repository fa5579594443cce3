//! Classical multidimensional scaling and the STRESS criterion.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dissimilarity::DissimilarityMatrix;
use crate::error::{GbmdsError, Result};

/// n points in R^p, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    n: usize,
    p: usize,
    coords: Vec<f64>,
}

impl Configuration {
    pub fn new(n: usize, p: usize, coords: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(GbmdsError::InvalidInput("dimension must be at least 1".into()));
        }
        if coords.len() != n * p {
            return Err(GbmdsError::LengthMismatch {
                left: coords.len(),
                right: n * p,
            });
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(GbmdsError::NonFinite);
        }
        Ok(Self { n, p, coords })
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            coords: vec![0.0; n * p],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut coords = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.len() != p {
                return Err(GbmdsError::LengthMismatch {
                    left: r.len(),
                    right: p,
                });
            }
            coords.extend_from_slice(r);
        }
        Self::new(rows.len(), p, coords)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.p..(i + 1) * self.p]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.p)
    }

    /// The first `k` points.
    pub fn leading(&self, k: usize) -> Self {
        Self {
            n: k,
            p: self.p,
            coords: self.coords[..k * self.p].to_vec(),
        }
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.p];
        for r in self.rows() {
            for (c, v) in c.iter_mut().zip(r) {
                *c += v;
            }
        }
        c.iter_mut().for_each(|c| *c /= self.n as f64);
        c
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.p, &self.coords)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut coords = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            coords.extend(m.row(i).iter());
        }
        Self::new(m.nrows(), m.ncols(), coords)
    }

    /// Euclidean distances between all pairs, lower triangle order.
    pub fn pairwise_euclidean(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n.saturating_sub(1)) / 2);
        for i in 1..self.n {
            for j in 0..i {
                let d: f64 = self
                    .row(i)
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                out.push(d.sqrt());
            }
        }
        out
    }
}

/// Output of [`classical_mds`].
#[derive(Clone, Debug)]
pub struct CmdsResult {
    pub config: Configuration,
    /// Top-p eigenvalues in descending order, before clamping.
    pub eigenvalues: Vec<f64>,
    /// Set when some of the top-p eigenvalues were not positive.
    pub clamped: bool,
}

/// Classical (Torgerson) scaling to `p` dimensions.
pub fn classical_mds(d: &DissimilarityMatrix, p: usize) -> Result<CmdsResult> {
    let n = d.n();
    if p == 0 || p > n - 1 {
        return Err(GbmdsError::InvalidInput(format!(
            "dimension {p} must lie in 1..={}",
            n - 1
        )));
    }
    let d2 = DMatrix::from_fn(n, n, |i, j| {
        let v = d.get(i, j);
        v * v
    });
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand));
    if b.iter().any(|v| !v.is_finite()) {
        return Err(GbmdsError::Eigen);
    }
    let eig = SymmetricEigen::try_new(b, f64::EPSILON, 0).ok_or(GbmdsError::Eigen)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let scale_tol = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-12;
    let mut coords = vec![0.0; n * p];
    let mut eigenvalues = Vec::with_capacity(p);
    let mut clamped = false;
    for (k, &idx) in order.iter().take(p).enumerate() {
        let lambda = eig.eigenvalues[idx];
        eigenvalues.push(lambda);
        if lambda <= scale_tol {
            clamped = true;
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        let s = lambda.sqrt() * sign;
        for i in 0..n {
            coords[i * p + k] = v[i] * s;
        }
    }
    if clamped {
        log::warn!("classical scaling: non-positive eigenvalues among the top {p}; trailing coordinates set to zero");
    }
    let mut config = Configuration::new(n, p, coords)?;
    let c = config.centroid();
    for i in 0..n {
        for (x, c) in config.row_mut(i).iter_mut().zip(&c) {
            *x -= c;
        }
    }
    Ok(CmdsResult {
        config,
        eigenvalues,
        clamped,
    })
}

/// √(Σ(d - δ̂)² / Σd²) over pairs i > j; both arguments in lower-triangle order.
pub fn stress_pairs(d: &[f64], delta_hat: &[f64]) -> Result<f64> {
    if d.len() != delta_hat.len() {
        return Err(GbmdsError::LengthMismatch {
            left: d.len(),
            right: delta_hat.len(),
        });
    }
    let den: f64 = d.iter().map(|v| v * v).sum();
    if !(den > 0.0) {
        return Err(GbmdsError::InvalidInput("STRESS undefined for an all-zero matrix".into()));
    }
    let num: f64 = d.iter().zip(delta_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((num / den).sqrt())
}

/// STRESS of fitted distances `delta_hat` (n×n) against `d`.
pub fn stress(d: &DissimilarityMatrix, delta_hat: &DissimilarityMatrix) -> Result<f64> {
    if d.n() != delta_hat.n() {
        return Err(GbmdsError::LengthMismatch {
            left: d.n(),
            right: delta_hat.n(),
        });
    }
    stress_pairs(&d.lower_triangle(), &delta_hat.lower_triangle())
}
