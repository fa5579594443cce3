//! Dissimilarity matrices built from observation matrices or token sets.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GbmdsError, Result};

const RANGE_TOL: f64 = 1e-12;

/// Pairwise dissimilarity measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
    Jaccard,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Jaccard => "jaccard",
        }
    }

    /// Upper bound on dissimilarities: 1 for the bounded metrics, +∞ otherwise.
    pub fn default_upper_bound(self) -> f64 {
        match self {
            Metric::Euclidean => f64::INFINITY,
            Metric::Cosine | Metric::Jaccard => 1.0,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = GbmdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            "jaccard" => Ok(Metric::Jaccard),
            other => Err(GbmdsError::InvalidInput(format!("unknown metric '{other}'"))),
        }
    }
}

/// Row-major n×q observation matrix with optional column weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows < 3 {
            return Err(GbmdsError::InvalidInput(format!(
                "need at least 3 observations, got {rows}"
            )));
        }
        if cols == 0 {
            return Err(GbmdsError::InvalidInput("observations have no columns".into()));
        }
        if values.len() != rows * cols {
            return Err(GbmdsError::LengthMismatch {
                left: values.len(),
                right: rows * cols,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GbmdsError::NonFinite);
        }
        Ok(Self {
            rows,
            cols,
            values,
            weights: None,
        })
    }

    /// Build from a list of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(GbmdsError::LengthMismatch {
                    left: r.len(),
                    right: cols,
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    /// Attach column weights; they must be nonnegative and sum to 1.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.cols {
            return Err(GbmdsError::LengthMismatch {
                left: weights.len(),
                right: self.cols,
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(GbmdsError::NonFinite);
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(GbmdsError::InvalidInput("column weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > RANGE_TOL {
            return Err(GbmdsError::InvalidInput(format!(
                "column weights sum to {total}, expected 1"
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rows with column weights applied.
    fn weighted_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| match &self.weights {
                Some(w) => self.row(i).iter().zip(w).map(|(x, w)| x * w).collect(),
                None => self.row(i).to_vec(),
            })
            .collect()
    }
}

/// A set of unique string tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSet {
    items: BTreeSet<String>,
    degenerate: bool,
}

impl TokenSet {
    pub fn new<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            items: items.into_iter().map(Into::into).collect(),
            degenerate: false,
        }
    }

    /// Empty set produced from text too short to yield a single n-gram.
    pub fn degenerate() -> Self {
        Self {
            items: BTreeSet::new(),
            degenerate: true,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.items.contains(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(GbmdsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(GbmdsError::NonFinite);
    }
    Ok(())
}

/// Euclidean distance.
pub fn euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Cosine dissimilarity 1 - cos(x, y) for nonnegative vectors.
pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if let Some(&value) = x.iter().chain(y).find(|&&v| v < 0.0) {
        return Err(GbmdsError::NegativeEntry { value });
    }
    let raw = cosine_unchecked(x, y).ok_or(GbmdsError::ZeroNorm)?;
    Ok(raw.clamp(0.0, 1.0))
}

/// 1 - cos(x, y) without range checks or clamping; `None` for a zero vector.
pub(crate) fn cosine_unchecked(x: &[f64], y: &[f64]) -> Option<f64> {
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return None;
    }
    Some(1.0 - dot / (nx.sqrt() * ny.sqrt()))
}

/// Jaccard dissimilarity 1 - |a ∩ b| / |a ∪ b|.
pub fn jaccard(a: &TokenSet, b: &TokenSet) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(GbmdsError::EmptyTokenSets);
    }
    let inter = a.items.intersection(&b.items).count();
    let union = a.len() + b.len() - inter;
    Ok(1.0 - inter as f64 / union as f64)
}

/// Lowercased, whitespace-split n-grams of `text`.
pub fn ngram_tokenize(text: &str, n: usize) -> Result<TokenSet> {
    ngram_tokenize_filtered(text, n, &HashSet::new())
}

/// As [`ngram_tokenize`], dropping any word in `stop_words` before forming n-grams.
pub fn ngram_tokenize_filtered(
    text: &str,
    n: usize,
    stop_words: &HashSet<String>,
) -> Result<TokenSet> {
    if n == 0 {
        return Err(GbmdsError::InvalidInput("n-gram length must be at least 1".into()));
    }
    let words: Vec<String> = text
        .split_whitespace()
        .map(str::to_lowercase)
        .filter(|w| !stop_words.contains(w))
        .collect();
    if words.len() < n {
        return Ok(TokenSet::degenerate());
    }
    Ok(TokenSet::new(words.windows(n).map(|w| w.join(" "))))
}

/// Raw input for [`build_matrix`].
#[derive(Clone, Copy, Debug)]
pub enum Observations<'a> {
    Data(&'a DataMatrix),
    Tokens(&'a [TokenSet]),
}

impl Observations<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Observations::Data(_) => "numeric observations",
            Observations::Tokens(_) => "token sets",
        }
    }
}

/// Symmetric n×n matrix of observed dissimilarities.
#[derive(Clone, Debug, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    metric: Metric,
    upper: f64,
}

impl DissimilarityMatrix {
    /// Validate a full row-major matrix. Asymmetry up to 1e-12 is averaged out.
    pub fn from_full(n: usize, mut values: Vec<f64>, metric: Metric, upper: f64) -> Result<Self> {
        if values.len() != n * n {
            return Err(GbmdsError::LengthMismatch {
                left: values.len(),
                right: n * n,
            });
        }
        if n < 2 {
            return Err(GbmdsError::InvalidInput("need at least 2 objects".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GbmdsError::NonFinite);
        }
        if !(upper > 0.0) {
            return Err(GbmdsError::InvalidInput(format!("upper bound {upper} must be positive")));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(GbmdsError::InvalidInput(format!(
                    "diagonal entry ({i}, {i}) is {}, expected 0",
                    values[i * n + i]
                )));
            }
            for j in 0..i {
                let a = values[i * n + j];
                let b = values[j * n + i];
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > RANGE_TOL * scale {
                    return Err(GbmdsError::InvalidInput(format!(
                        "matrix not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                let v = 0.5 * (a + b);
                if v < 0.0 {
                    return Err(GbmdsError::InvalidInput(format!(
                        "negative dissimilarity {v} at ({i}, {j})"
                    )));
                }
                if v > upper * (1.0 + RANGE_TOL) {
                    return Err(GbmdsError::InvalidInput(format!(
                        "dissimilarity {v} at ({i}, {j}) exceeds upper bound {upper}"
                    )));
                }
                let v = v.min(upper);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(Self {
            n,
            values,
            metric,
            upper,
        })
    }

    /// Same entries with a different upper bound.
    pub fn with_upper_bound(self, upper: f64) -> Result<Self> {
        let DissimilarityMatrix { n, values, metric, .. } = self;
        Self::from_full(n, values, metric, upper)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Full row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Number of distinct pairs n(n-1)/2.
    pub fn pair_count(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    /// Lower-triangle entries ordered (1,0), (2,0), (2,1), (3,0), ...
    pub fn lower_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pair_count());
        for i in 1..self.n {
            for j in 0..i {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// The block over the first `k` objects.
    pub fn leading(&self, k: usize) -> Result<Self> {
        if k < 2 || k > self.n {
            return Err(GbmdsError::InvalidInput(format!(
                "leading block of size {k} out of range for n = {}",
                self.n
            )));
        }
        let mut values = Vec::with_capacity(k * k);
        for i in 0..k {
            values.extend_from_slice(&self.values[i * self.n..i * self.n + k]);
        }
        Ok(Self {
            n: k,
            values,
            metric: self.metric,
            upper: self.upper,
        })
    }

    /// Σ_{i>j} d_ij².
    pub fn sum_sq(&self) -> f64 {
        self.lower_triangle().iter().map(|d| d * d).sum()
    }
}

/// Apply `metric` to every pair of observations.
pub fn build_matrix(obs: Observations<'_>, metric: Metric) -> Result<DissimilarityMatrix> {
    let incompatible = || GbmdsError::IncompatibleMetric {
        metric: metric.name().into(),
        input: obs.kind().into(),
    };
    let n = match obs {
        Observations::Data(d) => d.rows(),
        Observations::Tokens(t) => t.len(),
    };
    if n < 3 {
        return Err(GbmdsError::InvalidInput(format!(
            "need at least 3 observations, got {n}"
        )));
    }
    let pair_fn: Box<dyn Fn(usize, usize) -> Result<f64> + Sync> = match (obs, metric) {
        (Observations::Data(data), Metric::Euclidean | Metric::Cosine) => {
            let rows = data.weighted_rows();
            Box::new(move |i, j| {
                if metric == Metric::Euclidean {
                    euclidean(&rows[i], &rows[j])
                } else {
                    cosine(&rows[i], &rows[j])
                }
            })
        }
        (Observations::Tokens(sets), Metric::Jaccard) => Box::new(move |i, j| jaccard(&sets[i], &sets[j])),
        _ => return Err(incompatible()),
    };
    let rows: Vec<Vec<f64>> = (1..n)
        .into_par_iter()
        .map(|i| {
            (0..i)
                .map(|j| pair_fn(i, j).map_err(|e| e.at_pair(i, j)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; n * n];
    for (i, row) in (1..n).zip(rows) {
        for (j, v) in row.into_iter().enumerate() {
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    DissimilarityMatrix::from_full(n, values, metric, metric.default_upper_bound())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean(&[1.0, 2.0, 3.0], &[4.0, 6.0, 3.0]).unwrap(), 5.0);
        assert_eq!(euclidean(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(matches!(
            euclidean(&[1.0], &[1.0, 2.0]),
            Err(GbmdsError::LengthMismatch { .. })
        ));
        assert_eq!(euclidean(&[f64::NAN], &[1.0]), Err(GbmdsError::NonFinite));
    }

    #[test]
    fn cosine_examples() {
        assert!(cosine(&[1.0, 2.0], &[3.0, 6.0]).unwrap().abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let v = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(GbmdsError::ZeroNorm));
        assert!(matches!(
            cosine(&[-1.0, 0.0], &[1.0, 0.0]),
            Err(GbmdsError::NegativeEntry { .. })
        ));
    }

    #[test]
    fn jaccard_examples() {
        let a = TokenSet::new(["u", "v", "w"]);
        let b = TokenSet::new(["v", "w", "x"]);
        let c = TokenSet::new(["p"]);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.5);
        assert_eq!(jaccard(&a, &a).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &c).unwrap(), 1.0);
        assert_eq!(
            jaccard(&TokenSet::default(), &TokenSet::default()),
            Err(GbmdsError::EmptyTokenSets)
        );
    }

    #[test]
    fn ngrams() {
        let t = ngram_tokenize("a b c", 2).unwrap();
        assert_eq!(t.iter().collect::<Vec<_>>(), vec!["a b", "b c"]);
        let t = ngram_tokenize("A a a", 2).unwrap();
        assert_eq!(t.iter().collect::<Vec<_>>(), vec!["a a"]);
        let t = ngram_tokenize("x", 2).unwrap();
        assert!(t.is_degenerate() && t.is_empty());
        let stop: HashSet<String> = ["the".to_string()].into();
        let t = ngram_tokenize_filtered("the cat the hat", 2, &stop).unwrap();
        assert_eq!(t.iter().collect::<Vec<_>>(), vec!["cat hat"]);
    }

    #[test]
    fn build_euclidean() {
        let data = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 8.0]]).unwrap();
        let d = build_matrix(Observations::Data(&data), Metric::Euclidean).unwrap();
        assert_eq!(d.lower_triangle(), vec![5.0, 8.0, 5.0]);
        assert_eq!(d.upper_bound(), f64::INFINITY);
        let same = DataMatrix::from_rows(&vec![vec![1.0, 2.0]; 3]).unwrap();
        let d = build_matrix(Observations::Data(&same), Metric::Euclidean).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn build_rejects_incompatible_metric() {
        let data = DataMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(matches!(
            build_matrix(Observations::Data(&data), Metric::Jaccard),
            Err(GbmdsError::IncompatibleMetric { .. })
        ));
    }

    #[test]
    fn build_reports_offending_pair() {
        let data = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        match build_matrix(Observations::Data(&data), Metric::Cosine) {
            Err(GbmdsError::Pair { i: 1, j: 0, source }) => assert_eq!(*source, GbmdsError::ZeroNorm),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weights_scale_columns() {
        let data = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]])
            .unwrap()
            .with_weights(vec![0.25, 0.75])
            .unwrap();
        let d = build_matrix(Observations::Data(&data), Metric::Euclidean).unwrap();
        assert_eq!(d.get(1, 0), 0.5);
        assert_eq!(d.get(2, 0), 1.5);
        assert!(DataMatrix::from_rows(&vec![vec![0.0, 0.0]; 3])
            .unwrap()
            .with_weights(vec![0.5, 0.6])
            .is_err());
    }

    #[test]
    fn leading_block() {
        let data = DataMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![6.0]]).unwrap();
        let d = build_matrix(Observations::Data(&data), Metric::Euclidean).unwrap();
        let l = d.leading(3).unwrap();
        assert_eq!(l.lower_triangle(), vec![1.0, 3.0, 2.0]);
        assert_eq!(&d.lower_triangle()[..3], l.lower_triangle().as_slice());
    }
}
