//! Seeded simulation generators for the three benchmark protocols, plus a
//! small synthetic text corpus.
//!
//! Every generator is a pure function of its arguments.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cmds::Configuration;
use crate::dissimilarity::{build_matrix, euclidean, DataMatrix, DissimilarityMatrix, Metric, Observations};
use crate::error::{GbmdsError, Result};
use crate::model::pair_from_index;
use crate::smc::{stream, stream_rng, SmcRng};

const GEN_KNOWN_DIMENSION: u64 = 1;
const GEN_SKEWED: u64 = 2;
const GEN_OUTLIERS: u64 = 3;
const GEN_CORPUS: u64 = 4;

/// Named simulation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    KnownDimension,
    SkewedErrors,
    Outliers,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 3] = [
        ExperimentName::KnownDimension,
        ExperimentName::SkewedErrors,
        ExperimentName::Outliers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentName::KnownDimension => "known-dimension",
            ExperimentName::SkewedErrors => "skewed-errors",
            ExperimentName::Outliers => "outliers",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentName {
    type Err = GbmdsError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| GbmdsError::InvalidInput(format!("unknown experiment '{s}'")))
    }
}

/// Fractions of observations hit by moderate N(10, 1) and large N(20, 1)
/// measurement errors in the skewed-error generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub moderate: f64,
    pub large: f64,
}

impl Contamination {
    /// 20% moderate, 2% large.
    pub const MAIN_TEXT: Contamination = Contamination {
        moderate: 0.20,
        large: 0.02,
    };
    /// 5% moderate, 2% large.
    pub const SUPPLEMENTARY: Contamination = Contamination {
        moderate: 0.05,
        large: 0.02,
    };
    pub const NONE: Contamination = Contamination {
        moderate: 0.0,
        large: 0.0,
    };

    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.moderate)
            && (0.0..=1.0).contains(&self.large)
            && self.moderate + self.large <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(GbmdsError::InvalidInput(format!(
                "contamination fractions {} and {} must be in [0, 1] and sum to at most 1",
                self.moderate, self.large
            )))
        }
    }
}

/// Parameters of one simulation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub n: usize,
    /// Dimension of the generating latent points.
    pub p_true: usize,
    /// Standard deviation of the Gaussian noise on distances (known-dimension,
    /// outliers) or on coordinates (skewed-errors).
    pub noise_sd: f64,
    pub contamination: Contamination,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Desk-scale defaults for a protocol.
    pub fn defaults(name: ExperimentName) -> Self {
        match name {
            ExperimentName::KnownDimension => Self {
                name,
                n: 50,
                p_true: 5,
                noise_sd: 1.0,
                contamination: Contamination::NONE,
                outlier_fraction: 0.0,
                seed: 0,
            },
            ExperimentName::SkewedErrors => Self {
                name,
                n: 60,
                p_true: 20,
                noise_sd: 1.0,
                contamination: Contamination::MAIN_TEXT,
                outlier_fraction: 0.0,
                seed: 0,
            },
            ExperimentName::Outliers => Self {
                name,
                n: 60,
                p_true: 10,
                noise_sd: 0.5,
                contamination: Contamination::NONE,
                outlier_fraction: 0.15,
                seed: 0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min_n = match self.name {
            ExperimentName::SkewedErrors => 20,
            _ => 10,
        };
        if self.n < min_n {
            return Err(GbmdsError::InvalidInput(format!(
                "{} needs n >= {min_n}, got {}",
                self.name, self.n
            )));
        }
        if self.p_true == 0 {
            return Err(GbmdsError::InvalidInput("p_true must be positive".into()));
        }
        if !(self.noise_sd > 0.0) || !self.noise_sd.is_finite() {
            return Err(GbmdsError::InvalidInput("noise_sd must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(GbmdsError::InvalidInput(format!(
                "outlier fraction {} outside [0, 1)",
                self.outlier_fraction
            )));
        }
        self.contamination.validate()
    }

    /// Parse `key = value` lines; `#` starts a comment. `name` is required
    /// and every other key overrides the protocol default.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                GbmdsError::InvalidInput(format!("line {}: expected key=value", lineno + 1))
            })?;
            pairs.push((lineno + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let name = pairs
            .iter()
            .find(|(_, k, _)| k == "name")
            .ok_or_else(|| GbmdsError::InvalidInput("missing 'name'".into()))?
            .2
            .parse()?;
        let mut spec = Self::defaults(name);
        for (lineno, k, v) in &pairs {
            spec.set(k, v)
                .map_err(|e| GbmdsError::InvalidInput(format!("line {lineno}: {e}")))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Override one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| GbmdsError::InvalidInput(format!("bad value '{v}' for '{key}'")))
        }
        match key {
            "name" => self.name = value.parse()?,
            "n" => self.n = num(key, value)?,
            "p_true" => self.p_true = num(key, value)?,
            "noise_sd" => self.noise_sd = num(key, value)?,
            "moderate" => self.contamination.moderate = num(key, value)?,
            "large" => self.contamination.large = num(key, value)?,
            "outlier_fraction" => self.outlier_fraction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "supplementary" => {
                if num::<bool>(key, value)? {
                    self.contamination = Contamination::SUPPLEMENTARY;
                }
            }
            _ => return Err(GbmdsError::InvalidInput(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Generate the dissimilarities for this protocol.
    pub fn generate(&self) -> Result<GeneratedData> {
        self.validate()?;
        Ok(match self.name {
            ExperimentName::KnownDimension => {
                let (x, d) = known_dimension_with(self.n, self.p_true, self.noise_sd, self.seed);
                GeneratedData {
                    d,
                    x_true: Some(x),
                }
            }
            ExperimentName::SkewedErrors => {
                let s = skewed_errors_with(self.n, self.p_true, self.contamination, self.seed);
                GeneratedData {
                    d: s.d,
                    x_true: None,
                }
            }
            ExperimentName::Outliers => {
                let o = outliers_with(self.n, self.p_true, self.noise_sd, self.outlier_fraction, self.seed);
                GeneratedData {
                    d: o.d,
                    x_true: Some(o.x_true),
                }
            }
        })
    }
}

/// Generator output common to all protocols.
#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub d: DissimilarityMatrix,
    pub x_true: Option<Configuration>,
}

fn generator_rng(seed: u64, generator: u64) -> SmcRng {
    stream_rng(seed, stream::HARNESS, generator, 0)
}

fn gaussian_points(n: usize, p: usize, rng: &mut SmcRng) -> Configuration {
    let coords = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    Configuration::new(n, p, coords).expect("shape matches")
}

/// Draw N(mean, sd²) conditioned on being positive, by redrawing.
fn positive_normal(mean: f64, sd: f64, rng: &mut SmcRng) -> f64 {
    loop {
        let v = mean + sd * rng.sample::<f64, _>(StandardNormal);
        if v > 0.0 {
            return v;
        }
    }
}

fn noisy_distances(x: &Configuration, sd: f64, rng: &mut SmcRng) -> DissimilarityMatrix {
    let n = x.n();
    let mut values = vec![0.0; n * n];
    for i in 1..n {
        for j in 0..i {
            let delta = euclidean(x.row(i), x.row(j)).expect("equal lengths");
            let d = positive_normal(delta, sd, rng);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DissimilarityMatrix::from_full(n, values, Metric::Euclidean, f64::INFINITY).expect("valid by construction")
}

/// Five-dimensional N(0, I) points; d_ij ~ N(δ_ij, 1) truncated at zero.
pub fn gen_known_dimension(n: usize, seed: u64) -> Result<(Configuration, DissimilarityMatrix)> {
    if n < 10 {
        return Err(GbmdsError::InvalidInput(format!("need n >= 10, got {n}")));
    }
    Ok(known_dimension_with(n, 5, 1.0, seed))
}

pub fn known_dimension_with(n: usize, p: usize, sd: f64, seed: u64) -> (Configuration, DissimilarityMatrix) {
    let mut rng = generator_rng(seed, GEN_KNOWN_DIMENSION);
    let x = gaussian_points(n, p, &mut rng);
    let d = noisy_distances(&x, sd, &mut rng);
    (x, d)
}

/// Output of the skewed-error generator.
#[derive(Clone, Debug)]
pub struct SkewedErrorData {
    /// Accurate observations.
    pub x_true: DataMatrix,
    /// Observations after measurement error.
    pub z: DataMatrix,
    /// Euclidean dissimilarities of `z`.
    pub d: DissimilarityMatrix,
    /// Euclidean dissimilarities of `x_true`.
    pub d_true: DissimilarityMatrix,
    pub moderate: Vec<usize>,
    pub large: Vec<usize>,
}

impl SkewedErrorData {
    /// d_ij - d̃_ij over all pairs.
    pub fn errors(&self) -> Vec<f64> {
        self.d
            .lower_triangle()
            .iter()
            .zip(self.d_true.lower_triangle())
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// 20-dimensional mixture observations with systematic and gross errors,
/// using the main-text contamination fractions.
pub fn gen_skewed_errors(n: usize, seed: u64) -> Result<SkewedErrorData> {
    gen_skewed_errors_with(n, Contamination::MAIN_TEXT, seed)
}

pub fn gen_skewed_errors_with(n: usize, contamination: Contamination, seed: u64) -> Result<SkewedErrorData> {
    if n < 20 {
        return Err(GbmdsError::InvalidInput(format!("need n >= 20, got {n}")));
    }
    contamination.validate()?;
    Ok(skewed_errors_with(n, 20, contamination, seed))
}

fn skewed_errors_with(n: usize, dim: usize, contamination: Contamination, seed: u64) -> SkewedErrorData {
    let mut rng = generator_rng(seed, GEN_SKEWED);
    let components = [
        Normal::new(0.0, 1.0).expect("valid"),
        Normal::new(100.0, 10f64.sqrt()).expect("valid"),
        Normal::new(-10.0, 1.0).expect("valid"),
    ];
    let mut x = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let u: f64 = rng.random();
        let c = if u < 0.5 {
            0
        } else if u < 0.75 {
            1
        } else {
            2
        };
        x.extend((0..dim).map(|_| components[c].sample(&mut rng)));
    }
    let mut z: Vec<f64> = x
        .iter()
        .map(|v| v + rng.sample::<f64, _>(StandardNormal))
        .collect();

    let n_moderate = (contamination.moderate * n as f64).round() as usize;
    let n_large = (contamination.large * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut moderate = order[..n_moderate].to_vec();
    let mut large = order[n_moderate..n_moderate + n_large].to_vec();
    moderate.sort_unstable();
    large.sort_unstable();
    for (rows, shift) in [(&moderate, 10.0), (&large, 20.0)] {
        for &i in rows.iter() {
            for v in &mut z[i * dim..(i + 1) * dim] {
                *v += shift + rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    let x_true = DataMatrix::new(n, dim, x).expect("shape matches");
    let z = DataMatrix::new(n, dim, z).expect("shape matches");
    let d = build_matrix(Observations::Data(&z), Metric::Euclidean).expect("finite data");
    let d_true = build_matrix(Observations::Data(&x_true), Metric::Euclidean).expect("finite data");
    SkewedErrorData {
        x_true,
        z,
        d,
        d_true,
        moderate,
        large,
    }
}

/// Output of the outlier generator.
#[derive(Clone, Debug)]
pub struct OutlierData {
    pub x_true: Configuration,
    /// Dissimilarities before doubling.
    pub base: DissimilarityMatrix,
    pub d: DissimilarityMatrix,
    /// Doubled pairs as (i, j) with i > j.
    pub doubled: Vec<(usize, usize)>,
}

/// Ten-dimensional N(0, I) points, N(δ, 0.5²) distances truncated at zero,
/// and a random `fraction` of pairs doubled.
pub fn gen_outliers(n: usize, fraction: f64, seed: u64) -> Result<OutlierData> {
    if n < 2 {
        return Err(GbmdsError::InvalidInput(format!("need n >= 2, got {n}")));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(GbmdsError::InvalidInput(format!("outlier fraction {fraction} outside [0, 1)")));
    }
    Ok(outliers_with(n, 10, 0.5, fraction, seed))
}

fn outliers_with(n: usize, p: usize, sd: f64, fraction: f64, seed: u64) -> OutlierData {
    let mut rng = generator_rng(seed, GEN_OUTLIERS);
    let x_true = gaussian_points(n, p, &mut rng);
    let base = noisy_distances(&x_true, sd, &mut rng);
    let m = n * (n - 1) / 2;
    let count = (fraction * m as f64).round() as usize;
    let mut picked = rand::seq::index::sample(&mut rng, m, count).into_vec();
    picked.sort_unstable();
    let mut values = base.as_slice().to_vec();
    let doubled: Vec<(usize, usize)> = picked.into_iter().map(pair_from_index).collect();
    for &(i, j) in &doubled {
        values[i * n + j] *= 2.0;
        values[j * n + i] *= 2.0;
    }
    let d = DissimilarityMatrix::from_full(n, values, Metric::Euclidean, f64::INFINITY).expect("valid by construction");
    OutlierData {
        x_true,
        base,
        d,
        doubled,
    }
}

/// A synthetic bag-of-words corpus with a few latent topics.
#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub vocabulary: Vec<String>,
    pub documents: Vec<String>,
    pub topics: Vec<usize>,
    /// Word counts, one row per document.
    pub counts: DataMatrix,
}

const TOPIC_WORDS: [[&str; 8]; 3] = [
    ["river", "boat", "water", "fish", "bank", "stream", "shore", "sail"],
    ["market", "price", "trade", "stock", "bank", "money", "share", "loan"],
    ["forest", "tree", "leaf", "bird", "trail", "moss", "pine", "stream"],
];
const COMMON_WORDS: [&str; 4] = ["day", "time", "people", "place"];

/// `n` documents of `length` tokens; document i draws from topic i mod 3
/// with probability 0.7 per token, otherwise from the whole vocabulary.
pub fn toy_corpus(n: usize, length: usize, seed: u64) -> Result<ToyCorpus> {
    if n < 2 || length == 0 {
        return Err(GbmdsError::InvalidInput("need at least two non-empty documents".into()));
    }
    let mut vocabulary: Vec<String> = TOPIC_WORDS
        .iter()
        .flatten()
        .chain(COMMON_WORDS.iter())
        .map(|s| s.to_string())
        .collect();
    vocabulary.sort();
    vocabulary.dedup();
    let index = |w: &str| vocabulary.binary_search_by(|v| v.as_str().cmp(w)).expect("known word");

    let mut rng = generator_rng(seed, GEN_CORPUS);
    let v = vocabulary.len();
    let mut counts = vec![0.0; n * v];
    let mut documents = Vec::with_capacity(n);
    let mut topics = Vec::with_capacity(n);
    for doc in 0..n {
        let topic = doc % TOPIC_WORDS.len();
        let mut words = Vec::with_capacity(length);
        for _ in 0..length {
            let w = if rng.random::<f64>() < 0.7 {
                TOPIC_WORDS[topic][rng.random_range(0..TOPIC_WORDS[topic].len())]
            } else {
                vocabulary[rng.random_range(0..v)].as_str()
            };
            counts[doc * v + index(w)] += 1.0;
            words.push(w);
        }
        documents.push(words.join(" "));
        topics.push(topic);
    }
    Ok(ToyCorpus {
        counts: DataMatrix::new(n, v, counts)?,
        vocabulary,
        documents,
        topics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_dimension_is_reproducible_and_positive() {
        let (_, a) = gen_known_dimension(20, 3).unwrap();
        let (_, b) = gen_known_dimension(20, 3).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert!(a.lower_triangle().iter().all(|&v| v > 0.0));
        assert!(gen_known_dimension(9, 0).is_err());
    }

    #[test]
    fn contamination_counts() {
        let s = gen_skewed_errors(50, 1).unwrap();
        assert_eq!(s.moderate.len(), 10);
        assert_eq!(s.large.len(), 1);
        let s = gen_skewed_errors_with(100, Contamination::SUPPLEMENTARY, 1).unwrap();
        assert_eq!((s.moderate.len(), s.large.len()), (5, 2));
        assert!(s.moderate.iter().all(|i| !s.large.contains(i)));
    }

    #[test]
    fn zero_fraction_leaves_base_intact() {
        let o = gen_outliers(15, 0.0, 2).unwrap();
        assert!(o.doubled.is_empty());
        assert_eq!(o.base.as_slice(), o.d.as_slice());
    }

    #[test]
    fn doubled_pairs() {
        let o = gen_outliers(20, 0.15, 2).unwrap();
        assert_eq!(o.doubled.len(), (0.15f64 * 190.0).round() as usize);
        for &(i, j) in &o.doubled {
            assert_eq!(o.d.get(i, j), 2.0 * o.base.get(i, j));
            assert_eq!(o.d.get(i, j), o.d.get(j, i));
        }
    }

    #[test]
    fn spec_parsing() {
        let s = ExperimentSpec::parse("# outliers\nname = outliers\nn=30\noutlier_fraction = 0.05\nseed=9\n").unwrap();
        assert_eq!(s.name, ExperimentName::Outliers);
        assert_eq!((s.n, s.seed, s.p_true), (30, 9, 10));
        assert_eq!(s.outlier_fraction, 0.05);
        let s = ExperimentSpec::parse("name=skewed-errors\nsupplementary=true").unwrap();
        assert_eq!(s.contamination, Contamination::SUPPLEMENTARY);
        assert!(ExperimentSpec::parse("n=30").is_err());
        assert!(ExperimentSpec::parse("name=outliers\nbogus=1").is_err());
        assert!(ExperimentSpec::parse("name=known-dimension\nn=5").is_err());
    }

    #[test]
    fn corpus_shape() {
        let c = toy_corpus(15, 40, 0).unwrap();
        assert_eq!(c.counts.rows(), 15);
        for i in 0..15 {
            assert_eq!(c.counts.row(i).iter().sum::<f64>(), 40.0);
        }
        assert_eq!(c.documents[0].split(' ').count(), 40);
    }
}
