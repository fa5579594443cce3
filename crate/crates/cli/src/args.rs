//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gbmds::dissimilarity::Metric;
use gbmds::harness::ExperimentName;
use gbmds::model::{Family, HyperOverrides};
use gbmds::smc::{KernelConfig, KernelScheme, SmcConfig};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "gbmds", version, about = "Bayesian multidimensional scaling with annealed SMC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a dissimilarity matrix from raw observations.
    Dissim(DissimArgs),
    /// Fit one model.
    Fit(FitArgs),
    /// Fit a grid of families and dimensions and rank them by evidence.
    Compare(CompareArgs),
    /// Fit objects batch by batch.
    Incremental(IncrementalArgs),
    /// Generate a simulation protocol and compare the relevant models.
    Experiment(ExperimentArgs),
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: gbmds::GbmdsError| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: gbmds::GbmdsError| e.to_string())
}

fn parse_experiment(s: &str) -> Result<ExperimentName, String> {
    s.parse().map_err(|e: gbmds::GbmdsError| e.to_string())
}

/// A list of latent dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Dims(pub Vec<usize>);

fn parse_dims_arg(s: &str) -> Result<Dims, String> {
    parse_dims(s).map(Dims)
}

/// "2-7" or "2,3,5".
pub fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("bad dimension list '{s}'");
    let dims: Vec<usize> = if let Some((a, b)) = s.split_once('-') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if dims.is_empty() || dims.contains(&0) {
        return Err(bad());
    }
    Ok(dims)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Newton,
    Row,
    Joint,
}

/// Where the observations come from.
#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Square dissimilarity matrix (CSV).
    #[arg(long, group = "source")]
    pub matrix: Option<PathBuf>,
    /// Numeric observations, one per row (CSV).
    #[arg(long, group = "source")]
    pub data: Option<PathBuf>,
    /// Documents, one per line, compared by word n-gram Jaccard distance.
    #[arg(long, group = "source")]
    pub text: Option<PathBuf>,
    /// Metric of the observed dissimilarities [default: jaccard for --text,
    /// euclidean otherwise].
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Metric>,
    /// Word n-gram length for --text.
    #[arg(long, default_value_t = 1)]
    pub ngram: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EngineArgs {
    /// Number of particles K.
    #[arg(long, default_value_t = 200)]
    pub particles: usize,
    /// rCESS threshold φ.
    #[arg(long, default_value_t = 0.8)]
    pub phi: f64,
    /// Resampling threshold ε on the relative ESS.
    #[arg(long, default_value_t = 0.5)]
    pub ess_threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random-walk step constant [default: 2.38²/p].
    #[arg(long)]
    pub cstep: Option<f64>,
    /// Fraction of objects updated per kernel sweep.
    #[arg(long, default_value_t = 1.0)]
    pub subset_fraction: f64,
    /// Kernel sweeps per annealing step.
    #[arg(long, default_value_t = 1)]
    pub sweeps: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Newton)]
    pub kernel: KernelArg,
    #[arg(long, default_value_t = 10_000)]
    pub max_iterations: usize,
    /// Worker threads [default: available parallelism]. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl EngineArgs {
    pub fn config(&self) -> SmcConfig {
        let defaults = KernelConfig::default();
        SmcConfig {
            particles: self.particles,
            rcess_threshold: self.phi,
            ess_threshold: self.ess_threshold,
            seed: self.seed,
            max_iterations: self.max_iterations,
            threads: self.threads,
            kernel: KernelConfig {
                cstep: self.cstep,
                subset_fraction: self.subset_fraction,
                sweeps: self.sweeps,
                scheme: match self.kernel {
                    KernelArg::Newton => KernelScheme::Newton,
                    KernelArg::Row => KernelScheme::RowWise,
                    KernelArg::Joint => KernelScheme::Joint,
                },
                ..defaults
            },
            ..SmcConfig::default()
        }
    }
}

/// Overrides of the empirical-Bayes prior settings.
#[derive(Debug, Clone, Args, Serialize)]
pub struct PriorArgs {
    /// Inverse-gamma shape of σ².
    #[arg(long)]
    pub prior_a: Option<f64>,
    /// Inverse-gamma scale of σ².
    #[arg(long)]
    pub prior_b: Option<f64>,
    /// Lower bound of ψ.
    #[arg(long)]
    pub prior_c: Option<f64>,
    /// Upper bound of ψ.
    #[arg(long)]
    pub prior_d: Option<f64>,
    /// Inverse-gamma shape of each λ_k.
    #[arg(long)]
    pub prior_alpha: Option<f64>,
    /// Inverse-gamma scale of every λ_k.
    #[arg(long)]
    pub prior_beta: Option<f64>,
    /// Degrees of freedom of the Student-t mixture.
    #[arg(long)]
    pub prior_nu: Option<f64>,
}

impl PriorArgs {
    pub fn overrides(&self) -> HyperOverrides {
        HyperOverrides {
            a: self.prior_a,
            b: self.prior_b,
            c: self.prior_c,
            d: self.prior_d,
            alpha: self.prior_alpha,
            beta: self.prior_beta,
            nu: self.prior_nu,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "GBMDS_OUT", default_value = "gbmds-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_family, default_value = "tn")]
    pub family: Family,
    /// Latent metric [default: euclidean for jaccard data, else the data metric].
    #[arg(long, value_parser = parse_metric)]
    pub latent_metric: Option<Metric>,
}

#[derive(Debug, Args, Serialize)]
pub struct DissimArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Credible level of the per-object regions.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Align samples by rotation and translation only.
    #[arg(long)]
    pub no_scale: bool,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated families.
    #[arg(long, value_parser = parse_family, value_delimiter = ',', default_value = "tn,tsn,tt")]
    pub families: Vec<Family>,
    /// Dimensions as "2-7" or "2,3,5".
    #[arg(long, value_parser = parse_dims_arg, default_value = "2")]
    pub dims: Dims,
    #[arg(long, value_parser = parse_metric)]
    pub latent_metric: Option<Metric>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct IncrementalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Cumulative batch boundaries, e.g. "10,15".
    #[arg(long, group = "plan")]
    pub batches: Option<String>,
    /// Uniform batch size.
    #[arg(long, group = "plan")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub no_scale: bool,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    /// known-dimension, skewed-errors or outliers.
    #[arg(value_parser = parse_experiment)]
    pub name: ExperimentName,
    /// key=value file overriding the protocol defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Extra key=value overrides, applied after --spec.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Use the 5%/2% contamination rates for skewed-errors.
    #[arg(long)]
    pub supplementary: bool,
    /// Dimensions to compare [default: 2-7 for known-dimension, 2 otherwise].
    #[arg(long, value_parser = parse_dims_arg)]
    pub dims: Option<Dims>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub out: OutArgs,
}
