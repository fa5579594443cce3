//! Subcommand implementations.

use anyhow::{bail, Context, Result};
use gbmds::adaptive::{run_adaptive, BatchPlan};
use gbmds::dissimilarity::{
    build_matrix, ngram_tokenize, DissimilarityMatrix, Metric, Observations, TokenSet,
};
use gbmds::harness::{ExperimentName, ExperimentSpec};
use gbmds::model::{Family, HyperOverrides, ModelSpec};
use gbmds::postprocess::{
    bayes_factor, fit as run_fit, sweep, ComparisonTable, FitOptions, FitResult, Moments, SweepGrid,
};
use gbmds::smc::SmcConfig;
use gbmds::GbmdsError;
use serde::Serialize;

use crate::args::{
    CompareArgs, DissimArgs, EngineArgs, ExperimentArgs, FitArgs, IncrementalArgs, InputArgs,
};
use crate::io::{self, OutputDir};

/// 2 input error, 3 numerical failure, 4 iteration cap.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<GbmdsError>()) {
        Some(g) if g.is_iteration_cap() => 4,
        Some(g) if g.is_numerical() => 3,
        _ => 2,
    }
}

/// The error chain joined by ": ", skipping causes that the previous
/// message already spells out.
pub fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a C,
    outputs: &'a [String],
}

fn write_manifest<C: Serialize>(out: &mut OutputDir, command: &'static str, seed: u64, config: &C) -> Result<()> {
    let mut outputs = out.written().to_vec();
    outputs.push("manifest.json".into());
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
        outputs: &outputs,
    };
    out.json("manifest.json", &m)
}

fn init_threads(engine: &EngineArgs) -> Result<()> {
    if let Some(t) = engine.threads {
        if t == 0 {
            bail!(GbmdsError::InvalidInput("thread count must be positive".into()));
        }
        // The global pool can only be configured once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn data_metric(input: &InputArgs) -> Metric {
    input.metric.unwrap_or(if input.text.is_some() {
        Metric::Jaccard
    } else {
        Metric::Euclidean
    })
}

fn documents_to_tokens(docs: &[String], n: usize) -> Result<Vec<TokenSet>> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| ngram_tokenize(d, n).with_context(|| format!("document on line {}", i + 1)))
        .collect()
}

/// Dissimilarities from whichever input was given.
fn load(input: &InputArgs) -> Result<DissimilarityMatrix> {
    let metric = data_metric(input);
    if let Some(p) = &input.matrix {
        return io::read_matrix(p, metric);
    }
    if let Some(p) = &input.data {
        let data = io::read_data(p)?;
        return Ok(build_matrix(Observations::Data(&data), metric)?);
    }
    if let Some(p) = &input.text {
        let docs = io::read_documents(p)?;
        let tokens = documents_to_tokens(&docs, input.ngram)?;
        return Ok(build_matrix(Observations::Tokens(&tokens), metric)?);
    }
    bail!(GbmdsError::InvalidInput("one of --matrix, --data or --text is required".into()))
}

/// Jaccard dissimilarities are embedded in Euclidean space.
fn latent_metric(observed: Metric, requested: Option<Metric>) -> Metric {
    requested.unwrap_or(match observed {
        Metric::Jaccard => Metric::Euclidean,
        m => m,
    })
}

pub fn dissim(args: &DissimArgs) -> Result<()> {
    if args.input.matrix.is_some() {
        bail!(GbmdsError::InvalidInput("dissim takes --data or --text".into()));
    }
    let d = load(&args.input)?;
    let mut out = OutputDir::create(&args.out.out)?;
    out.matrix("dissimilarity.csv", &d)?;
    write_manifest(&mut out, "dissim", 0, args)
}

#[derive(Serialize)]
struct FitSummary {
    family: Family,
    metric: Metric,
    dim: usize,
    n: usize,
    seed: u64,
    log_evidence: f64,
    stress: f64,
    cmds_stress: f64,
    iterations: usize,
    mean_acceptance: f64,
    sigma2: Moments,
    psi: Moments,
    hyper: gbmds::model::HyperParams,
}

impl FitSummary {
    fn of(r: &FitResult) -> Self {
        Self {
            family: r.spec.family,
            metric: r.spec.metric,
            dim: r.spec.dim,
            n: r.mode.n(),
            seed: r.seed,
            log_evidence: r.log_evidence,
            stress: r.stress,
            cmds_stress: r.cmds_stress,
            iterations: r.iterations(),
            mean_acceptance: r.mean_acceptance,
            sigma2: r.sigma2,
            psi: r.psi,
            hyper: r.hyper.clone(),
        }
    }
}

fn write_fit(out: &mut OutputDir, prefix: &str, r: &FitResult) -> Result<()> {
    out.configuration(&format!("{prefix}mode.csv"), &r.mode)?;
    out.samples(&format!("{prefix}samples.csv"), &r.samples)?;
    out.json(&format!("{prefix}regions.json"), &r.regions)?;
    out.csv_records(&format!("{prefix}diagnostics.csv"), &r.diagnostics)?;
    out.json(&format!("{prefix}summary.json"), &FitSummary::of(r))
}

fn model_spec(d: &DissimilarityMatrix, family: Family, latent: Option<Metric>, dim: usize) -> Result<ModelSpec> {
    let metric = latent_metric(d.metric(), latent);
    Ok(ModelSpec::new(family, metric, dim, d.upper_bound())?)
}

fn fit_options(no_scale: bool, level: f64) -> FitOptions {
    FitOptions {
        scale: !no_scale,
        level,
        ..FitOptions::default()
    }
}

fn validated(engine: &EngineArgs) -> Result<SmcConfig> {
    let config = engine.config();
    config.validate()?;
    init_threads(engine)?;
    Ok(config)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let config = validated(&args.engine)?;
    let d = load(&args.input)?;
    let spec = model_spec(&d, args.model.family, args.model.latent_metric, args.dim)?;
    let r = run_fit(&d, &spec, &args.prior.overrides(), &config, &fit_options(args.no_scale, args.level))?;
    let mut out = OutputDir::create(&args.out.out)?;
    write_fit(&mut out, "", &r)?;
    write_manifest(&mut out, "fit", config.seed, args)?;
    println!(
        "logM {:.4}  STRESS {:.4}  (classical {:.4})  R {}",
        r.log_evidence,
        r.stress,
        r.cmds_stress,
        r.iterations()
    );
    Ok(())
}

#[derive(Serialize)]
struct TableCsvRow<'a> {
    family: Family,
    metric: Metric,
    dim: usize,
    seed: u64,
    log_evidence: Option<f64>,
    stress: Option<f64>,
    iterations: Option<usize>,
    winner: bool,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct TableJson<'a> {
    #[serde(flatten)]
    table: &'a ComparisonTable,
    /// Bayes factor of the winner against the runner-up.
    winner_vs_runner_up: Option<String>,
}

fn write_table(out: &mut OutputDir, table: &ComparisonTable) -> Result<()> {
    let rows: Vec<TableCsvRow> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| TableCsvRow {
            family: r.family,
            metric: r.metric,
            dim: r.dim,
            seed: r.seed,
            log_evidence: r.log_evidence,
            stress: r.stress,
            iterations: r.iterations,
            winner: table.winner == Some(i),
            error: r.error.as_deref(),
        })
        .collect();
    out.csv_records("comparison.csv", &rows)?;
    let runner_up = table
        .rows
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != table.winner)
        .filter_map(|(_, r)| r.log_evidence)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let label = match (table.winner, runner_up) {
        (Some(w), Some(second)) => {
            let best = table.rows[w].log_evidence.expect("winner has evidence");
            Some(bayes_factor(second, best)?.label())
        }
        _ => None,
    };
    out.json(
        "comparison.json",
        &TableJson {
            table,
            winner_vs_runner_up: label,
        },
    )
}

fn print_table(table: &ComparisonTable) {
    for (i, r) in table.rows.iter().enumerate() {
        let mark = if table.winner == Some(i) { "*" } else { " " };
        match (&r.error, r.log_evidence, r.stress) {
            (None, Some(l), Some(s)) => {
                println!("{mark} {:<4} {:<10} p={:<2} logM {l:>12.4}  STRESS {s:.4}", r.family, r.metric, r.dim)
            }
            (e, _, _) => println!(
                "{mark} {:<4} {:<10} p={:<2} failed: {}",
                r.family,
                r.metric,
                r.dim,
                e.as_deref().unwrap_or("unknown")
            ),
        }
    }
}

fn run_sweep(
    d: &DissimilarityMatrix,
    families: &[Family],
    latent: Option<Metric>,
    dims: &[usize],
    overrides: &HyperOverrides,
    config: &SmcConfig,
) -> Result<ComparisonTable> {
    let grid = SweepGrid {
        families: families.to_vec(),
        metrics: vec![latent_metric(d.metric(), latent)],
        dims: dims.to_vec(),
    };
    Ok(sweep(d, &grid, overrides, config)?)
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let config = validated(&args.engine)?;
    let d = load(&args.input)?;
    let table = run_sweep(
        &d,
        &args.families,
        args.latent_metric,
        &args.dims.0,
        &args.prior.overrides(),
        &config,
    )?;
    let mut out = OutputDir::create(&args.out.out)?;
    write_table(&mut out, &table)?;
    write_manifest(&mut out, "compare", config.seed, args)?;
    print_table(&table);
    Ok(())
}

pub fn incremental(args: &IncrementalArgs) -> Result<()> {
    let config = validated(&args.engine)?;
    let d = load(&args.input)?;
    let plan = match (&args.batches, args.batch_size) {
        (Some(text), _) => BatchPlan::parse(text)?,
        (None, Some(size)) => BatchPlan::uniform(d.n(), size)?,
        (None, None) => BatchPlan::single(d.n())?,
    };
    let spec = model_spec(&d, args.model.family, args.model.latent_metric, args.dim)?;
    let results = run_adaptive(
        &d,
        &plan,
        &spec,
        &args.prior.overrides(),
        &config,
        &fit_options(args.no_scale, 0.95),
    )?;
    let mut out = OutputDir::create(&args.out.out)?;
    for (b, r) in results.iter().enumerate() {
        write_fit(&mut out, &format!("batch-{}/", b + 1), r)?;
        println!(
            "batch {} (n={}): logM {:.4}  STRESS {:.4}",
            b + 1,
            r.mode.n(),
            r.log_evidence,
            r.stress
        );
    }
    let summaries: Vec<FitSummary> = results.iter().map(FitSummary::of).collect();
    out.json("batches.json", &summaries)?;
    write_manifest(&mut out, "incremental", config.seed, args)
}

/// Families compared by each protocol.
fn protocol_families(name: ExperimentName) -> Vec<Family> {
    match name {
        ExperimentName::KnownDimension => vec![Family::Tn],
        ExperimentName::SkewedErrors => vec![Family::Tn, Family::Tsn],
        ExperimentName::Outliers => vec![Family::Tsn, Family::Tt],
    }
}

fn experiment_spec(args: &ExperimentArgs) -> Result<ExperimentSpec> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let spec = ExperimentSpec::parse(&text).with_context(|| format!("in {}", path.display()))?;
            if spec.name != args.name {
                bail!(GbmdsError::InvalidInput(format!(
                    "{} describes {}, not {}",
                    path.display(),
                    spec.name,
                    args.name
                )));
            }
            spec
        }
        None => {
            let mut s = ExperimentSpec::defaults(args.name);
            s.seed = args.engine.seed;
            s
        }
    };
    for kv in &args.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| GbmdsError::InvalidInput(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        spec.set(k.trim(), v.trim())?;
    }
    if args.supplementary {
        spec.set("supplementary", "true")?;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn experiment(args: &ExperimentArgs) -> Result<()> {
    let config = validated(&args.engine)?;
    let spec = experiment_spec(args)?;
    let data = spec.generate()?;
    let dims = match &args.dims {
        Some(d) => d.0.clone(),
        None if spec.name == ExperimentName::KnownDimension => (2..=7).collect(),
        None => vec![2],
    };
    let table = run_sweep(
        &data.d,
        &protocol_families(spec.name),
        None,
        &dims,
        &args.prior.overrides(),
        &config,
    )?;
    let mut out = OutputDir::create(&args.out.out)?;
    out.json("experiment.json", &spec)?;
    out.matrix("dissimilarity.csv", &data.d)?;
    if let Some(x) = &data.x_true {
        out.configuration("truth.csv", x)?;
    }
    write_table(&mut out, &table)?;
    write_manifest(&mut out, "experiment", config.seed, args)?;
    print_table(&table);
    Ok(())
}
