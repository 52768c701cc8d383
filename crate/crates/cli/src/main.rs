//! `psim`: batch front end for pruning, clustering, compressing and
//! simulating CNN models on the photonic accelerator model.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 I/O error or missing
//! input, 4 malformed model container, 5 stage failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use psim_core::cluster::cluster_weights;
use psim_core::config::RunConfig;
use psim_core::dataflow::{compression_stats, CompressionStats};
use psim_core::explore::{explore, EvalSet};
use psim_core::fixtures;
use psim_core::model::{count_parameters, load_artifact, save_artifact, save_model, Artifact, Tensor};
use psim_core::report::{self, ReportFormat};
use psim_core::schedule::{quant_for, simulate, SimSetup};
use psim_core::sparsify::{count_nonzero, prune, SparsityPlan};

#[derive(Parser)]
#[command(name = "psim", version, about = "Sparse photonic CNN accelerator simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration file (dotted `key = value` TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input model container directory.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Output path: a container directory for `prune`, `cluster` and
    /// `fixture`, a file otherwise (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<ReportFormat>,
    /// Skip DAC quantization.
    #[arg(long, global = true)]
    exact_mode: bool,
    /// Input tensor as JSON `{"shape": [...], "data": [...]}`; a seeded
    /// random input is used when omitted.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in fixture model to a container.
    Fixture {
        /// One of mnist, cifar10, svhn, toy.
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Magnitude-prune every weighted layer.
    Prune {
        /// Uniform per-layer sparsity in [0, 1].
        #[arg(long)]
        sparsity: Option<f64>,
    },
    /// Cluster surviving weights into a shared codebook per layer.
    Cluster {
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Emit per-layer compression statistics as CSV.
    Compress,
    /// Simulate one inference and emit a report.
    Simulate,
    /// Evaluate the configured design grid and emit ranked CSV.
    Explore {
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-render a JSON report in another format.
    Report {
        /// JSON report produced by `simulate --format json`.
        report: PathBuf,
    },
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: psim_core::Error| e.to_string())
}

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use psim_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<E>() {
        return match e {
            E::Config(_) | E::Plan(_) => 2,
            E::Io { .. } => 3,
            E::Manifest(_) | E::BlobTruncated { .. } | E::NonFinite(_) => 4,
            E::Shape(_) | E::InvalidModel(_) | E::Clustering(_) | E::Report(_) => 5,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    5
}

/// Settings shared by every subcommand: config file values with command-line
/// flags taking precedence.
struct Session {
    cfg: RunConfig,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    format: ReportFormat,
    exact_mode: bool,
    input: Option<PathBuf>,
}

impl Session {
    fn new(g: Global) -> Result<Self> {
        let cfg = match &g.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        for w in cfg.setup.arch.validate()? {
            warn!("{w}");
        }
        Ok(Self {
            model: g.model.or_else(|| cfg.model.clone()),
            out: g.out.or_else(|| cfg.out.clone()),
            format: g.format.or(cfg.format).unwrap_or(ReportFormat::Text),
            exact_mode: g.exact_mode || cfg.setup.quant.exact_mode,
            input: g.input.or_else(|| cfg.input_path.clone()),
            cfg,
        })
    }

    fn model_dir(&self) -> Result<&Path> {
        self.model.as_deref().ok_or_else(|| usage("--model is required"))
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| usage("--out is required"))
    }

    fn artifact(&self) -> Result<Artifact> {
        let dir = self.model_dir()?;
        load_artifact(dir).with_context(|| format!("loading model {}", dir.display()))
    }

    fn input_for(&self, shape: &[usize]) -> Result<Tensor> {
        let Some(path) = &self.input else {
            return Ok(fixtures::random_input(shape, self.cfg.input_seed));
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading input {}", path.display()))?;
        let raw: Tensor = serde_json::from_str(&text)
            .map_err(|e| usage(format!("input {} is not a tensor: {e}", path.display())))?;
        let t = Tensor::new(raw.shape().to_vec(), raw.into_data())?;
        if t.shape() != shape {
            return Err(usage(format!(
                "input shape {:?} does not match model input {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    fn setup_for(&self, artifact: &Artifact) -> SimSetup {
        let mut quant = quant_for(artifact, self.exact_mode);
        if let Some(b) = self.cfg.weight_bits {
            quant.weight_bits = b;
        }
        quant.activation_bits = self.cfg.setup.quant.activation_bits;
        SimSetup {
            quant,
            ..self.cfg.setup
        }
    }

    /// Writes to `--out` when given, stdout otherwise.
    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
            None => print!("{text}"),
        }
        Ok(())
    }
}

fn cmd_fixture(ctx: &Session, name: &str, seed: u64) -> Result<()> {
    let model = fixtures::by_name(name, seed)
        .ok_or_else(|| usage(format!("unknown fixture `{name}` (expected mnist, cifar10, svhn or toy)")))?;
    let out = ctx.out_dir()?;
    save_model(&model, out)?;
    println!("{}: {} parameters -> {}", model.name, count_parameters(&model), out.display());
    Ok(())
}

fn cmd_prune(ctx: &Session, sparsity: Option<f64>) -> Result<()> {
    let artifact = ctx.artifact()?;
    if artifact.codebooks.is_some() {
        warn!("pruning a clustered model discards its codebooks");
    }
    let model = artifact.model.effective_model();
    let mut plan = match sparsity.or(ctx.cfg.sparsity) {
        Some(s) => SparsityPlan::uniform(&model, s)?,
        None if !ctx.cfg.layer_sparsity.is_empty() => SparsityPlan::new(),
        None => return Err(usage("prune needs --sparsity or a `sparsity` config key")),
    };
    for (&layer, &s) in &ctx.cfg.layer_sparsity {
        plan.set(layer, s)?;
    }
    let masked = prune(&model, &plan)?;
    let out = ctx.out_dir()?;
    save_artifact(&Artifact { model: masked.clone(), codebooks: None }, out)?;
    println!(
        "surviving parameters: {} of {}",
        count_nonzero(&masked),
        count_parameters(&model)
    );
    Ok(())
}

fn cmd_cluster(ctx: &Session, clusters: Option<usize>) -> Result<()> {
    let artifact = ctx.artifact()?;
    let c = clusters
        .or(ctx.cfg.clusters)
        .ok_or_else(|| usage("cluster needs --clusters or a `clusters` config key"))?;
    let (model, books) = cluster_weights(&artifact.model, c)?;
    let bits = books.dac_resolution().bits;
    save_artifact(&Artifact { model, codebooks: Some(books) }, ctx.out_dir()?)?;
    println!("clustered into at most {c} values per layer, {bits}-bit weight DACs");
    Ok(())
}

fn cmd_compress(ctx: &Session) -> Result<()> {
    let model = ctx.artifact()?.model.effective_model();
    let input = ctx.input_for(&model.input_shape)?;
    let mut csv = String::from(CompressionStats::CSV_HEADER);
    csv.push('\n');
    for s in compression_stats(&model, &input)? {
        csv.push_str(&s.csv_row());
        csv.push('\n');
    }
    ctx.emit(&csv)
}

fn cmd_simulate(ctx: &Session) -> Result<()> {
    let artifact = ctx.artifact()?;
    let input = ctx.input_for(&artifact.model.base.input_shape)?;
    let setup = ctx.setup_for(&artifact);
    info!("simulating {} on {}", artifact.model.base.name, setup.arch);
    let sim = simulate(&artifact, &input, &setup)?;
    ctx.emit(&report::render(&sim.report, ctx.format)?)
}

fn cmd_explore(ctx: &Session, jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let model = ctx.artifact()?.model.effective_model();
    let e = &ctx.cfg.explore;
    let eval = EvalSet::synthetic(&model, e.eval_count, e.seed);
    let grid = e.grid(ctx.cfg.setup.arch);
    let mut base = ctx.cfg.setup;
    base.quant.exact_mode = ctx.exact_mode;
    info!("exploring {} grid points with {jobs} job(s)", grid.len());
    let result = explore(&model, &eval, &grid, &base, jobs)?;
    for f in &result.failures {
        warn!("grid point {} failed: {}", f.point.index, f.error);
    }
    ctx.emit(&result.to_csv())
}

fn cmd_report(ctx: &Session, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading report {}", path.display()))?;
    let r = report::parse_json(&text)?;
    ctx.emit(&report::render(&r, ctx.format)?)
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Session::new(cli.global)?;
    match cli.command {
        Command::Fixture { name, seed } => cmd_fixture(&ctx, &name, seed),
        Command::Prune { sparsity } => cmd_prune(&ctx, sparsity),
        Command::Cluster { clusters } => cmd_cluster(&ctx, clusters),
        Command::Compress => cmd_compress(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Explore { jobs } => cmd_explore(&ctx, jobs),
        Command::Report { report } => cmd_report(&ctx, &report),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
