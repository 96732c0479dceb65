//! Command-line front end: argument parsing, configuration files and the
//! trace / summary files written by `relax run`, `relax sweep` and
//! `relax reference`.

pub mod trace;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use relax::acquisition::{EffConfig, MooRConfig, Strategy};
use relax::experiment::{self, ExperimentConfig, RunResult, Target, TargetSummary};
use relax::gp::GpConfig;
use relax::lsf::{direct_monte_carlo, LsfId};
use relax::reliability::{beta_from_pf, binomial_se};
use relax::sampling::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] relax::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Write(#[from] std::io::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "relax", version, about = "Active-learning reliability analysis with Gaussian-process surrogates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the active-learning loop for one seed.
    Run(RunArgs),
    /// Run several seeds and summarize first-hit sample counts.
    Sweep(SweepArgs),
    /// Direct Monte Carlo estimate of a benchmark's failure probability.
    Reference(ReferenceArgs),
}

/// Accepts integers written as `100000` or `1e5`.
fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v >= 0.0 && v.fract() == 0.0 && v <= 1e15 {
        Ok(v as usize)
    } else {
        Err(format!("'{s}' is not a non-negative integer"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Limit state: four-branch-6, four-branch-7, himmelblau, hat, oscillator, highdim40.
    #[arg(long)]
    pub lsf: Option<String>,
    /// Strategy: u, eff, moo-k, moo-c, moo-r.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Run seed (base seed for sweeps) [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Actively acquired samples [default: 190].
    #[arg(long, value_parser = parse_count)]
    pub budget: Option<usize>,
    /// Initial Latin-hypercube design size [default: 10].
    #[arg(long, value_parser = parse_count)]
    pub n_initial: Option<usize>,
    /// Candidate pool size [default: 1e5].
    #[arg(long, value_parser = parse_count)]
    pub pool_size: Option<usize>,
    /// Monte Carlo samples for the failure probability [default: 1e6].
    #[arg(long, value_parser = parse_count)]
    pub mcs_size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file overriding defaults; explicit flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pool 1e6 and 1e7 Monte Carlo samples.
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of seeds [default: 15].
    #[arg(long, value_parser = parse_count)]
    pub seeds: Option<usize>,
    /// Convergence targets as `delta:S` pairs [default: 1e-2:3,5e-3:3,1e-3:3].
    #[arg(long)]
    pub targets: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReferenceArgs {
    #[arg(long)]
    pub lsf: String,
    /// Samples per repetition.
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    pub n: usize,
    /// Independent repetitions.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Keys accepted in a `--config` file. All are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub lsf: Option<LsfId>,
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub n_initial: Option<usize>,
    pub pool_size: Option<usize>,
    pub mcs_size: Option<usize>,
    pub seeds: Option<usize>,
    pub targets: Option<Vec<Target>>,
    pub weight_grid: Option<usize>,
    pub full_scale: Option<bool>,
    pub moor: Option<MooRConfig>,
    pub eff: Option<EffConfig>,
    pub gp: Option<GpConfig>,
}

pub fn parse_targets(s: &str) -> Result<Vec<Target>, CliError> {
    let bad = || CliError::Usage(format!("malformed targets '{s}', expected e.g. 1e-2:3,5e-3:3"));
    s.split(',')
        .map(|item| {
            let (d, k) = item.trim().split_once(':').ok_or_else(bad)?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            let k: usize = k.trim().parse().map_err(|_| bad())?;
            Target::new(d, k).map_err(|_| bad())
        })
        .collect()
}

fn load_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Resolves defaults, then the config file, then explicit flags.
pub fn build_config(common: &CommonArgs, seeds: Option<usize>, targets: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let file = match &common.config {
        Some(p) => load_config_file(p)?,
        None => ConfigFile::default(),
    };
    let lsf = match &common.lsf {
        Some(s) => s.parse::<LsfId>()?,
        None => file.lsf.ok_or_else(|| CliError::Usage("missing --lsf".into()))?,
    };
    let strategy = match &common.strategy {
        Some(s) => s.parse::<Strategy>()?,
        None => file.strategy.ok_or_else(|| CliError::Usage("missing --strategy".into()))?,
    };
    let mut cfg = ExperimentConfig::new(lsf, strategy);
    if common.full_scale || file.full_scale == Some(true) {
        cfg = cfg.full_scale();
    }
    let pick = |flag: Option<usize>, file: Option<usize>, default: usize| flag.or(file).unwrap_or(default);
    cfg.budget = pick(common.budget, file.budget, cfg.budget);
    cfg.n_initial = pick(common.n_initial, file.n_initial, cfg.n_initial);
    cfg.pool_size = pick(common.pool_size, file.pool_size, cfg.pool_size);
    cfg.mcs_size = pick(common.mcs_size, file.mcs_size, cfg.mcs_size);
    cfg.seed_count = pick(seeds, file.seeds, cfg.seed_count);
    cfg.weight_grid = file.weight_grid.unwrap_or(cfg.weight_grid);
    cfg.base_seed = common.seed.or(file.seed).unwrap_or(0);
    if let Some(t) = file.targets {
        cfg.targets = t;
    }
    if let Some(t) = targets {
        cfg.targets = parse_targets(t)?;
    }
    cfg.moor = file.moor.unwrap_or(cfg.moor);
    cfg.eff = file.eff.unwrap_or(cfg.eff);
    cfg.gp = file.gp.unwrap_or(cfg.gp);
    cfg.validate()?;
    Ok(cfg)
}

pub fn trace_path(dir: &Path, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    dir.join(format!("trace_{}_{}_{seed}.csv", cfg.lsf, cfg.strategy))
}

pub fn run_json_path(dir: &Path, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    dir.join(format!("run_{}_{}_{seed}.json", cfg.lsf, cfg.strategy))
}

pub fn summary_path(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    dir.join(format!("summary_{}_{}.json", cfg.lsf, cfg.strategy))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes the trace CSV and the run JSON of one run.
pub fn write_run(dir: &Path, result: &RunResult) -> Result<(), CliError> {
    write_file(&trace_path(dir, &result.config, result.seed), &trace::trace_bytes(result)?)?;
    let json = serde_json::to_vec_pretty(result)?;
    write_file(&run_json_path(dir, &result.config, result.seed), &json)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHits {
    pub seed: u64,
    /// First-hit sample counts, one per target.
    pub samples: Vec<usize>,
    pub truncated: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub config: ExperimentConfig,
    pub reference_p_f: f64,
    pub reference_beta: f64,
    pub targets: Vec<TargetSummary>,
    pub runs: Vec<RunHits>,
}

pub fn summarize(cfg: &ExperimentConfig, results: &[RunResult]) -> Result<SummaryDocument, CliError> {
    let targets = cfg.targets.iter().map(|t| experiment::aggregate(results, t)).collect::<Result<Vec<_>, _>>()?;
    let runs = results
        .iter()
        .map(|r| RunHits { seed: r.seed, samples: r.hits.iter().map(|h| h.samples).collect(), truncated: r.truncated.clone() })
        .collect();
    let reference = cfg.lsf.reference();
    Ok(SummaryDocument { config: cfg.clone(), reference_p_f: reference.p_f, reference_beta: reference.beta, targets, runs })
}

pub fn cmd_run(args: &RunArgs) -> Result<PathBuf, CliError> {
    let cfg = build_config(&args.common, None, None)?;
    ensure_dir(&args.common.out)?;
    let result = experiment::run(&cfg, cfg.base_seed)?;
    write_run(&args.common.out, &result)?;
    if let Some(reason) = &result.truncated {
        log::warn!("run truncated after {} iterations: {reason}", result.records.len());
    }
    Ok(trace_path(&args.common.out, &cfg, cfg.base_seed))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<PathBuf, CliError> {
    let cfg = build_config(&args.common, args.seeds, args.targets.as_deref())?;
    ensure_dir(&args.common.out)?;
    let results = experiment::sweep(&cfg)?;
    for r in &results {
        write_run(&args.common.out, r)?;
    }
    let summary = summarize(&cfg, &results)?;
    let path = summary_path(&args.common.out, &cfg);
    write_file(&path, &serde_json::to_vec_pretty(&summary)?)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReport {
    pub lsf: LsfId,
    pub n: usize,
    pub reps: usize,
    pub p_f: f64,
    pub beta: f64,
    /// Binomial standard error of the pooled estimate.
    pub std_error: f64,
    pub stored_p_f: f64,
    pub stored_beta: f64,
    pub rel_deviation: f64,
}

/// Mean of `reps` independent direct Monte Carlo estimates of size `n`.
pub fn reference_report(lsf: LsfId, n: usize, reps: usize, seed: u64) -> Result<ReferenceReport, CliError> {
    if n == 0 || reps == 0 {
        return Err(CliError::Usage("--n and --reps must be positive".into()));
    }
    let def = lsf.definition();
    let p_f = (0..reps as u64).map(|r| direct_monte_carlo(&def, n, derive_seed(seed, REFERENCE_DOMAIN, r)).0).sum::<f64>()
        / reps as f64;
    let total = n * reps;
    let stored = lsf.reference();
    Ok(ReferenceReport {
        lsf,
        n,
        reps,
        p_f,
        beta: beta_from_pf(p_f, total).0,
        std_error: binomial_se(p_f, total),
        stored_p_f: stored.p_f,
        stored_beta: stored.beta,
        rel_deviation: (p_f - stored.p_f).abs() / stored.p_f,
    })
}

const REFERENCE_DOMAIN: u64 = 0x5245_4600;

pub fn cmd_reference(args: &ReferenceArgs, out: &mut dyn Write) -> Result<ReferenceReport, CliError> {
    let lsf: LsfId = args.lsf.parse()?;
    let r = reference_report(lsf, args.n, args.reps, args.seed)?;
    writeln!(out, "lsf            {}", r.lsf)?;
    writeln!(out, "samples        {} x {}", r.reps, r.n)?;
    writeln!(out, "pf_hat         {:.6e}", r.p_f)?;
    writeln!(out, "beta_hat       {:.4}", r.beta)?;
    writeln!(out, "std_error      {:.3e}", r.std_error)?;
    writeln!(out, "reference_pf   {:.6e}", r.stored_p_f)?;
    writeln!(out, "reference_beta {:.4}", r.stored_beta)?;
    writeln!(out, "rel_deviation  {:.4}", r.rel_deviation)?;
    Ok(r)
}

/// Sizes the global thread pool from `RELAX_THREADS` (0 or unset: automatic).
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("RELAX_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| CliError::Usage(format!("RELAX_THREADS must be an integer, got '{v}'")))?;
    if n > 0 {
        // a pool may already exist when embedded; keep it then
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Run(a) => cmd_run(a).map(|p| {
            let _ = writeln!(stdout, "{}", p.display());
        }),
        Command::Sweep(a) => cmd_sweep(a).map(|p| {
            let _ = writeln!(stdout, "{}", p.display());
        }),
        Command::Reference(a) => cmd_reference(a, stdout).map(|_| ()),
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if matches!(e, CliError::Usage(_) | CliError::Core(relax::Error::Argument(_))) {
                2
            } else {
                1
            }
        }
    }
}
