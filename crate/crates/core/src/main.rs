use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use erm_anatomy::bounds::{BoundInputs, NormOrder};
use erm_anatomy::harness::{
    load_config, report_merge_paths, run, write_artifacts, CoveringParams, Experiment, ExperimentConfig, VerifySpecialParams,
    SCHEMA_VERSION,
};
use erm_anatomy::net::Architecture;
use erm_anatomy::report::to_json_string;
use erm_anatomy::{Error, Result};

/// Reproducible experiments on empirical risk minimization with clipped ReLU networks.
///
/// Exit status: 0 when every assertion passes, 1 when the report lists
/// failures, 2 on configuration or runtime errors. ERM_ANATOMY_THREADS caps
/// the worker threads; results do not depend on it.
#[derive(Parser)]
#[command(name = "erm-anatomy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the JSON report and CSV table; without it the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Treat theorem-hypothesis violations as errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct BoundFlags {
    /// Layer widths, comma separated, e.g. 1,4,1.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 0.0)]
    u: f64,
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    /// Parameter cap; defaults to `c`.
    #[arg(long)]
    cap: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long)]
    capacity: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the error bounds from a config or flags.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: BoundFlags,
    },
    /// Train with random restarts and report the selected network.
    Train(Common),
    /// Minimum Monte Carlo, Monte Carlo L^p and generalization-gap experiments.
    Mmc(Common),
    /// Check the pathwise error decomposition on a trained network.
    Decompose(Common),
    /// Measure trained errors against the overall bounds.
    Overall(Common),
    /// Random sweeps of the Gamma and Beta function inequalities.
    VerifySpecial {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Probe a midpoint grid covering of a cube.
    Covering {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Norm order: a number >= 1 or "inf".
        #[arg(long, default_value = "inf")]
        p: NormOrder,
        #[arg(long, default_value_t = 10_000)]
        probes: usize,
    },
    /// Concatenate report tables into one CSV with provenance columns.
    Merge {
        reports: Vec<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_from_flags(common: &Common, experiment: Experiment) -> ExperimentConfig {
    ExperimentConfig { schema_version: SCHEMA_VERSION, seed: common.seed.unwrap_or(0), strict: common.strict, experiment }
}

fn resolve(common: &Common, kind: &str, fallback: impl FnOnce() -> Result<Experiment>) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => config_from_flags(common, fallback()?),
    };
    if config.experiment.kind() != kind {
        return Err(Error::Config(format!("config describes a {} experiment, not {kind}", config.experiment.kind())));
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.strict |= common.strict;
    Ok(config)
}

fn needs_config(kind: &str) -> impl FnOnce() -> Result<Experiment> + '_ {
    move || Err(Error::Config(format!("{kind} requires --config")))
}

fn execute(common: &Common, config: &ExperimentConfig) -> Result<bool> {
    let report = run(config)?;
    match &common.out {
        Some(dir) => {
            let (json, csv) = write_artifacts(&report, dir)?;
            eprintln!("wrote {} and {}", json.display(), csv.display());
        }
        None => print!("{}", to_json_string(&report)?),
    }
    for f in &report.failures {
        eprintln!("FAIL {}: {}", f.check, f.detail);
    }
    Ok(report.passed)
}

fn merge(reports: &[PathBuf], out: Option<&Path>) -> Result<bool> {
    let csv = report_merge_paths(reports)?.to_csv()?;
    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(true)
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Bounds { common, flags } => {
            let config = resolve(&common, "bounds", || {
                let widths = flags.widths.ok_or_else(|| Error::Config("bounds needs --config or --widths".into()))?;
                let arch = Architecture::new(widths)?;
                Ok(Experiment::Bounds(BoundInputs {
                    d: arch.input_dim(),
                    arch,
                    lipschitz: flags.lipschitz,
                    a: flags.a,
                    b: flags.b,
                    u: flags.u,
                    v: flags.v,
                    c: flags.c,
                    cap: flags.cap.unwrap_or(flags.c),
                    m: flags.m,
                    k: flags.k,
                    p: flags.p,
                    capacity: flags.capacity,
                }))
            })?;
            execute(&common, &config)
        }
        Command::Train(common) => execute(&common, &resolve(&common, "train", needs_config("train"))?),
        Command::Mmc(common) => execute(&common, &resolve(&common, "mmc", needs_config("mmc"))?),
        Command::Decompose(common) => execute(&common, &resolve(&common, "decompose", needs_config("decompose"))?),
        Command::Overall(common) => execute(&common, &resolve(&common, "overall", needs_config("overall"))?),
        Command::VerifySpecial { common, samples } => {
            let config = resolve(&common, "verify-special", || Ok(Experiment::VerifySpecial(VerifySpecialParams { samples })))?;
            execute(&common, &config)
        }
        Command::Covering { common, d, a, b, n, p, probes } => {
            let config = resolve(&common, "covering", || Ok(Experiment::Covering(CoveringParams { d, a, b, n, p, probes })))?;
            execute(&common, &config)
        }
        Command::Merge { reports, out } => merge(&reports, out.as_deref()),
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ERM_ANATOMY_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| Error::Config(format!("ERM_ANATOMY_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| dispatch(cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let payload = serde_json::json!({ "error": error_kind(&e), "message": e.to_string() });
            eprintln!("{payload}");
            ExitCode::from(2)
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InputContract(_) => "input-contract",
        Error::Domain(_) => "domain",
        Error::NoFeasibleCheckpoint { .. } => "no-feasible-checkpoint",
        Error::Reproducibility(_) => "reproducibility",
        Error::Capability(_) => "capability",
        Error::Config(_) => "config",
        Error::Hypothesis(_) => "hypothesis",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}
