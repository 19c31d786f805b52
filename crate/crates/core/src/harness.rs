//! Experiment configuration, dispatch and report envelopes.
//!
//! A config names one experiment kind and its parameters. `run` evaluates it
//! and wraps the result in a [`Report`] that embeds the effective config, its
//! hash, a tidy table and the list of failed assertions. Reports carry no
//! timestamps or timings, so rerunning a config reproduces its report byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{check_covering, overall_bound_intro, overall_bound_main, overall_bound_sgd, BoundInputs, NormOrder};
use crate::data::{load_dataset, DataModel};
use crate::error::{ensure, Error, Result};
use crate::mmc::{
    bias_variance_check, decomposition_check, generalization_scaling_experiment, mc_lp_experiment, mmc_rate_experiment,
    overall_error_experiment, DecompositionSettings, DistanceField, Distribution,
};
use crate::net::{Architecture, ClippedNet};
use crate::report::{content_hash, fmt_f64, to_json_string, Table};
use crate::risk::{l2_error_quadrature, Quadrature};
use crate::special::verify_special;
use crate::stream::{derive_stream, Purpose, StreamTag};
use crate::trainer::{replay, run_restarts, DataSource, FixedDataset, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed for every random stream of the run.
    pub seed: u64,
    /// Turn theorem-hypothesis warnings into errors.
    #[serde(default)]
    pub strict: bool,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Bounds(BoundInputs),
    Train(TrainParams),
    Mmc(MmcParams),
    Decompose(DecomposeParams),
    Overall(OverallParams),
    VerifySpecial(VerifySpecialParams),
    Covering(CoveringParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Bounds(_) => "bounds",
            Experiment::Train(_) => "train",
            Experiment::Mmc(_) => "mmc",
            Experiment::Decompose(_) => "decompose",
            Experiment::Overall(_) => "overall",
            Experiment::VerifySpecial(_) => "verify-special",
            Experiment::Covering(_) => "covering",
        }
    }
}

/// Training on a synthetic model, or on a CSV dataset whose box and label
/// range come from `model`. The train block's `master_seed` is replaced by
/// the top-level seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub widths: Architecture,
    pub model: DataModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub train: TrainConfig,
    /// Rerun and require a bit-identical result.
    #[serde(default)]
    pub replay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MmcParams {
    /// Minimum of `K` uniform draws for `||theta - centre||_inf` on `[0, 1]^dim`.
    Rate {
        dim: usize,
        /// Defaults to the origin.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        centre: Option<Vec<f64>>,
        p: f64,
        k_list: Vec<usize>,
        trials: usize,
        slope_tolerance: f64,
    },
    /// `L^p` error of the mean of `M` draws.
    McLp { distribution: Distribution, p: f64, m_list: Vec<usize>, trials: usize },
    /// Grid supremum of the generalization gap.
    Generalization {
        widths: Architecture,
        model: DataModel,
        cap: f64,
        resolution: usize,
        m_list: Vec<usize>,
        repetitions: usize,
        slope_tolerance: f64,
        quadrature_panels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeParams {
    pub widths: Architecture,
    pub model: DataModel,
    pub train: TrainConfig,
    /// Comparison parameters in `[-B, B]^dim`.
    pub reference: Vec<f64>,
    #[serde(default)]
    pub settings: DecompositionSettings,
    /// Random `(theta, reference)` pairs for the bias-variance identity.
    #[serde(default)]
    pub bias_variance_pairs: usize,
    #[serde(default = "default_bias_variance_samples")]
    pub bias_variance_samples: usize,
}

fn default_bias_variance_samples() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverallParams {
    pub widths: Architecture,
    pub model: DataModel,
    /// Restart count is taken from `restart_list`.
    pub train: TrainConfig,
    pub restart_list: Vec<usize>,
    /// Seeds `seed, seed + 1, ...`.
    pub seeds: usize,
    pub quadrature_panels: usize,
    /// Thread counts to rerun the experiment under; the reports must match.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replay_threads: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpecialParams {
    pub samples: usize,
}

impl Default for VerifySpecialParams {
    fn default() -> Self {
        Self { samples: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringParams {
    pub d: usize,
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub p: NormOrder,
    pub probes: usize,
}

/// One failed assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub check: String,
    pub detail: String,
}

impl Failure {
    fn new(check: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { check: check.into(), detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub body: Value,
    pub table: Table,
    pub failures: Vec<Failure>,
    pub passed: bool,
}

impl Report {
    /// The table with `config_hash` and `seed` columns in front.
    pub fn tidy_table(&self) -> Table {
        report_merge(std::slice::from_ref(self)).expect("a single report is homogeneous")
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!("schema_version: expected {SCHEMA_VERSION}, got {}", config.schema_version)));
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn f(v: f64) -> String {
    fmt_f64(v)
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn net_for(widths: &Architecture, model: &DataModel) -> Result<ClippedNet> {
    model.validate()?;
    ClippedNet::new(widths.clone(), model.range.u, model.range.v)
}

struct Outcome {
    body: Value,
    table: Table,
    failures: Vec<Failure>,
}

/// Evaluates `config` and wraps the result. `Err` is reserved for invalid
/// configs and runs that cannot complete; failed assertions land in `failures`.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    ensure(config.schema_version == SCHEMA_VERSION, || {
        format!("schema_version: expected {SCHEMA_VERSION}, got {}", config.schema_version)
    })?;
    let mut effective = config.clone();
    match &mut effective.experiment {
        Experiment::Train(p) => p.train.master_seed = config.seed,
        Experiment::Decompose(p) => p.train.master_seed = config.seed,
        Experiment::Overall(p) => p.train.master_seed = config.seed,
        _ => {}
    }
    let config_hash = content_hash(&effective)?;
    let seed = effective.seed;
    let strict = effective.strict;
    let outcome = match &effective.experiment {
        Experiment::Bounds(inputs) => run_bounds(inputs, strict)?,
        Experiment::Train(p) => run_train(p, strict)?,
        Experiment::Mmc(p) => run_mmc(p, seed)?,
        Experiment::Decompose(p) => run_decompose(p, seed)?,
        Experiment::Overall(p) => run_overall(p, seed, strict)?,
        Experiment::VerifySpecial(p) => run_verify_special(p, seed)?,
        Experiment::Covering(p) => run_covering(p, seed)?,
    };
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        kind: effective.experiment.kind().into(),
        config_hash,
        seed,
        passed: outcome.failures.is_empty(),
        config: effective,
        body: outcome.body,
        table: outcome.table,
        failures: outcome.failures,
    })
}

fn run_bounds(inputs: &BoundInputs, strict: bool) -> Result<Outcome> {
    let (fine, coarse) = overall_bound_main(inputs, strict)?;
    let mut reports = vec![fine, coarse];
    // L^1 displays apply to unit inputs and labels
    if inputs.a == 0.0 && inputs.b == 1.0 && inputs.u == 0.0 && inputs.v == 1.0 {
        let (sgd_fine, sgd_coarse) =
            overall_bound_sgd(inputs.d, &inputs.arch, inputs.lipschitz, inputs.c, inputs.cap, inputs.m, inputs.k)?;
        reports.extend([sgd_fine, sgd_coarse, overall_bound_intro(inputs.d, &inputs.arch, inputs.c, inputs.m, inputs.k)?]);
    }
    let mut table = Table::new(["formula_id", "approx", "gen", "opt", "total"]);
    for r in &reports {
        table.push(vec![r.formula.clone(), f(r.approx_term), f(r.generalization_term), f(r.optimization_term), f(r.total)]);
    }
    Ok(Outcome { body: json!({ "reports": to_value(&reports)? }), table, failures: Vec::new() })
}

fn run_train(p: &TrainParams, strict: bool) -> Result<Outcome> {
    let net = net_for(&p.widths, &p.model)?;
    p.train.validate()?;
    let violations = p.train.theorem_violations();
    if strict && !violations.is_empty() {
        return Err(Error::Hypothesis(violations.join("; ")));
    }
    let fixed;
    let source: &dyn DataSource = match &p.dataset {
        Some(path) => {
            fixed = FixedDataset {
                samples: load_dataset(path, &p.model.input, &p.model.range)?,
                selection_size: p.train.selection_size,
            };
            &fixed
        }
        None => &p.model,
    };
    let result = run_restarts(&net, &p.train, source)?;
    let mut failures = Vec::new();
    if p.replay {
        if let Err(e) = replay(&result, &net, &p.train, source) {
            failures.push(Failure::new("replay", e.to_string()));
        }
    }
    let l2_error = if p.dataset.is_none() && p.model.input.d <= 3 {
        Some(l2_error_quadrature(&net, &result.chosen_params(), &p.model.target, &p.model.input, Quadrature::new(64)?)?)
    } else {
        None
    };
    let body = json!({
        "chosen": { "k": result.chosen.k, "n": result.chosen.n },
        "chosen_risk": result.chosen_risk,
        "chosen_params": result.chosen_params,
        "l2_error": l2_error,
        "checkpoints": to_value(&result.checkpoints.iter().map(|c| json!({
            "k": c.k, "n": c.n, "risk": c.risk, "feasible": c.feasible, "sup_norm": c.sup_norm,
        })).collect::<Vec<_>>())?,
        "warnings": violations,
    });
    Ok(Outcome { body, table: result.risk_table(), failures })
}

fn run_mmc(p: &MmcParams, seed: u64) -> Result<Outcome> {
    match p {
        MmcParams::Rate { dim, centre, p, k_list, trials, slope_tolerance } => {
            let centre = centre.clone().unwrap_or_else(|| vec![0.0; *dim]);
            let field = DistanceField { alpha: 0.0, beta: 1.0, centre: centre.clone() };
            let r = mmc_rate_experiment(&field, &centre, *p, k_list, *trials, *slope_tolerance, seed)?;
            let mut table = Table::new(["k", "estimate", "se", "bound", "bound_coarse", "within_bound"]);
            let mut failures = Vec::new();
            for row in &r.rows {
                table.push(vec![
                    row.k.to_string(),
                    f(row.estimate),
                    f(row.se),
                    f(row.bound),
                    f(row.bound_coarse),
                    row.within_bound.to_string(),
                ]);
                if !row.within_bound {
                    failures.push(Failure::new("mmc-bound", format!("K = {}: {} > {}", row.k, row.estimate, row.bound)));
                }
            }
            if !r.slope_ok {
                failures.push(Failure::new(
                    "mmc-slope",
                    format!("fit {:?} vs {}", r.fit.as_ref().map(|f| f.slope), r.expected_slope),
                ));
            }
            if !r.monotone {
                failures.push(Failure::new("mmc-monotone", "estimates increase with K beyond 3 se"));
            }
            Ok(Outcome { body: to_value(&r)?, table, failures })
        }
        MmcParams::McLp { distribution, p, m_list, trials } => {
            let r = mc_lp_experiment(*distribution, m_list, *p, *trials, seed)?;
            let mut table = Table::new(["m", "estimate", "se", "bound", "exact", "within_bound"]);
            let mut failures = Vec::new();
            for row in &r.rows {
                table.push(vec![
                    row.m.to_string(),
                    f(row.estimate),
                    f(row.se),
                    f(row.bound),
                    row.exact.map(f).unwrap_or_default(),
                    row.within_bound.to_string(),
                ]);
                if !row.within_bound {
                    failures.push(Failure::new("mc-lp-bound", format!("M = {}: {} > {}", row.m, row.estimate, row.bound)));
                }
                if row.matches_exact == Some(false) {
                    failures
                        .push(Failure::new("mc-lp-exact", format!("M = {}: {} vs exact {:?}", row.m, row.estimate, row.exact)));
                }
            }
            Ok(Outcome { body: to_value(&r)?, table, failures })
        }
        MmcParams::Generalization { widths, model, cap, resolution, m_list, repetitions, slope_tolerance, quadrature_panels } => {
            let net = net_for(widths, model)?;
            let r = generalization_scaling_experiment(
                &net,
                model,
                *cap,
                *resolution,
                m_list,
                *repetitions,
                *slope_tolerance,
                Quadrature::new(*quadrature_panels)?,
                seed,
            )?;
            let mut table = Table::new(["m", "estimate", "se", "bound", "bound_coarse", "within_bound"]);
            let mut failures = Vec::new();
            for row in &r.rows {
                table.push(vec![
                    row.m.to_string(),
                    f(row.estimate),
                    f(row.se),
                    f(row.bound),
                    f(row.bound_coarse),
                    row.within_bound.to_string(),
                ]);
                if !row.within_bound {
                    failures
                        .push(Failure::new("generalization-bound", format!("M = {}: {} > {}", row.m, row.estimate, row.bound)));
                }
            }
            if !r.slope_ok {
                failures.push(Failure::new("generalization-slope", format!("fit {:?} vs -0.5", r.fit.as_ref().map(|f| f.slope))));
            }
            Ok(Outcome { body: to_value(&r)?, table, failures })
        }
    }
}

fn run_decompose(p: &DecomposeParams, seed: u64) -> Result<Outcome> {
    let net = net_for(&p.widths, &p.model)?;
    let r = decomposition_check(&net, &p.model, &p.train, &p.reference, &p.settings)?;
    let mut failures = Vec::new();
    if !r.holds {
        failures.push(Failure::new("decomposition", format!("lhs {} > rhs {}", r.lhs, r.rhs_with_slack)));
    }
    let mut table = Table::new(["instance", "lhs", "approx", "sup", "min", "rhs", "rhs_with_slack", "holds"]);
    table.push(vec![
        "0".into(),
        f(r.lhs),
        f(r.approx_term),
        f(r.sup_term),
        f(r.min_term),
        f(r.rhs),
        f(r.rhs_with_slack),
        r.holds.to_string(),
    ]);
    let mut pairs = Vec::with_capacity(p.bias_variance_pairs);
    let cap = p.train.cap;
    for i in 0..p.bias_variance_pairs {
        let mut s = derive_stream(seed, StreamTag::new(Purpose::Probe, i as u64, 0));
        let mut theta = vec![0.0; net.param_count()];
        let mut other = vec![0.0; net.param_count()];
        s.fill_uniform(-cap, cap, &mut theta);
        s.fill_uniform(-cap, cap, &mut other);
        let bv = bias_variance_check(&net, &p.model, &theta, &other, p.bias_variance_samples, &mut s)?;
        if !bv.holds {
            failures.push(Failure::new("bias-variance", format!("pair {i}: gap {:?}", bv.paired_gap)));
        }
        pairs.push(bv);
    }
    let body = json!({ "decomposition": to_value(&r)?, "bias_variance": to_value(&pairs)? });
    Ok(Outcome { body, table, failures })
}

fn run_overall(p: &OverallParams, seed: u64, strict: bool) -> Result<Outcome> {
    let net = net_for(&p.widths, &p.model)?;
    ensure(p.seeds >= 2, || "seeds: need at least two".into())?;
    let seeds: Vec<u64> = (0..p.seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    let quad = Quadrature::new(p.quadrature_panels)?;
    let experiment = || overall_error_experiment(&net, &p.model, &p.train, &p.restart_list, &seeds, quad, strict);
    let r = experiment()?;
    let mut failures = Vec::new();
    for s in &r.summaries {
        if !s.within_bound {
            failures.push(Failure::new(
                "overall-bound",
                format!("K = {}: mean L1 {:?}, mean L2 {:?}", s.restarts, s.mean_l1, s.mean_l2),
            ));
        }
    }
    if r.restarts_help == Some(false) {
        failures.push(Failure::new("restart-benefit", format!("{:?}", r.restart_comparison)));
    }
    let mut replays = Vec::new();
    for &threads in &p.replay_threads {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Capability(e.to_string()))?;
        let again = pool.install(experiment)?;
        let identical = to_json_string(&again)? == to_json_string(&r)?;
        if !identical {
            failures.push(Failure::new("replay", format!("report differs under {threads} threads")));
        }
        replays.push(json!({ "threads": threads, "identical": identical }));
    }
    let mut table = Table::new(["seed", "restarts", "l1_error", "l2_error", "l1_bound", "l2_bound"]);
    for run in &r.runs {
        let s = r.summaries.iter().find(|s| s.restarts == run.restarts).expect("summary per restart count");
        table.push(vec![
            run.seed.to_string(),
            run.restarts.to_string(),
            f(run.l1_error),
            f(run.l2_error),
            f(s.l1_bound.0.total),
            f(s.l2_bound.0.total),
        ]);
    }
    Ok(Outcome { body: json!({ "experiment": to_value(&r)?, "replays": replays }), table, failures })
}

fn run_verify_special(p: &VerifySpecialParams, seed: u64) -> Result<Outcome> {
    let sweeps = verify_special(seed, p.samples)?;
    let mut table = Table::new(["name", "samples", "violations", "worst_slack"]);
    let mut failures = Vec::new();
    for s in &sweeps {
        table.push(vec![s.name.clone(), s.samples.to_string(), s.violations.to_string(), f(s.worst_slack)]);
        if !s.passed() {
            failures.push(Failure::new(s.name.clone(), format!("{} violations, worst at {:?}", s.violations, s.worst_at)));
        }
    }
    Ok(Outcome { body: json!({ "sweeps": to_value(&sweeps)? }), table, failures })
}

fn run_covering(p: &CoveringParams, seed: u64) -> Result<Outcome> {
    let mut s = derive_stream(seed, StreamTag::new(Purpose::Probe, 0, 0));
    let c = check_covering(p.d, p.a, p.b, p.n, p.p, p.probes, &mut s)?;
    let mut table = Table::new(["d", "n", "p", "centres", "bound", "radius", "max_distance", "uncovered"]);
    let p_cell = match c.p {
        NormOrder::Finite(q) => q.to_string(),
        NormOrder::Infinity => "inf".into(),
    };
    table.push(vec![
        c.d.to_string(),
        c.n.to_string(),
        p_cell,
        c.centres.to_string(),
        c.bound.count.to_string(),
        f(c.radius),
        f(c.max_distance),
        c.uncovered.to_string(),
    ]);
    let failures = if c.passed {
        Vec::new()
    } else {
        vec![Failure::new(
            "covering",
            format!("{} uncovered probes, {} centres vs bound {}", c.uncovered, c.centres, c.bound.count),
        )]
    };
    Ok(Outcome { body: to_value(&c)?, table, failures })
}

/// Writes `<kind>-<hash>.json` and `<kind>-<hash>.csv` into `dir`.
pub fn write_artifacts(report: &Report, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let stem = format!("{}-{}", report.kind, report.config_hash);
    let json_path = dir.join(format!("{stem}.json"));
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&json_path, to_json_string(report)?)?;
    fs::write(&csv_path, report.tidy_table().to_csv()?)?;
    Ok((json_path, csv_path))
}

/// The fields of a report needed for merging; tolerant of everything else.
#[derive(Debug, Clone, Deserialize)]
pub struct ReportHeader {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub table: Table,
}

impl From<&Report> for ReportHeader {
    fn from(r: &Report) -> Self {
        Self {
            schema_version: r.schema_version,
            kind: r.kind.clone(),
            config_hash: r.config_hash.clone(),
            seed: r.seed,
            table: r.table.clone(),
        }
    }
}

pub fn read_report_header(path: &Path) -> Result<ReportHeader> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Concatenates report tables with `config_hash` and `seed` in front. All
/// reports must share kind, schema version and columns.
pub fn merge_headers(reports: &[ReportHeader]) -> Result<Table> {
    let Some(first) = reports.first() else {
        return Ok(Table::new(["config_hash", "seed"]));
    };
    let mut columns = vec!["config_hash".to_string(), "seed".to_string()];
    columns.extend(first.table.columns.iter().cloned());
    let mut out = Table { columns, rows: Vec::new() };
    for r in reports {
        if r.kind != first.kind || r.schema_version != first.schema_version || r.table.columns != first.table.columns {
            return Err(Error::Config(format!(
                "cannot merge a {} report (schema {}) into {} reports (schema {})",
                r.kind, r.schema_version, first.kind, first.schema_version
            )));
        }
        for row in &r.table.rows {
            let mut cells = vec![r.config_hash.clone(), r.seed.to_string()];
            cells.extend(row.iter().cloned());
            out.rows.push(cells);
        }
    }
    Ok(out)
}

pub fn report_merge(reports: &[Report]) -> Result<Table> {
    merge_headers(&reports.iter().map(ReportHeader::from).collect::<Vec<_>>())
}

/// Reads report JSON files and merges their tables.
pub fn report_merge_paths(paths: &[PathBuf]) -> Result<Table> {
    let headers = paths.iter().map(|p| read_report_header(p)).collect::<Result<Vec<_>>>()?;
    merge_headers(&headers)
}
