//! Command implementations behind the `dads` binary.
//!
//! Each command returns an [`Outcome`] holding the run manifest and the
//! process exit status; `main` only parses arguments and prints.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use dads_core::analysis::{
    check_deadzone, check_gain_ceiling, check_general_gain_bounds, check_leakage_decrease, check_level_limsup,
    check_radius_limsup, check_robust_decrease, check_transient_bound, foil_equilibria, tail_limsup, BoundReport,
    GainBoundInputs, DEFAULT_LIMSUP_SLACK, DEFAULT_TAIL_FRACTION,
};
use dads_core::config::{canonical_hash, load_scenario, scenario_from_value, set_path, DesignFile, LoadedScenario};
use dads_core::controllers::regulation_threshold;
use dads_core::designs::{
    certify_assumption, certify_quadratic_decrease, zeta_envelope, Assumption, CertReport, GridSpec,
};
use dads_core::sim::integrate;
use dads_core::{Controller, Error, NoDeadzoneParams, Trajectory};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Stable process exit contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    BoundFailure,
    Blowup,
    ConfigError,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::BoundFailure => 2,
            ExitStatus::Blowup => 3,
            ExitStatus::ConfigError => 4,
        }
    }

    fn worst(self, other: ExitStatus) -> ExitStatus {
        if other.code() > self.code() {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub id: String,
    pub passed: bool,
    pub min_margin: f64,
}

impl From<&BoundReport> for CheckSummary {
    fn from(r: &BoundReport) -> Self {
        Self {
            id: r.bound_id.clone(),
            passed: r.passed,
            min_margin: r.min_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_hash: Option<String>,
    pub artifacts: Vec<String>,
    pub checks: Vec<CheckSummary>,
    pub exit_status: i32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Command-specific payload (reports, summaries, equilibria).
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            scenario_hash: None,
            artifacts: Vec::new(),
            checks: Vec::new(),
            exit_status: 0,
            notes: Vec::new(),
            details: Value::Null,
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub status: ExitStatus,
}

impl Outcome {
    fn new(mut manifest: RunManifest, status: ExitStatus) -> Self {
        manifest.exit_status = status.code();
        Self { manifest, status }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl std::error::Error for CliError {}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NumericFault { .. } => ExitStatus::Blowup,
            _ => ExitStatus::ConfigError,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

fn config_err(message: impl Into<String>) -> CliError {
    CliError {
        status: ExitStatus::ConfigError,
        message: message.into(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    config_err(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "dads",
    version,
    about = "Deadzone-adapted disturbance suppression experiments"
)]
pub struct Cli {
    /// Step of the default fixed-step solver for scenarios that do not set one.
    #[arg(long, global = true, env = "DADS_SEED_DT")]
    pub seed_dt: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a scenario and write the trajectory CSV and a manifest.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check stability estimates along a stored trajectory.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        /// Comma-separated bounds: transient, gain-ceiling, radius-limsup, level-limsup,
        /// general-gain, robust-decrease, leakage-decrease, deadzone (numeric ids also accepted).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        bounds: Vec<String>,
        /// Tail window for limsup checks, as a fraction of the run.
        #[arg(long, default_value_t = DEFAULT_TAIL_FRACTION)]
        tail_fraction: f64,
        /// Relative slack on the limsup checks.
        #[arg(long, default_value_t = DEFAULT_LIMSUP_SLACK)]
        slack: f64,
        /// Sublevel proxy used by the gain-ceiling check.
        #[arg(long, default_value_t = 20.0)]
        level_proxy: f64,
        /// Half width of the sampling box for the gain-ceiling check.
        #[arg(long, default_value_t = 5.0)]
        grid_half_width: f64,
        #[arg(long, default_value_t = 101)]
        grid_res: usize,
        /// Young-inequality split for the leakage check, in (0, 1).
        #[arg(long, default_value_t = 0.5)]
        lambda_free: f64,
        /// Directory for reports.json and per-bound margin CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a design assumption on a sampled box.
    Certify {
        #[arg(long)]
        design: PathBuf,
        /// A, B, C or quadratic-decrease.
        #[arg(long)]
        assumption: String,
        /// Either a half width (`5`) or per-axis bounds (`-5:5,-2:3`).
        #[arg(long = "box", default_value = "5", allow_hyphen_values = true)]
        bounds: String,
        #[arg(long, default_value_t = dads_core::designs::DEFAULT_RESOLUTION)]
        res: usize,
        /// Radius for assumption C.
        #[arg(long)]
        delta: Option<f64>,
        /// Decay rate for assumption C; overrides the design's own rate for quadratic-decrease.
        #[arg(long)]
        eta: Option<f64>,
        /// Attach a sampled lower envelope of Q over V up to this level.
        #[arg(long)]
        zeta_level_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run two scenarios and write aligned state norms.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAIL_FRACTION)]
        tail_fraction: f64,
    },
    /// Cartesian parameter sweep over a base scenario.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Nonzero equilibria of the scalar plant under the no-deadzone law.
    Equilibria {
        #[arg(long)]
        k1: f64,
        #[arg(long)]
        k2: f64,
        #[arg(long)]
        k3: f64,
        #[arg(long)]
        k4: f64,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        theta: f64,
    },
}

/// Runs a parsed command line; errors become outcomes with their exit status.
pub fn run(cli: Cli) -> Outcome {
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Verify { .. } => "verify",
        Command::Certify { .. } => "certify",
        Command::Compare { .. } => "compare",
        Command::Sweep { .. } => "sweep",
        Command::Equilibria { .. } => "equilibria",
    };
    let result = match cli.command {
        Command::Simulate { scenario, out } => cmd_simulate(&scenario, &out, cli.seed_dt),
        Command::Verify {
            scenario,
            traj,
            bounds,
            tail_fraction,
            slack,
            level_proxy,
            grid_half_width,
            grid_res,
            lambda_free,
            out,
        } => cmd_verify(
            &scenario,
            &traj,
            &bounds,
            &VerifyOptions {
                tail_fraction,
                slack,
                level_proxy,
                grid_half_width,
                grid_res,
                lambda_free,
                seed_dt: cli.seed_dt,
            },
            out.as_deref(),
        ),
        Command::Certify {
            design,
            assumption,
            bounds,
            res,
            delta,
            eta,
            zeta_level_max,
            out,
        } => cmd_certify(
            &design,
            &assumption,
            &bounds,
            res,
            delta,
            eta,
            zeta_level_max,
            out.as_deref(),
        ),
        Command::Compare {
            a,
            b,
            out,
            tail_fraction,
        } => cmd_compare(&a, &b, &out, tail_fraction, cli.seed_dt),
        Command::Sweep { spec, out, jobs } => cmd_sweep(&spec, &out, jobs, cli.seed_dt),
        Command::Equilibria {
            k1,
            k2,
            k3,
            k4,
            m,
            sigma,
            theta,
        } => cmd_equilibria(k1, k2, k3, k4, m, sigma, theta),
    };
    result.unwrap_or_else(|e| {
        let mut manifest = RunManifest::new(name);
        manifest.notes.push(e.message);
        Outcome::new(manifest, e.status)
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| config_err(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    traj.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

fn truncation_status(loaded: &LoadedScenario, traj: &Trajectory, notes: &mut Vec<String>) -> ExitStatus {
    match &traj.truncation_reason {
        None => ExitStatus::Success,
        Some(reason) if loaded.file.counterexample => {
            notes.push(format!("expected divergence in counterexample scenario: {reason}"));
            ExitStatus::Success
        }
        Some(reason) => {
            notes.push(format!("integration stopped early: {reason}"));
            ExitStatus::Blowup
        }
    }
}

pub fn cmd_simulate(scenario: &Path, out: &Path, seed_dt: Option<f64>) -> CliResult<Outcome> {
    let loaded = load_scenario(scenario, seed_dt)?;
    let traj = integrate(&loaded.scenario)?;
    create_dir(out)?;
    write_trajectory(&out.join(TRAJECTORY_FILE), &traj)?;
    let mut manifest = RunManifest::new("simulate");
    manifest.scenario_hash = Some(loaded.hash.clone());
    manifest.artifacts = vec![TRAJECTORY_FILE.into(), MANIFEST_FILE.into()];
    let status = truncation_status(&loaded, &traj, &mut manifest.notes);
    manifest.details = serde_json::json!({
        "label": loaded.scenario.label,
        "samples": traj.len(),
        "final_time": traj.final_time(),
        "final_rho": traj.final_rho(),
        "solver": traj.meta,
    });
    let outcome = Outcome::new(manifest, status);
    write_json(&out.join(MANIFEST_FILE), &outcome.manifest)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub tail_fraction: f64,
    pub slack: f64,
    pub level_proxy: f64,
    pub grid_half_width: f64,
    pub grid_res: usize,
    pub lambda_free: f64,
    pub seed_dt: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tail_fraction: DEFAULT_TAIL_FRACTION,
            slack: DEFAULT_LIMSUP_SLACK,
            level_proxy: 20.0,
            grid_half_width: 5.0,
            grid_res: 101,
            lambda_free: 0.5,
            seed_dt: None,
        }
    }
}

fn linear_eps(controller: &Controller) -> CliResult<f64> {
    match controller {
        Controller::DadsLinear { design, .. } => Ok(design.eps),
        other => Err(config_err(format!(
            "the radius limsup check needs the quadratic deadzone-adapted law, got '{}'",
            other.type_name()
        ))),
    }
}

/// Bound ids accepted by `verify`, with their descriptive names.
pub const BOUND_NAMES: [(&str, &str); 8] = [
    ("2.5", "robust-decrease"),
    ("2.8", "leakage-decrease"),
    ("2.12", "general-gain"),
    ("2.14", "level-limsup"),
    ("2.20", "transient"),
    ("2.21", "gain-ceiling"),
    ("2.22", "radius-limsup"),
    ("deadzone", "deadzone"),
];

/// Maps a descriptive bound name to its id; ids pass through.
pub fn canonical_bound_id(name: &str) -> Option<&'static str> {
    match name {
        "2.13" | "2.12-2.13" => return Some("2.12"),
        _ => {}
    }
    BOUND_NAMES
        .iter()
        .find(|(id, alias)| *id == name || *alias == name)
        .map(|(id, _)| *id)
}

/// Evaluates one bound by id or descriptive name.
pub fn evaluate_bound(
    id: &str,
    loaded: &LoadedScenario,
    traj: &Trajectory,
    opts: &VerifyOptions,
) -> CliResult<BoundReport> {
    let s = &loaded.scenario;
    let c = &s.controller;
    let Some(id) = canonical_bound_id(id) else {
        let known: Vec<String> = BOUND_NAMES.iter().map(|(i, a)| format!("{a} ({i})")).collect();
        return Err(config_err(format!(
            "unknown bound \"{id}\" (known: {})",
            known.join(", ")
        )));
    };
    Ok(match id {
        "2.20" => check_transient_bound(traj, c, &s.theta, &s.disturbance)?,
        "2.21" => check_gain_ceiling(traj, c, &s.theta, &s.disturbance)?,
        "2.22" => check_radius_limsup(traj, linear_eps(c)?, opts.tail_fraction, opts.slack)?,
        "2.14" => {
            let r = c
                .deadzone_level()
                .ok_or_else(|| config_err("the level limsup check needs a deadzone-adapted law"))?;
            check_level_limsup(traj, r, opts.tail_fraction, opts.slack)?
        }
        "deadzone" => check_deadzone(traj, c)?,
        "2.12" => {
            let n = s.plant.n();
            let grid = GridSpec::symmetric(n, opts.grid_half_width, opts.grid_res);
            let design = match c {
                Controller::Dads { design, .. } => design.clone(),
                Controller::DadsLinear { design, .. } => design.as_clf(),
                other => {
                    return Err(config_err(format!(
                        "the general gain bounds need a deadzone-adapted law, got '{}'",
                        other.type_name()
                    )))
                }
            };
            let envelope = zeta_envelope(&design, &grid, 1.0 + opts.level_proxy, 100)?;
            let inputs = GainBoundInputs {
                level_proxy: opts.level_proxy,
                grid,
                envelope: Some(envelope),
            };
            check_general_gain_bounds(traj, c, &s.theta, &s.disturbance, &inputs)?
        }
        "2.5" => check_robust_decrease(traj, c, &s.theta)?,
        "2.8" => check_leakage_decrease(traj, c, &s.theta, opts.lambda_free)?,
        _ => unreachable!("canonical_bound_id returns only listed ids"),
    })
}

pub fn cmd_verify(
    scenario: &Path,
    traj_path: &Path,
    bounds: &[String],
    opts: &VerifyOptions,
    out: Option<&Path>,
) -> CliResult<Outcome> {
    let bounds: Vec<&str> = bounds.iter().map(|b| b.trim()).filter(|b| !b.is_empty()).collect();
    if bounds.is_empty() {
        return Err(config_err("no bounds requested"));
    }
    let loaded = load_scenario(scenario, opts.seed_dt)?;
    let manifest_path = traj_path.parent().unwrap_or_else(|| Path::new(".")).join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let run: RunManifest =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", manifest_path.display())))?;
    if run.scenario_hash.as_deref() != Some(loaded.hash.as_str()) {
        return Err(config_err(format!(
            "trajectory was produced from scenario {:?}, not {}",
            run.scenario_hash, loaded.hash
        )));
    }
    let file = fs::File::open(traj_path).map_err(|e| io_err(traj_path, e))?;
    let traj = Trajectory::read_csv(std::io::BufReader::new(file), &loaded.scenario)?;

    let reports = bounds
        .iter()
        .map(|id| evaluate_bound(id, &loaded, &traj, opts))
        .collect::<CliResult<Vec<_>>>()?;
    let mut manifest = RunManifest::new("verify");
    manifest.scenario_hash = Some(loaded.hash.clone());
    manifest.checks = reports.iter().map(CheckSummary::from).collect();
    let status = if reports.iter().all(|r| r.passed) {
        ExitStatus::Success
    } else {
        ExitStatus::BoundFailure
    };
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("reports.json"), &reports)?;
        manifest.artifacts.push("reports.json".into());
        for r in &reports {
            let name = format!("margins_{}.csv", r.bound_id.replace('.', "_"));
            let path = dir.join(&name);
            let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            r.write_margins_csv(f)?;
            manifest.artifacts.push(name);
        }
    }
    manifest.details = serde_json::to_value(&reports).map_err(|e| config_err(e.to_string()))?;
    Ok(Outcome::new(manifest, status))
}

/// Parses `--box`: a half width, or comma-separated `lo:hi` pairs.
pub fn parse_box(spec: &str, n: usize, res: usize) -> CliResult<GridSpec> {
    let spec = spec.trim();
    if let Ok(half) = spec.parse::<f64>() {
        if !(half > 0.0) {
            return Err(config_err("box half width must be positive"));
        }
        return Ok(GridSpec::symmetric(n, half, res));
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in spec.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| config_err(format!("box axis \"{part}\" is not lo:hi")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| config_err(format!("box bound \"{s}\" is not a number")))
        };
        lower.push(parse(lo)?);
        upper.push(parse(hi)?);
    }
    if lower.len() != n {
        return Err(config_err(format!("box has {} axes, design has {n}", lower.len())));
    }
    let grid = GridSpec {
        lower,
        upper,
        resolution: res,
    };
    grid.validate(n)?;
    Ok(grid)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_certify(
    design_path: &Path,
    assumption: &str,
    bounds: &str,
    res: usize,
    delta: Option<f64>,
    eta: Option<f64>,
    zeta_level_max: Option<f64>,
    out: Option<&Path>,
) -> CliResult<Outcome> {
    let file = DesignFile::load(design_path)?;
    let (plant, mut design) = file.build()?;
    let grid = parse_box(bounds, design.n(), res)?;
    let mut report: CertReport = match assumption.trim().to_ascii_uppercase().replace('_', "-").as_str() {
        "A" => certify_assumption(&design.as_clf(), &plant, Assumption::A, &grid)?,
        "B" => certify_assumption(&design.as_clf(), &plant, Assumption::B, &grid)?,
        "C" => certify_assumption(&design.as_clf(), &plant, Assumption::C { delta, eta }, &grid)?,
        "2.17" | "QUADRATIC-DECREASE" => {
            if let Some(eta) = eta {
                design.eta = eta;
            }
            certify_quadratic_decrease(&design, &plant, &grid)?
        }
        _ => {
            return Err(config_err(format!(
                "unknown assumption \"{assumption}\" (A, B, C, quadratic-decrease)"
            )))
        }
    };
    if let Some(level_max) = zeta_level_max {
        report.zeta_estimate = Some(zeta_envelope(&design.as_clf(), &grid, level_max, 100)?);
    }
    let mut manifest = RunManifest::new("certify");
    manifest.checks.push(CheckSummary {
        id: report.assumption.clone(),
        passed: report.passed,
        min_margin: report.worst_margin,
    });
    let status = if report.passed {
        ExitStatus::Success
    } else {
        ExitStatus::BoundFailure
    };
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("certificate.json"), &report)?;
        manifest.artifacts.push("certificate.json".into());
    }
    manifest.details = serde_json::to_value(&report).map_err(|e| config_err(e.to_string()))?;
    Ok(Outcome::new(manifest, status))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub hash_a: String,
    pub hash_b: String,
    pub window_start: f64,
    pub window_end: f64,
    pub tail_sup_norm_x_a: f64,
    pub tail_sup_norm_x_b: f64,
}

pub fn cmd_compare(a: &Path, b: &Path, out: &Path, tail_fraction: f64, seed_dt: Option<f64>) -> CliResult<Outcome> {
    let la = load_scenario(a, seed_dt)?;
    let lb = load_scenario(b, seed_dt)?;
    let ta = integrate(&la.scenario)?;
    let tb = integrate(&lb.scenario)?;
    let mut manifest = RunManifest::new("compare");
    let status =
        truncation_status(&la, &ta, &mut manifest.notes).worst(truncation_status(&lb, &tb, &mut manifest.notes));
    if ta.times != tb.times {
        return Err(config_err(
            "scenarios sample different time grids; use equal t_end, step and output stride",
        ));
    }
    create_dir(out)?;
    let path = out.join("compare.csv");
    {
        let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
        let io = |e: csv::Error| config_err(e.to_string());
        w.write_record(["t", "norm_x_a", "norm_x_b"]).map_err(io)?;
        for ((t, na), nb) in ta.times.iter().zip(ta.state_norms()).zip(tb.state_norms()) {
            w.write_record([format!("{t:.16e}"), format!("{na:.16e}"), format!("{nb:.16e}")])
                .map_err(io)?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    let sa = tail_limsup(&ta, tail_fraction)?;
    let sb = tail_limsup(&tb, tail_fraction)?;
    let summary = CompareSummary {
        hash_a: la.hash.clone(),
        hash_b: lb.hash.clone(),
        window_start: sa.window_start,
        window_end: sa.window_end,
        tail_sup_norm_x_a: sa.sup_norm_x,
        tail_sup_norm_x_b: sb.sup_norm_x,
    };
    write_json(&out.join("summary.json"), &summary)?;
    manifest.scenario_hash = Some(canonical_hash(&serde_json::json!([la.hash, lb.hash])));
    manifest.artifacts = vec!["compare.csv".into(), "summary.json".into(), MANIFEST_FILE.into()];
    manifest.details = serde_json::to_value(&summary).map_err(|e| config_err(e.to_string()))?;
    let outcome = Outcome::new(manifest, status);
    write_json(&out.join(MANIFEST_FILE), &outcome.manifest)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path into the scenario, e.g. `controller.gamma`.
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Path to a scenario file (relative to the spec) or an inline scenario.
    pub base: Value,
    pub axes: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub cell: String,
    pub values: BTreeMap<String, Value>,
    pub scenario_hash: String,
    pub tail_sup_norm_x: Option<f64>,
    pub final_rho: Option<f64>,
    pub regulation_threshold: Option<f64>,
    pub truncated: bool,
    pub checks: Vec<CheckSummary>,
    pub passed: bool,
}

/// Expands a sweep into `(cell values, scenario JSON)` pairs in row-major order.
pub fn expand_sweep(spec: &SweepSpec, base: &Value) -> CliResult<Vec<(BTreeMap<String, Value>, Value)>> {
    if spec.axes.is_empty() || spec.axes.iter().any(|a| a.values.is_empty()) {
        return Err(config_err("sweep needs at least one axis and no axis may be empty"));
    }
    let mut cells = vec![(BTreeMap::new(), base.clone())];
    for axis in &spec.axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for (vals, scen) in &cells {
            for v in &axis.values {
                let mut scen = scen.clone();
                set_path(&mut scen, &axis.path, v.clone())?;
                let mut vals = vals.clone();
                vals.insert(axis.path.clone(), v.clone());
                next.push((vals, scen));
            }
        }
        cells = next;
    }
    Ok(cells)
}

fn sweep_cell(
    index: usize,
    values: BTreeMap<String, Value>,
    scenario: Value,
    out: &Path,
    seed_dt: Option<f64>,
) -> CliResult<(SweepCell, ExitStatus)> {
    let loaded = scenario_from_value(scenario, seed_dt)?;
    let traj = integrate(&loaded.scenario)?;
    let name = format!("cell_{index:03}");
    let dir = out.join(&name);
    create_dir(&dir)?;
    write_trajectory(&dir.join(TRAJECTORY_FILE), &traj)?;
    let mut notes = Vec::new();
    let status = truncation_status(&loaded, &traj, &mut notes);
    let s = &loaded.scenario;
    let mut reports = Vec::new();
    if !traj.is_truncated() {
        if let Controller::DadsLinear { design, .. } = &s.controller {
            reports.push(check_radius_limsup(
                &traj,
                design.eps,
                DEFAULT_TAIL_FRACTION,
                DEFAULT_LIMSUP_SLACK,
            )?);
            reports.push(check_transient_bound(&traj, &s.controller, &s.theta, &s.disturbance)?);
            reports.push(check_gain_ceiling(&traj, &s.controller, &s.theta, &s.disturbance)?);
        }
        if s.controller.deadzone_level().is_some() {
            reports.push(check_deadzone(&traj, &s.controller)?);
        }
    }
    let theta_norm = s.theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let threshold = match &s.controller {
        Controller::Dads { params, .. } | Controller::DadsLinear { params, .. } if params.lambda > 0.0 => {
            Some(regulation_threshold(params, theta_norm)?)
        }
        _ => None,
    };
    let tail = tail_limsup(&traj, DEFAULT_TAIL_FRACTION).ok().map(|t| t.sup_norm_x);
    let cell = SweepCell {
        cell: name.clone(),
        values,
        scenario_hash: loaded.hash.clone(),
        tail_sup_norm_x: tail,
        final_rho: traj.final_rho(),
        regulation_threshold: threshold,
        truncated: traj.is_truncated(),
        checks: reports.iter().map(CheckSummary::from).collect(),
        passed: reports.iter().all(|r| r.passed),
    };
    let mut cell_manifest = RunManifest::new("simulate");
    cell_manifest.scenario_hash = Some(loaded.hash.clone());
    cell_manifest.artifacts = vec![TRAJECTORY_FILE.into(), "report.json".into(), MANIFEST_FILE.into()];
    cell_manifest.checks = cell.checks.clone();
    cell_manifest.notes = notes.clone();
    write_json(&dir.join(MANIFEST_FILE), &cell_manifest)?;
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({ "cell": cell, "reports": reports, "notes": notes }),
    )?;
    let status = if cell.passed {
        status
    } else {
        status.worst(ExitStatus::BoundFailure)
    };
    Ok((cell, status))
}

pub fn cmd_sweep(spec_path: &Path, out: &Path, jobs: usize, seed_dt: Option<f64>) -> CliResult<Outcome> {
    let text = fs::read_to_string(spec_path).map_err(|e| io_err(spec_path, e))?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| config_err(format!("sweep schema: {e}")))?;
    let base = match &spec.base {
        Value::String(rel) => {
            let path = spec_path.parent().unwrap_or_else(|| Path::new(".")).join(rel);
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        Value::Object(_) => spec.base.clone(),
        _ => return Err(config_err("sweep base must be a scenario path or an inline scenario")),
    };
    let cells = expand_sweep(&spec, &base)?;
    create_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| config_err(e.to_string()))?;
    let results: Vec<(SweepCell, ExitStatus)> = pool.install(|| {
        cells
            .into_par_iter()
            .enumerate()
            .map(|(i, (vals, scen))| sweep_cell(i, vals, scen, out, seed_dt))
            .collect::<CliResult<Vec<_>>>()
    })?;

    let path = out.join("sweep.csv");
    {
        let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
        let io = |e: csv::Error| config_err(e.to_string());
        let mut header = vec!["cell".to_string()];
        header.extend(spec.axes.iter().map(|a| a.path.clone()));
        header.extend(
            [
                "tail_sup_norm_x",
                "final_rho",
                "regulation_threshold",
                "truncated",
                "passed",
            ]
            .map(String::from),
        );
        w.write_record(&header).map_err(io)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        for (cell, _) in &results {
            let mut row = vec![cell.cell.clone()];
            row.extend(spec.axes.iter().map(|a| cell.values[&a.path].to_string()));
            row.push(opt(cell.tail_sup_norm_x));
            row.push(opt(cell.final_rho));
            row.push(opt(cell.regulation_threshold));
            row.push(cell.truncated.to_string());
            row.push(cell.passed.to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    let mut manifest = RunManifest::new("sweep");
    let hashes: Vec<&str> = results.iter().map(|(c, _)| c.scenario_hash.as_str()).collect();
    manifest.scenario_hash = Some(canonical_hash(&serde_json::json!(hashes)));
    manifest.artifacts.push("sweep.csv".into());
    for (cell, _) in &results {
        manifest.artifacts.push(format!("{}/{TRAJECTORY_FILE}", cell.cell));
        manifest.artifacts.push(format!("{}/report.json", cell.cell));
        manifest.artifacts.push(format!("{}/{MANIFEST_FILE}", cell.cell));
        manifest.checks.extend(cell.checks.iter().map(|c| CheckSummary {
            id: format!("{}:{}", cell.cell, c.id),
            ..c.clone()
        }));
    }
    manifest.artifacts.push(MANIFEST_FILE.into());
    let status = results.iter().fold(ExitStatus::Success, |acc, (_, s)| acc.worst(*s));
    manifest.details = serde_json::to_value(results.iter().map(|r| &r.0).collect::<Vec<_>>())
        .map_err(|e| config_err(e.to_string()))?;
    let outcome = Outcome::new(manifest, status);
    write_json(&out.join(MANIFEST_FILE), &outcome.manifest)?;
    Ok(outcome)
}

pub fn cmd_equilibria(k1: f64, k2: f64, k3: f64, k4: f64, m: f64, sigma: f64, theta: f64) -> CliResult<Outcome> {
    let params = NoDeadzoneParams::new(k1, k2, k3, k4, m, sigma)?;
    let mut manifest = RunManifest::new("equilibria");
    manifest.details = match foil_equilibria(&params, theta)? {
        None => serde_json::json!({ "origin_only": true }),
        Some(eq) => serde_json::json!({
            "origin_only": false,
            "rho_star": eq.rho_star,
            "x_star_pair": eq.x_star_pair(),
            "residual": eq.residual,
            "lower_bound": eq.lower_bound,
            "lower_bound_holds": eq.rho_star >= eq.lower_bound,
        }),
    };
    Ok(Outcome::new(manifest, ExitStatus::Success))
}
