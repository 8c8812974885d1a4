//! Subcommands of the `rzk` binary, callable as functions.
//!
//! Every command returns an [`Outcome`]; [`Outcome::exit_code`] maps it to
//! the process status: 0 when all checks pass, 1 on a failed check, 2 on a
//! usage, config or I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use rzk_core::config::{Certificate, InitialCondition, RunConfig};
use rzk_core::controller::{ControllerSpec, RazumikhinGains};
use rzk_core::csv_io::{format_number, read_trajectory, write_trajectory, EnvelopeColumn};
use rzk_core::field::{
    combine_clbrf, ExampleBarrier, KMonomial, QuadraticField, RegionBox, SandwichBounds, ScalarField,
    SharedField,
};
use rzk_core::halanay::{
    check_envelope, constant_scalar_history, decay_rate, scalar_comparison_sim, DecayCertificate, EnvelopeReport, RootVariant,
};
use rzk_core::simulator::{batch_integrate, IntegrationSettings, Trajectory};
use rzk_core::system::{ExampleConfig, ExampleSystem};
use rzk_core::verifier::{
    clbrf_construction_check, convergence_check, decrease_check, envelope_check, in_refined_unsafe_set,
    margin_check, safety_check, separation_check, ConstructionInputs, ConstructionReport, UnsafeSet,
    VerificationReport, Witness,
};
use rzk_core::Error as CoreError;

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const VERIFY_FILE: &str = "verify.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("usage: {0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Pass,
    /// Names of the failing reports.
    Fail(Vec<String>),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail(_) => 1,
        }
    }

    fn from_failures(failures: Vec<String>) -> Self {
        if failures.is_empty() {
            Outcome::Pass
        } else {
            Outcome::Fail(failures)
        }
    }
}

pub fn exit_code(result: &Result<Outcome, CliError>) -> i32 {
    match result {
        Ok(o) => o.exit_code(),
        Err(_) => 2,
    }
}

/// Everything a run needs, built from a config and its overrides.
pub struct Setup {
    pub system: ExampleSystem,
    pub v: SharedField,
    pub b: SharedField,
    pub w: SharedField,
    pub certificate_field: SharedField,
    pub controller: Option<ControllerSpec>,
    pub gains: RazumikhinGains,
    pub decay: Option<DecayCertificate>,
    pub horizon: f64,
}

/// Overrides of the swept parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub psi: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
}

pub fn build_setup(cfg: &RunConfig, ov: Overrides) -> Result<Setup, CliError> {
    let tau = ov.tau.unwrap_or(cfg.system.tau);
    let psi = ov.psi.unwrap_or(cfg.psi);
    let lambda = ov.lambda.unwrap_or(cfg.lambda);
    let gains = RazumikhinGains::new(
        ov.gamma.unwrap_or(cfg.gains.gamma()),
        ov.eta.unwrap_or(cfg.gains.eta()),
        cfg.gains.mu(),
    )?;
    let horizon = cfg.horizon();
    let system = ExampleSystem::new(ExampleConfig::new(tau)?);
    let v: SharedField = Arc::new(QuadraticField::example_lyapunov());
    let b: SharedField = Arc::new(ExampleBarrier::new());
    let w: SharedField = if psi > 0.0 {
        Arc::new(combine_clbrf(v.clone(), b.clone(), psi)?)
    } else {
        v.clone()
    };
    let certificate_field = match cfg.certificate {
        Certificate::V | Certificate::Open => v.clone(),
        Certificate::B => b.clone(),
        Certificate::W => w.clone(),
    };
    let controller = match cfg.certificate {
        Certificate::Open => None,
        _ => Some(
            ControllerSpec::new(certificate_field.clone(), gains, lambda)?.with_theta_grid(cfg.theta_grid)?,
        ),
    };
    let decay = if gains.eta() > 0.0 {
        Some(DecayCertificate::new(
            gains.gamma(),
            gains.eta(),
            gains.mu(),
            horizon,
            cfg.verification.variant,
            cfg.verification.rate_factor,
        )?)
    } else {
        None
    };
    Ok(Setup {
        system,
        v,
        b,
        w,
        certificate_field,
        controller,
        gains,
        decay,
        horizon,
    })
}

fn construction_report(cfg: &RunConfig, setup: &Setup, psi: f64) -> Result<ConstructionReport, CliError> {
    let phi = KMonomial::quadratic((-rzk_core::field::HAZARD_LEVEL).exp())?;
    Ok(clbrf_construction_check(&ConstructionInputs {
        lyapunov: setup.v.as_ref(),
        barrier: setup.b.as_ref(),
        bounds: SandwichBounds::example(),
        region: RegionBox::example_obstacle(),
        unsafe_set: UnsafeSet::example(),
        phi,
        psi,
        gains_v: setup.gains,
        gains_b: setup.gains,
        boundary_grid: cfg.verification.boundary_grid,
        interior_samples: cfg.verification.interior_samples,
        exterior_samples: cfg.verification.interior_samples,
        seed: cfg.seed,
    })?)
}

/// Initial history outside `𝐃 = {x ∈ 𝔛 : W(x) > 0}`.
fn initial_condition_report(traj: &Trajectory, w: &dyn ScalarField) -> VerificationReport {
    let region = RegionBox::example_obstacle();
    let bad = traj
        .history
        .iter()
        .find(|(_, x)| in_refined_unsafe_set(&region, w, x));
    VerificationReport {
        check: "initial-condition".into(),
        passed: bad.is_none(),
        worst_value: bad.map_or(0.0, |(_, x)| w.value(x)),
        witness: bad.map(|(t, x)| Witness {
            t: Some(*t),
            state: x.clone(),
        }),
        samples: traj.history.len(),
        tolerances: Default::default(),
    }
}

/// Checks applied to every trajectory.
pub fn trajectory_reports(cfg: &RunConfig, setup: &Setup, traj: &Trajectory) -> Result<Vec<VerificationReport>, CliError> {
    let v = &cfg.verification;
    let mut reports = vec![
        initial_condition_report(traj, setup.w.as_ref()),
        safety_check(traj, &UnsafeSet::example(), v.safety_tolerance)?,
        convergence_check(traj, v.convergence_radius)?,
        decrease_check(traj, setup.certificate_field.as_ref(), setup.gains, v.decrease_coeff)?,
    ];
    if let Some(decay) = &setup.decay {
        reports.push(envelope_check(
            traj,
            setup.certificate_field.as_ref(),
            decay,
            v.envelope_tolerance,
        )?);
    }
    reports.push(margin_check(traj, v.margin_tolerance));
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySummary {
    pub file: String,
    pub initial_condition: InitialCondition,
    /// `completed` or `diverged`.
    pub status: String,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub certificate_violations: usize,
    pub reports: Vec<VerificationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: String,
    pub passed: bool,
    pub failures: Vec<String>,
    pub construction: ConstructionReport,
    pub separation: VerificationReport,
    pub decay: Option<DecayCertificate>,
    pub trajectories: Vec<TrajectorySummary>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

fn envelope_column(setup: &Setup, traj: &Trajectory) -> Option<EnvelopeColumn> {
    let decay = setup.decay.as_ref()?;
    let first = traj.samples.first()?;
    Some(EnvelopeColumn {
        v0: setup.certificate_field.value(&first.x),
        rate: decay.rate,
    })
}

/// Simulates every initial condition of `cfg`, verifies, and writes
/// `<prefix>_<k>.csv` and `summary.json` into `out_dir`.
pub fn run_config(cfg: &RunConfig, out_dir: &Path) -> Result<(RunSummary, Outcome), CliError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let setup = build_setup(cfg, Overrides::default())?;
    log::info!("construction check, ψ = {}", cfg.psi);
    let construction = construction_report(cfg, &setup, cfg.psi)?;
    let v = &cfg.verification;
    let separation = separation_check(
        &UnsafeSet::example(),
        setup.w.as_ref(),
        v.separation_samples,
        v.shell_width,
        v.separation_level,
        cfg.seed,
    )?;

    let windows = cfg
        .initial_conditions
        .iter()
        .map(|ic| ic.window(setup.horizon))
        .collect::<Result<Vec<_>, _>>()?;
    let settings = IntegrationSettings::new(cfg.integration.step, cfg.integration.duration)?
        .log("V", setup.v.clone())
        .log("B", setup.b.clone())
        .log("W", setup.w.clone());
    log::info!("integrating {} initial conditions", windows.len());
    let results = batch_integrate(&setup.system, setup.controller.as_ref(), &windows, &settings);

    let mut failures = Vec::new();
    for item in construction.items.iter().filter(|r| !r.passed) {
        failures.push(format!("construction: {}", item.check));
    }
    if !separation.passed {
        failures.push("separation".into());
    }
    let mut trajectories = Vec::new();
    for (k, (result, ic)) in results.into_iter().zip(&cfg.initial_conditions).enumerate() {
        let file = format!("{}_{}.csv", cfg.output.prefix, k + 1);
        let (mut traj, status) = match result {
            Ok(t) => (t, "completed"),
            Err(CoreError::Diverged { partial, time }) => {
                log::warn!("{file}: integration diverged at t = {time}");
                (*partial, "diverged")
            }
            Err(e) => return Err(e.into()),
        };
        traj.meta.tau = Some(cfg.system.tau);
        traj.meta.psi = Some(cfg.psi);
        traj.meta.seed = Some(cfg.seed);
        let path = out_dir.join(&file);
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj, envelope_column(&setup, &traj))?;
        write_file(&path, &buf)?;
        if status == "diverged" {
            failures.push(format!("{file}: diverged"));
        }
        let reports = trajectory_reports(cfg, &setup, &traj)?;
        for r in reports.iter().filter(|r| !r.passed) {
            failures.push(format!("{file}: {}", r.check));
        }
        let last = traj.samples.last();
        trajectories.push(TrajectorySummary {
            file,
            initial_condition: ic.clone(),
            status: status.into(),
            final_time: last.map_or(0.0, |s| s.t),
            final_state: last.map(|s| s.x.clone()).unwrap_or_default(),
            certificate_violations: traj.certificate_violations,
            reports,
        });
    }
    let summary = RunSummary {
        config: CONFIG_FILE.into(),
        passed: failures.is_empty(),
        failures: failures.clone(),
        construction,
        separation,
        decay: setup.decay,
        trajectories,
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Usage(e.to_string()))?;
    json.push('\n');
    write_file(&out_dir.join(SUMMARY_FILE), json.as_bytes())?;
    for f in &failures {
        log::error!("check failed: {f}");
    }
    Ok((summary, Outcome::from_failures(failures)))
}

/// Command-line overrides shared by the config-driven commands.
#[derive(Debug, Clone, Default)]
pub struct CommonArgs {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid_points: Option<usize>,
    pub variant: Option<RootVariant>,
}

fn apply_common(cfg: &mut RunConfig, args: &CommonArgs) -> PathBuf {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(g) = args.grid_points {
        cfg.verification.boundary_grid = g;
    }
    if let Some(v) = args.variant {
        cfg.verification.variant = v;
    }
    match &args.out {
        Some(out) => {
            cfg.output.dir = out.to_string_lossy().into_owned();
            out.clone()
        }
        None => PathBuf::from(&cfg.output.dir),
    }
}

/// The mechanical example with its documented defaults. Writes the config
/// it used next to the outputs.
pub fn cmd_demo(args: &CommonArgs, psi: Option<f64>) -> Result<Outcome, CliError> {
    let mut cfg = RunConfig::demo();
    if let Some(psi) = psi {
        cfg.psi = psi;
    }
    let out = apply_common(&mut cfg, args);
    cfg.validate()?;
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    write_file(&out.join(CONFIG_FILE), cfg.to_json().as_bytes())?;
    let (_, outcome) = run_config(&cfg, &out)?;
    Ok(outcome)
}

pub fn cmd_simulate(config: &Path, args: &CommonArgs) -> Result<Outcome, CliError> {
    let mut cfg = RunConfig::load(config).map_err(|e| match e {
        CoreError::Io(source) => CliError::Io {
            path: config.to_path_buf(),
            source,
        },
        other => other.into(),
    })?;
    let out = apply_common(&mut cfg, args);
    let (_, outcome) = run_config(&cfg, &out)?;
    Ok(outcome)
}

/// Roots of the gain equation, optionally with the comparison-system
/// envelope report.
#[derive(Debug, Clone, Serialize)]
pub struct HalanayResult {
    pub variant: RootVariant,
    pub root: f64,
    pub rate: f64,
    pub envelope: Option<EnvelopeReport>,
}

pub fn halanay(
    gamma: f64,
    eta: f64,
    delay: f64,
    variants: &[RootVariant],
    envelope: bool,
) -> Result<Vec<HalanayResult>, CliError> {
    let sim = if envelope {
        let init = constant_scalar_history(1.0, delay)?;
        Some(scalar_comparison_sim(gamma, eta, 0.0, &init, 10.0, (delay / 4.0).min(1e-3))?)
    } else {
        None
    };
    variants
        .iter()
        .map(|&variant| {
            let root = decay_rate(gamma, eta, delay, variant)?;
            let rate = rzk_core::halanay::DEFAULT_RATE_FACTOR * root;
            let envelope = match &sim {
                Some(v) => Some(check_envelope(v, 1.0, rate, rzk_core::halanay::DEFAULT_ENVELOPE_TOLERANCE)?),
                None => None,
            };
            Ok(HalanayResult {
                variant,
                root,
                rate,
                envelope,
            })
        })
        .collect()
}

pub fn cmd_halanay(
    gamma: f64,
    eta: f64,
    delay: f64,
    variant: Option<RootVariant>,
    envelope: bool,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let variants = match variant {
        Some(v) => vec![v],
        None => vec![RootVariant::Proof, RootVariant::Statement],
    };
    let results = halanay(gamma, eta, delay, &variants, envelope)?;
    let mut failures = Vec::new();
    let stdout_err = |e: std::io::Error| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    for r in &results {
        let name = match r.variant {
            RootVariant::Proof => "proof",
            RootVariant::Statement => "statement",
        };
        writeln!(out, "{name}: rho_bar = {:.10} rate = {:.10}", r.root, r.rate).map_err(stdout_err)?;
        if let Some(e) = &r.envelope {
            writeln!(
                out,
                "{name}: envelope max_ratio = {:.10} passed = {}",
                e.max_ratio, e.passed
            )
            .map_err(stdout_err)?;
            if !e.passed {
                failures.push(format!("envelope ({name})"));
            }
        }
    }
    Ok(Outcome::from_failures(failures))
}

/// One row of the sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub tau: f64,
    pub psi: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub eta: f64,
    pub initial_condition: Option<usize>,
    pub converged: bool,
    pub diverged: bool,
    pub min_safety_margin: f64,
    pub max_envelope_ratio: Option<f64>,
    pub envelope_ok: bool,
    pub decrease_ok: bool,
    pub construction_ok: bool,
    pub passed: bool,
}

pub const SWEEP_HEADER: &str = "tau,psi,lambda,gamma,eta,initial_condition,converged,diverged,min_safety_margin,max_envelope_ratio,envelope_ok,decrease_ok,construction_ok,passed";

impl SweepRow {
    fn to_csv(&self) -> String {
        let num = |v: f64| format_number(v);
        [
            num(self.tau),
            num(self.psi),
            num(self.lambda),
            num(self.gamma),
            num(self.eta),
            self.initial_condition.map(|i| i.to_string()).unwrap_or_default(),
            self.converged.to_string(),
            self.diverged.to_string(),
            num(self.min_safety_margin),
            self.max_envelope_ratio.map(num).unwrap_or_default(),
            self.envelope_ok.to_string(),
            self.decrease_ok.to_string(),
            self.construction_ok.to_string(),
            self.passed.to_string(),
        ]
        .join(",")
    }
}

fn sweep_point(cfg: &RunConfig, p: &rzk_core::config::SweepPoint) -> Result<SweepRow, CliError> {
    let setup = build_setup(
        cfg,
        Overrides {
            tau: Some(p.tau),
            psi: Some(p.psi),
            lambda: Some(p.lambda),
            gamma: Some(p.gamma),
            eta: Some(p.eta),
        },
    )?;
    let ics: Vec<InitialCondition> = match (p.initial_condition, cfg.sweep.as_ref()) {
        (Some(i), Some(s)) => vec![s.initial_conditions.as_ref().expect("axis declared")[i].clone()],
        _ => cfg.initial_conditions.clone(),
    };
    let windows = ics
        .iter()
        .map(|ic| ic.window(setup.horizon))
        .collect::<Result<Vec<_>, _>>()?;
    let settings = IntegrationSettings::new(cfg.integration.step, cfg.integration.duration)?;
    let construction = construction_report(cfg, &setup, p.psi)?;
    let mut row = SweepRow {
        tau: p.tau,
        psi: p.psi,
        lambda: p.lambda,
        gamma: p.gamma,
        eta: p.eta,
        initial_condition: p.initial_condition,
        converged: true,
        diverged: false,
        min_safety_margin: f64::INFINITY,
        max_envelope_ratio: None,
        envelope_ok: true,
        decrease_ok: true,
        construction_ok: construction.passed,
        passed: false,
    };
    let v = &cfg.verification;
    for result in batch_integrate(&setup.system, setup.controller.as_ref(), &windows, &settings) {
        let traj = match result {
            Ok(t) => t,
            Err(CoreError::Diverged { partial, .. }) => {
                row.diverged = true;
                *partial
            }
            Err(e) => return Err(e.into()),
        };
        let safety = safety_check(&traj, &UnsafeSet::example(), v.safety_tolerance)?;
        row.min_safety_margin = row.min_safety_margin.min(safety.worst_value);
        row.converged &= convergence_check(&traj, v.convergence_radius)?.passed;
        row.decrease_ok &= decrease_check(&traj, setup.certificate_field.as_ref(), setup.gains, v.decrease_coeff)?.passed;
        if let Some(decay) = &setup.decay {
            let e = envelope_check(&traj, setup.certificate_field.as_ref(), decay, v.envelope_tolerance)?;
            row.envelope_ok &= e.passed;
            if e.tolerances.contains_key("ratio") {
                row.max_envelope_ratio = Some(row.max_envelope_ratio.map_or(e.worst_value, |m| m.max(e.worst_value)));
            }
        }
    }
    row.passed = !row.diverged
        && row.converged
        && row.min_safety_margin >= v.safety_tolerance
        && row.envelope_ok
        && row.decrease_ok
        && row.construction_ok;
    Ok(row)
}

/// Runs every grid point of the config's sweep in parallel and writes
/// `sweep.csv`, one row per grid point.
pub fn cmd_sweep(config: &Path, args: &CommonArgs) -> Result<Outcome, CliError> {
    let mut cfg = RunConfig::load(config)?;
    let out = apply_common(&mut cfg, args);
    cfg.validate()?;
    let points = cfg.sweep.as_ref().map(|s| s.points(&cfg)).unwrap_or_default();
    log::info!("sweep over {} grid points", points.len());
    let rows = points
        .par_iter()
        .map(|p| sweep_point(&cfg, p))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut text = String::from(SWEEP_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    write_file(&out.join(SWEEP_FILE), text.as_bytes())?;
    let failures = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.passed)
        .map(|(i, _)| format!("sweep row {}", i + 1))
        .collect();
    Ok(Outcome::from_failures(failures))
}

/// Re-runs the trajectory checks on a CSV written by `simulate` or `demo`.
/// Certificate, gains and tolerances come from `config` (the demo config
/// when absent). Reports go to `out` as JSON.
pub fn cmd_verify(
    csv_path: &Path,
    config: Option<&Path>,
    args: &CommonArgs,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::demo(),
    };
    let out_dir = args.out.clone();
    apply_common(&mut cfg, args);
    let setup = build_setup(&cfg, Overrides::default())?;
    let file = fs::File::open(csv_path).map_err(io_err(csv_path))?;
    let traj = read_trajectory(std::io::BufReader::new(file), setup.horizon)?;
    let reports = trajectory_reports(&cfg, &setup, &traj)?;
    let failures: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.check.clone()).collect();
    let mut json = serde_json::to_string_pretty(&reports).map_err(|e| CliError::Usage(e.to_string()))?;
    json.push('\n');
    if let Some(dir) = out_dir {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_file(&dir.join(VERIFY_FILE), json.as_bytes())?;
    }
    out.write_all(json.as_bytes()).map_err(|e| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })?;
    Ok(Outcome::from_failures(failures))
}
