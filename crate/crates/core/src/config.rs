//! Declarative run configuration (JSON).

use serde::{Deserialize, Serialize};

use crate::controller::RazumikhinGains;
use crate::delay_state::{HistoryWindow, DEFAULT_THETA_GRID};
use crate::error::{Error, Result};
use crate::halanay::RootVariant;
use crate::simulator::{DEFAULT_DURATION, DEFAULT_STEP};
use crate::system::{ExampleConfig, EXAMPLE_MAX_DELAY};
use crate::verifier::{
    DEFAULT_BOUNDARY_GRID, DEFAULT_CONVERGENCE_RADIUS, DEFAULT_DECREASE_COEFF, DEFAULT_INTERIOR_SAMPLES,
    DEFAULT_SAFETY_TOLERANCE, DEFAULT_SEPARATION_LEVEL, DEFAULT_SHELL_WIDTH,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// Mass with delayed friction.
    Example,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub tau: f64,
}

/// Which field drives the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Certificate {
    V,
    B,
    W,
    /// Open loop, `u ≡ 0`.
    #[serde(rename = "none")]
    Open,
}

/// A constant vector, or samples `[t, x₁, …, xₙ]` of a function on `[−Δ, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialCondition {
    Constant(Vec<f64>),
    Sampled { samples: Vec<Vec<f64>> },
}

impl InitialCondition {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(x) => x.len(),
            Self::Sampled { samples } => samples.first().map_or(0, |r| r.len().saturating_sub(1)),
        }
    }

    pub fn window(&self, horizon: f64) -> Result<HistoryWindow> {
        match self {
            Self::Constant(x) => HistoryWindow::from_constant(x, horizon),
            Self::Sampled { samples } => {
                let dim = self.dim();
                let mut w = HistoryWindow::empty(dim, horizon)?.without_eviction();
                for row in samples {
                    if row.len() != dim + 1 {
                        return Err(Error::Config("sampled initial condition rows differ in length".into()));
                    }
                    w.push_sample(row[0], row[1..].to_vec())?;
                }
                if (w.latest_time()).abs() > 1e-12 || w.earliest_time() > -horizon * (1.0 - 1e-12) {
                    return Err(Error::Config(format!("sampled initial condition must cover [−{horizon}, 0]")));
                }
                Ok(w)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub step: f64,
    pub duration: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            duration: DEFAULT_DURATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Trajectory files are `<prefix>_<k>.csv`, `k` from 1.
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            prefix: "trajectory".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationConfig {
    pub safety_tolerance: f64,
    pub decrease_coeff: f64,
    pub convergence_radius: f64,
    pub margin_tolerance: f64,
    pub envelope_tolerance: f64,
    pub rate_factor: f64,
    pub variant: RootVariant,
    pub boundary_grid: usize,
    pub interior_samples: usize,
    pub shell_width: f64,
    pub separation_level: f64,
    pub separation_samples: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            safety_tolerance: DEFAULT_SAFETY_TOLERANCE,
            decrease_coeff: DEFAULT_DECREASE_COEFF,
            convergence_radius: DEFAULT_CONVERGENCE_RADIUS,
            margin_tolerance: 1e-9,
            envelope_tolerance: 1e-6,
            rate_factor: crate::halanay::DEFAULT_RATE_FACTOR,
            variant: RootVariant::Proof,
            boundary_grid: DEFAULT_BOUNDARY_GRID,
            interior_samples: DEFAULT_INTERIOR_SAMPLES,
            shell_width: DEFAULT_SHELL_WIDTH,
            separation_level: DEFAULT_SEPARATION_LEVEL,
            separation_samples: 10_000,
        }
    }
}

/// Axes of a parameter sweep; the grid is their cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_conditions: Option<Vec<InitialCondition>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    pub psi: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Index into the sweep's initial conditions, when that axis is swept.
    pub initial_condition: Option<usize>,
}

impl SweepConfig {
    fn declared(&self) -> bool {
        self.tau.is_some()
            || self.psi.is_some()
            || self.lambda.is_some()
            || self.gamma.is_some()
            || self.eta.is_some()
            || self.initial_conditions.is_some()
    }

    /// Grid points in row-major order (τ slowest). No declared axis means
    /// an empty grid.
    pub fn points(&self, base: &RunConfig) -> Vec<SweepPoint> {
        if !self.declared() {
            return Vec::new();
        }
        let axis = |a: &Option<Vec<f64>>, d: f64| a.clone().unwrap_or_else(|| vec![d]);
        let ics: Vec<Option<usize>> = match &self.initial_conditions {
            Some(list) => (0..list.len()).map(Some).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for tau in axis(&self.tau, base.system.tau) {
            for psi in axis(&self.psi, base.psi) {
                for lambda in axis(&self.lambda, base.lambda) {
                    for gamma in axis(&self.gamma, base.gains.gamma()) {
                        for eta in axis(&self.eta, base.gains.eta()) {
                            for &initial_condition in &ics {
                                out.push(SweepPoint {
                                    tau,
                                    psi,
                                    lambda,
                                    gamma,
                                    eta,
                                    initial_condition,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub system: SystemConfig,
    pub certificate: Certificate,
    /// Weight of the barrier in `W = V + ψB`.
    pub psi: f64,
    pub gains: RazumikhinGains,
    pub lambda: f64,
    pub initial_conditions: Vec<InitialCondition>,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default = "default_theta_grid")]
    pub theta_grid: usize,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_theta_grid() -> usize {
    DEFAULT_THETA_GRID
}

impl RunConfig {
    /// The mechanical example: τ = 0.3, ψ = 82, γ = 2.5, η = 2, μ = 0,
    /// λ = 2, four constant initial histories around the obstacle.
    pub fn demo() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            system: SystemConfig {
                kind: SystemKind::Example,
                tau: EXAMPLE_MAX_DELAY,
            },
            certificate: Certificate::W,
            psi: 82.0,
            gains: RazumikhinGains::new(2.5, 2.0, 0.0).expect("valid demo gains"),
            lambda: 2.0,
            initial_conditions: vec![
                InitialCondition::Constant(vec![-4.0, 1.0]),
                InitialCondition::Constant(vec![-2.0, 3.0]),
                InitialCondition::Constant(vec![0.0, 1.0]),
                InitialCondition::Constant(vec![-2.0, -1.0]),
            ],
            integration: IntegrationConfig::default(),
            theta_grid: DEFAULT_THETA_GRID,
            output: OutputConfig::default(),
            seed: 0,
            verification: VerificationConfig::default(),
            sweep: None,
        }
    }

    /// History horizon `Δ`; the example system always uses its maximal delay.
    pub fn horizon(&self) -> f64 {
        match self.system.kind {
            SystemKind::Example => EXAMPLE_MAX_DELAY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return cfg_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        ExampleConfig::new(self.system.tau).map_err(|e| Error::Config(format!("system.tau: {e}")))?;
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return cfg_err(format!("psi must be a non-negative number, got {}", self.psi));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return cfg_err(format!("lambda must be positive, got {}", self.lambda));
        }
        let h = self.integration.step;
        let delta = self.horizon();
        if !(h > 0.0 && h <= delta / 4.0) {
            return cfg_err(format!("integration.step must lie in (0, Δ/4] = (0, {}], got {h}", delta / 4.0));
        }
        if !(self.integration.duration > 0.0 && self.integration.duration.is_finite()) {
            return cfg_err("integration.duration must be positive".into());
        }
        if self.theta_grid < 2 {
            return cfg_err("theta_grid needs at least 2 points".into());
        }
        let check_ics = |ics: &[InitialCondition], key: &str| -> Result<()> {
            for (i, ic) in ics.iter().enumerate() {
                if ic.dim() != 2 {
                    return Err(Error::Config(format!("{key}[{i}]: expected a 2-vector")));
                }
                ic.window(delta)
                    .map_err(|e| Error::Config(format!("{key}[{i}]: {e}")))?;
            }
            Ok(())
        };
        check_ics(&self.initial_conditions, "initial_conditions")?;
        let v = &self.verification;
        if v.boundary_grid < 100 {
            return cfg_err("verification.boundary_grid must be at least 100".into());
        }
        if v.separation_samples < 1000 {
            return cfg_err("verification.separation_samples must be at least 1000".into());
        }
        if !(v.rate_factor > 0.0 && v.rate_factor < 1.0) {
            return cfg_err("verification.rate_factor must lie in (0, 1)".into());
        }
        if let Some(sweep) = &self.sweep {
            if let Some(ics) = &sweep.initial_conditions {
                check_ics(ics, "sweep.initial_conditions")?;
            }
            for tau in sweep.tau.iter().flatten() {
                ExampleConfig::new(*tau).map_err(|e| Error::Config(format!("sweep.tau: {e}")))?;
            }
            for p in sweep.points(self) {
                RazumikhinGains::new(p.gamma, p.eta, self.gains.mu())
                    .map_err(|e| Error::Config(format!("sweep gains: {e}")))?;
                if !(p.lambda > 0.0) || !(p.psi >= 0.0) {
                    return cfg_err("sweep: lambda must be positive and psi non-negative".into());
                }
            }
        }
        Ok(())
    }

    /// Parses and validates; errors name the line, column and key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!(
                "line {} column {}, at '{}': {}",
                inner.line(),
                inner.column(),
                path,
                inner
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}
