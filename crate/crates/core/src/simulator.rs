//! Method-of-steps integration of closed-loop delay dynamics.
//!
//! Each step is a classic fourth-order Runge–Kutta step. Delayed reads at a
//! stage go through the history window; offsets that fall inside the current
//! step use the provisional stage state (see
//! [`HistoryWindow::extended`]). The control is recomputed at every stage.
//! Accepted samples are pushed into the window together with their exact
//! derivative, so the cubic Hermite history matches the integrator's order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{activation, control, ControllerSpec, RazumikhinGains};
use crate::delay_state::{History, HistoryWindow};
use crate::error::{invalid, Error, Result};
use crate::field::SharedField;
use crate::linalg::axpy;
use crate::system::DelayDynamics;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_DURATION: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct LoggedField {
    pub name: String,
    pub field: SharedField,
}

impl LoggedField {
    pub fn new(name: impl Into<String>, field: SharedField) -> Self {
        Self {
            name: name.into(),
            field,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntegrationSettings {
    step: f64,
    duration: f64,
    logged: Vec<LoggedField>,
    /// Largest admissible step as a fraction of the delay horizon.
    max_step_fraction: f64,
}

impl IntegrationSettings {
    /// Fixed step `h` over `[0, T]`. `h ≤ Δ/4` is checked against the
    /// initial history when integrating.
    pub fn new(step: f64, duration: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid(format!("step must be positive, got {step}")));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(invalid(format!("duration must be positive, got {duration}")));
        }
        Ok(Self {
            step,
            duration,
            logged: Vec::new(),
            max_step_fraction: 0.25,
        })
    }

    pub fn log(mut self, name: impl Into<String>, field: SharedField) -> Self {
        self.logged.push(LoggedField::new(name, field));
        self
    }

    /// Relaxes the step bound to `h ≤ Δ`; only for scalar comparison runs.
    pub(crate) fn allow_step_up_to_horizon(mut self) -> Self {
        self.max_step_fraction = 1.0;
        self
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn logged(&self) -> &[LoggedField] {
        &self.logged
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.step).round().max(1.0) as usize
    }

    /// Checks `h ≤ Δ/4` for a window horizon Δ.
    pub fn validate_for(&self, delay_horizon: f64) -> Result<()> {
        let limit = self.max_step_fraction * delay_horizon;
        if self.step > limit * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "step {} exceeds the admissible {} for Δ = {delay_horizon}",
                self.step, limit
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<RazumikhinGains>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: Vec<f64>,
    /// Closed-loop derivative at this sample; absent for data read back from
    /// CSV.
    #[serde(default)]
    pub xdot: Option<Vec<f64>>,
    pub u: Vec<f64>,
    /// Logged field values, in the order of [`Trajectory::field_names`].
    pub fields: Vec<f64>,
    /// Decrease margin of the controller's certificate.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub step: f64,
    pub delay_horizon: f64,
    /// Initial function samples on `[−Δ, 0]`.
    pub history: Vec<(f64, Vec<f64>)>,
    pub field_names: Vec<String>,
    pub samples: Vec<TrajectorySample>,
    /// Evaluations where the certificate admitted no decrease and `u = 0`
    /// was applied instead.
    pub certificate_violations: usize,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<&[f64]> {
        self.samples.last().map(|s| s.x.as_slice())
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.field_names.iter().position(|n| n == name)
    }

    /// Window holding the initial history, ready to be extended with the
    /// trajectory samples.
    pub fn initial_window(&self) -> Result<HistoryWindow> {
        let dim = self
            .history
            .first()
            .map(|(_, x)| x.len())
            .ok_or_else(|| invalid("trajectory has no initial history"))?;
        let mut w = HistoryWindow::empty(dim, self.delay_horizon)?;
        for (t, x) in &self.history {
            w.push_sample(*t, x.clone())?;
        }
        w.fill_stencil_slopes();
        Ok(w)
    }
}

struct Evaluation {
    xdot: Vec<f64>,
    u: Vec<f64>,
    margin: Option<f64>,
}

fn evaluate(
    dynamics: &dyn DelayDynamics,
    ctrl: Option<&ControllerSpec>,
    hist: &dyn History,
    violations: &mut usize,
) -> Result<Evaluation> {
    let (u, margin) = match ctrl {
        None => (vec![0.0; dynamics.input_dim()], None),
        Some(spec) => match control(spec, dynamics, hist) {
            Ok(out) => (out.u, Some(out.margin)),
            Err(Error::CertificateViolation { .. }) => {
                *violations += 1;
                let act = activation(spec, dynamics, hist)?;
                (vec![0.0; dynamics.input_dim()], Some(act.a))
            }
            Err(e) => return Err(e),
        },
    };
    let xdot = dynamics.rhs(hist, &u)?;
    Ok(Evaluation { xdot, u, margin })
}

fn check_inputs(
    dynamics: &dyn DelayDynamics,
    ctrl: Option<&ControllerSpec>,
    initial: &HistoryWindow,
    settings: &IntegrationSettings,
) -> Result<()> {
    if initial.dim() != dynamics.state_dim() {
        return Err(invalid(format!(
            "initial history has dimension {}, system expects {}",
            initial.dim(),
            dynamics.state_dim()
        )));
    }
    if let Some(spec) = ctrl {
        if spec.certificate().dim() != dynamics.state_dim() {
            return Err(invalid("certificate dimension does not match the system"));
        }
    }
    for lf in settings.logged() {
        if lf.field.dim() != dynamics.state_dim() {
            return Err(invalid(format!("logged field '{}' has the wrong dimension", lf.name)));
        }
    }
    let horizon = initial.horizon();
    if initial.latest_time() - initial.earliest_time() < horizon * (1.0 - 1e-12) {
        return Err(invalid("initial history does not span the delay horizon"));
    }
    if let Some(deepest) = dynamics
        .read_points()
        .into_iter()
        .reduce(f64::min)
        .filter(|&d| d < -horizon)
    {
        return Err(Error::OutOfRange(format!(
            "system reads θ = {deepest} beyond the horizon Δ = {horizon}"
        )));
    }
    settings.validate_for(horizon)
}

/// Integrates `ẋ = f(x_t) + g(x_t)·u(x_t)` from the initial history `ξ`.
/// With `ctrl = None` the input is held at zero.
pub fn integrate(
    dynamics: &dyn DelayDynamics,
    ctrl: Option<&ControllerSpec>,
    initial: &HistoryWindow,
    settings: &IntegrationSettings,
) -> Result<Trajectory> {
    check_inputs(dynamics, ctrl, initial, settings)?;
    let h = settings.step();
    let steps = settings.steps();
    let t0 = initial.latest_time();
    let mut window = initial.clone();
    window.fill_stencil_slopes();
    let mut traj = Trajectory {
        step: h,
        delay_horizon: initial.horizon(),
        history: initial.samples().map(|(t, x)| (t, x.to_vec())).collect(),
        field_names: settings.logged().iter().map(|l| l.name.clone()).collect(),
        samples: Vec::with_capacity(steps + 1),
        certificate_violations: 0,
        meta: TrajectoryMeta::default(),
    };
    if let Some(spec) = ctrl {
        traj.meta.gains = Some(spec.gains());
        traj.meta.lambda = Some(spec.lambda());
    }
    let n = dynamics.state_dim();
    let mut violations = 0;
    let mut stage = vec![0.0; n];
    for k in 0..=steps {
        let t = t0 + k as f64 * h;
        let x = window.latest_state().to_vec();
        let k1 = evaluate(dynamics, ctrl, &window, &mut violations)?;
        if !k1.xdot.iter().all(|v| v.is_finite()) {
            traj.certificate_violations = violations;
            return Err(Error::Diverged {
                time: t,
                partial: Box::new(traj),
            });
        }
        window.set_latest_slope(k1.xdot.clone())?;
        traj.samples.push(TrajectorySample {
            t,
            fields: settings.logged().iter().map(|l| l.field.value(&x)).collect(),
            x: x.clone(),
            xdot: Some(k1.xdot.clone()),
            u: k1.u,
            margin: k1.margin,
        });
        if k == steps {
            break;
        }

        stage.copy_from_slice(&x);
        axpy(0.5 * h, &k1.xdot, &mut stage);
        let k2 = evaluate(dynamics, ctrl, &window.extended(t + 0.5 * h, &stage), &mut violations)?;

        stage.copy_from_slice(&x);
        axpy(0.5 * h, &k2.xdot, &mut stage);
        let k3 = evaluate(dynamics, ctrl, &window.extended(t + 0.5 * h, &stage), &mut violations)?;

        stage.copy_from_slice(&x);
        axpy(h, &k3.xdot, &mut stage);
        let k4 = evaluate(dynamics, ctrl, &window.extended(t + h, &stage), &mut violations)?;

        let mut next = x;
        for i in 0..n {
            next[i] += h / 6.0 * (k1.xdot[i] + 2.0 * k2.xdot[i] + 2.0 * k3.xdot[i] + k4.xdot[i]);
        }
        if !next.iter().all(|v| v.is_finite()) {
            traj.certificate_violations = violations;
            return Err(Error::Diverged {
                time: t + h,
                partial: Box::new(traj),
            });
        }
        window.push_sample(t0 + (k + 1) as f64 * h, next)?;
    }
    traj.certificate_violations = violations;
    Ok(traj)
}

/// Independent integrations from each initial history, in input order.
/// Members run in parallel; results do not depend on scheduling.
pub fn batch_integrate(
    dynamics: &dyn DelayDynamics,
    ctrl: Option<&ControllerSpec>,
    initial: &[HistoryWindow],
    settings: &IntegrationSettings,
) -> Vec<Result<Trajectory>> {
    initial
        .par_iter()
        .map(|xi| integrate(dynamics, ctrl, xi, settings))
        .collect()
}
