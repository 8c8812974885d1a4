//! Universal (Sontag-type) feedback for Razumikhin certificates.
//!
//! For a certificate `F` with gains `(γ, η, μ)` the activation is
//!
//! ```text
//! a(φ) = L_f F(φ) + γ·F(φ(0)) − η·sup_θ e^{μθ}F(φ(θ))
//! q(φ) = (L_g F(φ))ᵀ
//! ```
//!
//! and the control is `u = κ(λ, a, q)`. Whenever `q ≠ 0` this places the
//! closed-loop decrease margin `a + q·u` at exactly `−√(a² + λ‖q‖⁴)`.

use serde::{Deserialize, Serialize};

use crate::delay_state::{weighted_sup, History, HistoryWindow, DEFAULT_THETA_GRID};
use crate::error::{invalid, Error, Result};
use crate::field::SharedField;
use crate::linalg::{dot, norm, norm_sq};
use crate::system::{lie_derivatives, DelayDynamics};

pub const DEFAULT_Q_THRESHOLD: f64 = 1e-12;

/// `(γ, η, μ)` with `γ > η ≥ 0` and `μ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGains")]
pub struct RazumikhinGains {
    gamma: f64,
    eta: f64,
    mu: f64,
}

#[derive(Deserialize)]
struct RawGains {
    gamma: f64,
    eta: f64,
    #[serde(default)]
    mu: f64,
}

impl TryFrom<RawGains> for RazumikhinGains {
    type Error = Error;

    fn try_from(raw: RawGains) -> Result<Self> {
        Self::new(raw.gamma, raw.eta, raw.mu)
    }
}

impl RazumikhinGains {
    pub fn new(gamma: f64, eta: f64, mu: f64) -> Result<Self> {
        if !(gamma.is_finite() && eta.is_finite() && mu.is_finite()) {
            return Err(invalid("gains must be finite"));
        }
        if !(gamma > eta && eta >= 0.0) {
            return Err(invalid(format!("need γ > η ≥ 0, got γ = {gamma}, η = {eta}")));
        }
        if mu < 0.0 {
            return Err(invalid(format!("need μ ≥ 0, got {mu}")));
        }
        Ok(Self { gamma, eta, mu })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

#[derive(Debug, Clone)]
pub struct ControllerSpec {
    certificate: SharedField,
    gains: RazumikhinGains,
    lambda: f64,
    q_threshold: f64,
    theta_grid: usize,
}

impl ControllerSpec {
    pub fn new(certificate: SharedField, gains: RazumikhinGains, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            certificate,
            gains,
            lambda,
            q_threshold: DEFAULT_Q_THRESHOLD,
            theta_grid: DEFAULT_THETA_GRID,
        })
    }

    pub fn with_q_threshold(mut self, q_threshold: f64) -> Result<Self> {
        if !(q_threshold > 0.0) {
            return Err(invalid("q-threshold must be positive"));
        }
        self.q_threshold = q_threshold;
        Ok(self)
    }

    pub fn with_theta_grid(mut self, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(invalid("θ-grid needs at least two points"));
        }
        self.theta_grid = points;
        Ok(self)
    }

    pub fn certificate(&self) -> &SharedField {
        &self.certificate
    }

    pub fn gains(&self) -> RazumikhinGains {
        self.gains
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn q_threshold(&self) -> f64 {
        self.q_threshold
    }

    pub fn theta_grid(&self) -> usize {
        self.theta_grid
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("λ must be positive, got {lambda}")));
    }
    Ok(())
}

/// `κ(λ, p, q)` with the default zero test on `‖q‖`.
pub fn kappa(lambda: f64, p: f64, q: &[f64]) -> Result<Vec<f64>> {
    kappa_with_threshold(lambda, p, q, DEFAULT_Q_THRESHOLD)
}

pub fn kappa_with_threshold(lambda: f64, p: f64, q: &[f64], q_threshold: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let q2 = norm_sq(q);
    if q2.sqrt() <= q_threshold {
        return Ok(vec![0.0; q.len()]);
    }
    let root = (p * p + lambda * q2 * q2).sqrt();
    // p + √(p² + λ‖q‖⁴) cancels badly for p < 0; use the conjugate form there
    let numer = if p < 0.0 { lambda * q2 * q2 / (root - p) } else { p + root };
    let scale = -numer / q2;
    Ok(q.iter().map(|qi| scale * qi).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    /// `a(φ)`.
    pub a: f64,
    /// `(L_g F(φ))ᵀ`.
    pub q: Vec<f64>,
    pub lf: f64,
    /// `F(φ(0))`.
    pub value: f64,
    /// Grid proxy of `sup_θ e^{μθ}F(φ(θ))`.
    pub weighted_sup: f64,
}

pub fn activation(
    spec: &ControllerSpec,
    dynamics: &dyn DelayDynamics,
    hist: &dyn History,
) -> Result<Activation> {
    let field = spec.certificate.as_ref();
    let lie = lie_derivatives(field, dynamics, hist)?;
    let x = hist.state(0.0)?;
    let value = field.value(&x);
    let sup = weighted_sup(hist, field, spec.gains.mu, spec.theta_grid)?;
    let a = lie.lf + spec.gains.gamma * value - spec.gains.eta * sup;
    Ok(Activation {
        a,
        q: lie.lg,
        lf: lie.lf,
        value,
        weighted_sup: sup,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: Vec<f64>,
    pub activation: Activation,
    /// `L_f F + q·u + γF(φ(0)) − η·sup`; non-positive for a valid certificate.
    pub margin: f64,
}

/// `u = κ(λ, a(φ), q(φ))`.
///
/// Fails with [`Error::CertificateViolation`] when `‖q‖` is below the
/// threshold while `a > 0`: no input can produce the required decrease.
pub fn control(
    spec: &ControllerSpec,
    dynamics: &dyn DelayDynamics,
    hist: &dyn History,
) -> Result<ControlOutput> {
    let act = activation(spec, dynamics, hist)?;
    let q_norm = norm(&act.q);
    if q_norm <= spec.q_threshold && act.a > 0.0 {
        return Err(Error::CertificateViolation {
            state: hist.state(0.0)?,
            activation: act.a,
            lg_norm: q_norm,
        });
    }
    let u = kappa_with_threshold(spec.lambda, act.a, &act.q, spec.q_threshold)?;
    let margin = act.a + dot(&act.q, &u);
    Ok(ControlOutput {
        u,
        activation: act,
        margin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScpRow {
    pub delta: f64,
    /// Largest `‖u‖` seen over histories with `‖φ‖_d < δ`.
    pub sup_u: f64,
    pub samples: usize,
    /// Histories where the certificate admitted no decrease.
    pub violations: usize,
}

/// Numerical evidence for the small control property: for each radius δ,
/// evaluates the controller on random constant and perturbed histories
/// inside the δ-ball and records the largest input magnitude.
pub fn scp_probe(
    spec: &ControllerSpec,
    dynamics: &dyn DelayDynamics,
    horizon: f64,
    deltas: &[f64],
    samples_per_delta: usize,
    seed: u64,
) -> Result<Vec<ScpRow>> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    if deltas.is_empty() {
        return Err(invalid("δ-grid must not be empty"));
    }
    let n = dynamics.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        if !(delta > 0.0) {
            return Err(invalid("δ values must be positive"));
        }
        let mut sup_u: f64 = 0.0;
        let mut violations = 0;
        for k in 0..samples_per_delta {
            // random direction, radius uniform in (0, 0.9δ)
            let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let len = norm(&dir).max(1e-12);
            let radius = 0.9 * delta * rng.gen_range(1e-3..1.0);
            dir.iter_mut().for_each(|d| *d *= radius / len);
            let window = if k % 2 == 0 {
                HistoryWindow::from_constant(&dir, horizon)?
            } else {
                let freq: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..30.0)).collect();
                let phase: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..6.3)).collect();
                let amp = 0.1 * delta * rng.gen_range(0.0..1.0);
                let center = dir.clone();
                HistoryWindow::from_fn(
                    |t| {
                        (0..n)
                            .map(|i| center[i] + amp * (freq[i] * t + phase[i]).sin())
                            .collect()
                    },
                    horizon,
                    121,
                )?
            };
            match control(spec, dynamics, &window) {
                Ok(out) => sup_u = sup_u.max(norm(&out.u)),
                Err(Error::CertificateViolation { .. }) => violations += 1,
                Err(e) => return Err(e),
            }
        }
        rows.push(ScpRow {
            delta,
            sup_u,
            samples: samples_per_delta,
            violations,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::QuadraticField;
    use crate::system::{ExampleConfig, ExampleSystem};
    use std::sync::Arc;

    fn example_spec(gamma: f64, eta: f64, mu: f64, lambda: f64) -> ControllerSpec {
        ControllerSpec::new(
            Arc::new(QuadraticField::example_lyapunov()),
            RazumikhinGains::new(gamma, eta, mu).unwrap(),
            lambda,
        )
        .unwrap()
    }

    fn example_sys() -> ExampleSystem {
        ExampleSystem::new(ExampleConfig::new(0.3).unwrap())
    }

    #[test]
    fn gains_validation() {
        assert!(RazumikhinGains::new(2.5, 2.0, 0.0).is_ok());
        assert!(RazumikhinGains::new(2.0, 2.0, 0.0).is_err());
        assert!(RazumikhinGains::new(2.0, -0.1, 0.0).is_err());
        assert!(RazumikhinGains::new(2.0, 1.0, -1.0).is_err());
        let parsed: std::result::Result<RazumikhinGains, _> =
            serde_json::from_str(r#"{"gamma": 1.0, "eta": 3.0}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa(1.0, 5.0, &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(kappa(1.0, -5.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(kappa(1.0, 0.0, &[1.0]).unwrap(), vec![-1.0]);
        // −((−3 + √41)/4)·2 to 18 digits
        let u = kappa(2.0, -3.0, &[2.0]).unwrap()[0];
        assert!((u + 1.701_562_118_716_424_3).abs() < 1e-15, "{u}");
        assert!(kappa(0.0, 1.0, &[1.0]).is_err());
        assert!(kappa(-1.0, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn kappa_vanishes_as_q_shrinks_with_negative_activation() {
        // ‖u‖ ≈ λ‖q‖³/(2|a|) for small q
        let a = -0.5;
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let q = 10f64.powi(-k);
            let u = kappa(2.0, a, &[q]).unwrap()[0].abs();
            assert!(u < prev);
            assert!(u <= 2.0 * q * q * q / (2.0 * a.abs()) * (1.0 + 1e-6));
            prev = u;
        }
        assert!(prev < 1e-30);
    }

    #[test]
    fn activation_examples() {
        let sys = example_sys();
        let spec = example_spec(2.5, 2.0, 0.0, 2.0);
        let zero = HistoryWindow::from_constant(&[0.0, 0.0], 0.3).unwrap();
        let act = activation(&spec, &sys, &zero).unwrap();
        assert_eq!((act.a, act.q.clone()), (0.0, vec![0.0]));

        let w = HistoryWindow::from_constant(&[1.0, 0.0], 0.3).unwrap();
        let act = activation(&spec, &sys, &w).unwrap();
        assert_eq!(act.value, 1.0);
        assert_eq!(act.weighted_sup, 1.0);
        assert_eq!(act.lf, -1.0);
        assert_eq!(act.a, -0.5);
        assert_eq!(act.q, vec![1.0]);

        let spec4 = example_spec(4.0, 2.0, 0.0, 2.0);
        let act = activation(&spec4, &sys, &w).unwrap();
        assert_eq!(act.a, 1.0);
    }

    #[test]
    fn control_examples() {
        let sys = example_sys();
        let spec = example_spec(2.5, 2.0, 0.0, 2.0);
        let zero = HistoryWindow::from_constant(&[0.0, 0.0], 0.3).unwrap();
        let out = control(&spec, &sys, &zero).unwrap();
        assert_eq!(out.u, vec![0.0]);

        let w = HistoryWindow::from_constant(&[1.0, 0.0], 0.3).unwrap();
        let out = control(&spec, &sys, &w).unwrap();
        assert!((out.u[0] + 1.0).abs() < 1e-15);
        assert!((out.margin + 1.5).abs() < 1e-15);

        // positive activation still gets a decreasing input when q ≠ 0
        let spec4 = example_spec(4.0, 2.0, 0.0, 2.0);
        let out = control(&spec4, &sys, &w).unwrap();
        assert!((out.margin + (1.0f64 + 2.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn zero_input_direction_with_negative_activation_gives_zero_input() {
        // on x₁ + 2x₂ = 0 the input direction of V vanishes
        let sys = example_sys();
        let spec = example_spec(2.5, 2.0, 0.0, 2.0);
        let w = HistoryWindow::from_constant(&[2.0, -1.0], 0.3).unwrap();
        let out = control(&spec, &sys, &w).unwrap();
        assert_eq!(out.activation.q, vec![0.0]);
        assert!(out.activation.a < 0.0);
        assert_eq!(out.u, vec![0.0]);
        assert_eq!(out.margin, out.activation.a);
    }

    #[test]
    fn zero_input_direction_with_positive_activation_is_reported() {
        let sys = example_sys();
        // γ large enough that a = Lf + γV − ηV > 0 on the q = 0 line
        let spec = example_spec(20.0, 0.0, 0.0, 2.0);
        let w = HistoryWindow::from_constant(&[2.0, -1.0], 0.3).unwrap();
        match control(&spec, &sys, &w) {
            Err(Error::CertificateViolation { activation, .. }) => assert!(activation > 0.0),
            other => panic!("expected a certificate violation, got {other:?}"),
        }
    }

    #[test]
    fn margin_identity_on_random_histories() {
        use rand::{Rng, SeedableRng};
        let sys = example_sys();
        let spec = example_spec(2.5, 2.0, 0.5, 2.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let c = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let f = rng.gen_range(0.5..10.0);
            let w = HistoryWindow::from_fn(
                |t| vec![c[0] + 0.3 * (f * t).sin(), c[1] - 0.2 * (f * t).cos()],
                0.3,
                61,
            )
            .unwrap();
            let out = control(&spec, &sys, &w).unwrap();
            let act = &out.activation;
            let expected = -(act.a * act.a + 2.0 * norm_sq(&act.q).powi(2)).sqrt();
            assert!((out.margin - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
            assert!(out.margin <= 1e-9);
            let value = spec.certificate().value(&w.interpolate(0.0).unwrap());
            assert_eq!(value, act.value);
        }
    }

    #[test]
    fn scp_probe_shrinks_with_radius() {
        let sys = example_sys();
        let spec = example_spec(2.5, 2.0, 0.0, 2.0);
        let rows = scp_probe(&spec, &sys, 0.3, &[1.0, 0.1, 0.01, 0.001], 200, 1).unwrap();
        assert!(rows.windows(2).all(|w| w[1].sup_u < w[0].sup_u), "{rows:?}");
        assert!(rows[3].sup_u < 1e-2 * rows[0].sup_u);
        // near the origin the feedback is Lipschitz: sup‖u‖/δ settles
        let r1 = rows[2].sup_u / rows[2].delta;
        let r2 = rows[3].sup_u / rows[3].delta;
        assert!((r1 / r2 - 1.0).abs() < 0.5, "{rows:?}");
        let zero = HistoryWindow::from_constant(&[0.0, 0.0], 0.3).unwrap();
        assert_eq!(control(&spec, &sys, &zero).unwrap().u, vec![0.0]);
        assert!(scp_probe(&spec, &sys, 0.3, &[], 10, 1).is_err());
    }
}
