//! Exponential decay certificates for the delayed-sup decrease inequality
//!
//! ```text
//! D⁺v(t) ≤ −γ·v(t) + η·sup_{θ∈[−Δ,0]} e^{μθ}·v(t+θ),   γ > η > 0
//! ```
//!
//! A solution satisfies `v(t) ≤ e^{−ϱt}·v(0)` for every `ϱ ∈ (0, ϱ̄)` where
//! `ϱ̄` is the positive root of a transcendental gain equation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::delay_state::{weighted_sup, History, HistoryWindow, DEFAULT_THETA_GRID};
use crate::error::{invalid, Result};
use crate::field::LinearField;
use crate::simulator::{integrate, IntegrationSettings};
use crate::system::DelayDynamics;

pub const ROOT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_RATE_FACTOR: f64 = 0.9;
pub const DEFAULT_ENVELOPE_TOLERANCE: f64 = 1e-6;

/// Which gain equation defines the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootVariant {
    /// `Γ(ϱ) = 2ϱ − γ + ηe^{Δϱ}`
    Statement,
    /// `Γ(ϱ) = ϱ − γ + ηe^{Δϱ}`
    #[default]
    Proof,
}

impl RootVariant {
    fn slope(self) -> f64 {
        match self {
            RootVariant::Statement => 2.0,
            RootVariant::Proof => 1.0,
        }
    }
}

impl std::str::FromStr for RootVariant {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proof" => Ok(Self::Proof),
            "statement" => Ok(Self::Statement),
            other => Err(invalid(format!("unknown root variant '{other}'"))),
        }
    }
}

/// The gain function `Γ` of the chosen variant.
pub fn gain_function(variant: RootVariant, rho: f64, gamma: f64, eta: f64, delay: f64) -> f64 {
    variant.slope() * rho - gamma + eta * (delay * rho).exp()
}

fn check_hypothesis(gamma: f64, eta: f64, delay: f64) -> Result<()> {
    if !(gamma > eta && eta > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("need γ > η > 0, got γ = {gamma}, η = {eta}")));
    }
    if !(delay > 0.0 && delay.is_finite()) {
        return Err(invalid(format!("delay horizon must be positive, got {delay}")));
    }
    Ok(())
}

/// Unique positive root `ϱ̄` of `Γ`, by bisection on `[0, γ]`.
///
/// `Γ(0) = η − γ < 0`, `Γ(γ) > 0` and `Γ' > 0`, so the bracket always holds.
pub fn decay_rate(gamma: f64, eta: f64, delay: f64, variant: RootVariant) -> Result<f64> {
    check_hypothesis(gamma, eta, delay)?;
    let gf = |rho| gain_function(variant, rho, gamma, eta, delay);
    let (mut lo, mut hi) = (0.0, gamma);
    // bisect well below the reported tolerance
    while hi - lo > ROOT_TOLERANCE * 1e-3 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gf(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub gamma: f64,
    pub eta: f64,
    pub mu: f64,
    pub delay: f64,
    pub variant: RootVariant,
    /// `ϱ̄`
    pub root: f64,
    /// Chosen rate `ϱ ∈ (0, ϱ̄)`.
    pub rate: f64,
}

impl DecayCertificate {
    /// Certificate with `ϱ = factor·ϱ̄`, `factor ∈ (0, 1)`.
    pub fn new(
        gamma: f64,
        eta: f64,
        mu: f64,
        delay: f64,
        variant: RootVariant,
        factor: f64,
    ) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(invalid(format!("rate factor must lie in (0, 1), got {factor}")));
        }
        if mu < 0.0 {
            return Err(invalid("μ must be non-negative"));
        }
        let root = decay_rate(gamma, eta, delay, variant)?;
        Ok(Self {
            gamma,
            eta,
            mu,
            delay,
            variant,
            root,
            rate: factor * root,
        })
    }

    /// `e^{−ϱt}·v0`
    pub fn envelope(&self, v0: f64, t: f64) -> f64 {
        (-self.rate * t).exp() * v0
    }
}

/// Worst-case comparison dynamics `v̇ = −γv + η·sup_θ e^{μθ}v(t+θ)`.
#[derive(Debug, Clone)]
struct ComparisonSystem {
    gamma: f64,
    eta: f64,
    mu: f64,
    delay: f64,
    identity: LinearField,
}

impl DelayDynamics for ComparisonSystem {
    fn state_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        0
    }

    fn read_points(&self) -> Vec<f64> {
        vec![0.0, -self.delay]
    }

    fn drift(&self, hist: &dyn History) -> Result<Vec<f64>> {
        let v = hist.state(0.0)?[0];
        let sup = weighted_sup(hist, &self.identity, self.mu, DEFAULT_THETA_GRID)?;
        Ok(vec![-self.gamma * v + self.eta * sup])
    }

    fn input_map(&self, _hist: &dyn History) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![]])
    }
}

/// Integrates the comparison system from `initial` (a scalar history on
/// `[−Δ, 0]`) over `[0, duration]` and returns the `(t, v)` samples.
pub fn scalar_comparison_sim(
    gamma: f64,
    eta: f64,
    mu: f64,
    initial: &HistoryWindow,
    duration: f64,
    step: f64,
) -> Result<Vec<(f64, f64)>> {
    let delay = initial.horizon();
    if initial.dim() != 1 {
        return Err(invalid("comparison system is scalar"));
    }
    if !(gamma > eta && eta >= 0.0) || mu < 0.0 {
        return Err(invalid("need γ > η ≥ 0 and μ ≥ 0"));
    }
    if step > delay {
        return Err(invalid(format!("step {step} exceeds the delay horizon {delay}")));
    }
    if initial.samples().any(|(_, x)| x[0] < 0.0) {
        return Err(invalid("initial history must be non-negative"));
    }
    let system = ComparisonSystem {
        gamma,
        eta,
        mu,
        delay,
        identity: LinearField::new(vec![1.0]),
    };
    let settings = IntegrationSettings::new(step, duration)?.allow_step_up_to_horizon();
    let traj = integrate(&system, None, initial, &settings)?;
    Ok(traj.samples.into_iter().map(|s| (s.t, s.x[0])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// `max_t v(t) / (v0·e^{−ϱt})`
    pub max_ratio: f64,
    pub first_violation: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `v(t) ≤ e^{−ϱt}·v0` on `(t, v)` samples with relative tolerance.
/// For `v0 = 0` the envelope is zero and any positive sample violates it.
pub fn check_envelope(samples: &[(f64, f64)], v0: f64, rate: f64, tolerance: f64) -> Result<EnvelopeReport> {
    if samples.is_empty() {
        return Err(invalid("envelope check needs samples"));
    }
    if samples.iter().any(|(t, _)| *t < 0.0) {
        return Err(invalid("sample times must be non-negative"));
    }
    if v0 < 0.0 {
        return Err(invalid("ratio envelope needs v0 ≥ 0"));
    }
    let mut max_ratio = f64::NEG_INFINITY;
    let mut first_violation = None;
    for &(t, v) in samples {
        let bound = v0 * (-rate * t).exp();
        let ratio = if bound > 0.0 {
            v / bound
        } else if v <= 0.0 {
            // 0 ≤ 0: on the envelope
            if v == 0.0 { 1.0 } else { 0.0 }
        } else {
            f64::INFINITY
        };
        if ratio > max_ratio {
            max_ratio = ratio;
        }
        if ratio > 1.0 + tolerance && first_violation.is_none() {
            first_violation = Some(t);
        }
    }
    Ok(EnvelopeReport {
        max_ratio,
        first_violation,
        tolerance,
        passed: first_violation.is_none(),
    })
}

/// Constant scalar history `v ≡ value` on `[−Δ, 0]`.
pub fn constant_scalar_history(value: f64, delay: f64) -> Result<HistoryWindow> {
    HistoryWindow::from_constant(&[value], delay)
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<Arc<ComparisonSystem>>();
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Root by scanning a uniform 10⁶-point grid for the sign change and
    /// interpolating linearly inside the bracketing cell.
    fn grid_root(k: f64, gamma: f64, eta: f64, delay: f64) -> f64 {
        let g = |r: f64| k * r - gamma + eta * (delay * r).exp();
        let n = 1_000_000;
        let dx = gamma / n as f64;
        let mut prev = g(0.0);
        for i in 1..=n {
            let r = i as f64 * dx;
            let cur = g(r);
            if prev < 0.0 && cur >= 0.0 {
                return r - dx * cur / (cur - prev);
            }
            prev = cur;
        }
        panic!("no sign change");
    }

    #[test]
    fn example_roots_match_grid_oracle() {
        let proof = decay_rate(2.5, 2.0, 0.3, RootVariant::Proof).unwrap();
        let stmt = decay_rate(2.5, 2.0, 0.3, RootVariant::Statement).unwrap();
        assert!((proof - grid_root(1.0, 2.5, 2.0, 0.3)).abs() < 1e-9);
        assert!((stmt - grid_root(2.0, 2.5, 2.0, 0.3)).abs() < 1e-9);
        // 30-digit bisection reference values
        assert!((proof - 0.307_030_805_409_419_1).abs() < 1e-10);
        assert!((stmt - 0.191_020_145_221_365_9).abs() < 1e-10);
        assert!((proof - 0.3071).abs() < 1e-4 && (stmt - 0.191).abs() < 1e-3);
    }

    #[test]
    fn root_is_bracketed() {
        for variant in [RootVariant::Proof, RootVariant::Statement] {
            let r = decay_rate(2.5, 2.0, 0.3, variant).unwrap();
            let gf = |x| gain_function(variant, x, 2.5, 2.0, 0.3);
            assert!(gf(r).abs() < 1e-9);
            assert!(gf(r - 1e-6) < 0.0 && gf(r + 1e-6) > 0.0);
        }
    }

    #[test]
    fn vanishing_eta_gives_gamma() {
        let r = decay_rate(2.5, 1e-9, 0.3, RootVariant::Proof).unwrap();
        assert!((r - 2.5).abs() < 1e-6);
    }

    #[test]
    fn rejects_hypothesis_violations() {
        assert!(decay_rate(2.5, 2.5, 0.3, RootVariant::Proof).is_err());
        assert!(decay_rate(2.0, 2.5, 0.3, RootVariant::Proof).is_err());
        assert!(decay_rate(2.5, 0.0, 0.3, RootVariant::Proof).is_err());
        assert!(decay_rate(2.5, 2.0, 0.0, RootVariant::Proof).is_err());
        assert!(DecayCertificate::new(2.5, 2.0, 0.0, 0.3, RootVariant::Proof, 1.0).is_err());
    }

    #[test]
    fn root_is_monotone_in_the_gains() {
        let base = |g, e, d| decay_rate(g, e, d, RootVariant::Proof).unwrap();
        for g in [1.5, 2.5, 4.0] {
            for e in [0.2, 0.7, 1.2] {
                for d in [0.1, 0.3, 1.0] {
                    let r = base(g, e, d);
                    assert!(base(g + 0.5, e, d) > r);
                    assert!(base(g, e + 0.1, d) < r);
                    assert!(base(g, e, d + 0.1) < r);
                }
            }
        }
    }

    #[test]
    fn comparison_from_zero_stays_zero() {
        let init = constant_scalar_history(0.0, 0.3).unwrap();
        let v = scalar_comparison_sim(2.5, 2.0, 0.0, &init, 2.0, 1e-2).unwrap();
        assert!(v.iter().all(|(_, x)| *x == 0.0));
    }

    #[test]
    fn comparison_without_delay_term_is_exponential() {
        let init = constant_scalar_history(1.0, 0.3).unwrap();
        let v = scalar_comparison_sim(2.5, 0.0, 0.0, &init, 1.0, 1e-3).unwrap();
        let (t, last) = *v.last().unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!((last - (-2.5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn comparison_stays_under_envelope_for_both_variants() {
        let init = constant_scalar_history(1.0, 0.3).unwrap();
        let v = scalar_comparison_sim(2.5, 2.0, 0.0, &init, 10.0, 1e-3).unwrap();
        assert!(v.iter().all(|(_, x)| *x >= 0.0));
        for variant in [RootVariant::Proof, RootVariant::Statement] {
            let cert = DecayCertificate::new(2.5, 2.0, 0.0, 0.3, variant, 0.9).unwrap();
            let report = check_envelope(&v, 1.0, cert.rate, DEFAULT_ENVELOPE_TOLERANCE).unwrap();
            assert!(report.passed, "{variant:?}: {report:?}");
            assert!((report.max_ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn comparison_rejects_bad_inputs() {
        let init = constant_scalar_history(1.0, 0.3).unwrap();
        assert!(scalar_comparison_sim(2.5, 2.0, 0.0, &init, 1.0, 0.5).is_err());
        let neg = constant_scalar_history(-1.0, 0.3).unwrap();
        assert!(scalar_comparison_sim(2.5, 2.0, 0.0, &neg, 1.0, 0.01).is_err());
        // steps between Δ/4 and Δ are fine here
        assert!(scalar_comparison_sim(2.5, 2.0, 0.0, &init, 1.0, 0.2).is_ok());
    }

    #[test]
    fn envelope_examples() {
        let rate = 0.3;
        let exact: Vec<(f64, f64)> = (0..100)
            .map(|k| {
                let t = 0.05 * k as f64;
                (t, 2.0 * (-rate * t).exp())
            })
            .collect();
        let r = check_envelope(&exact, 2.0, rate, 1e-6).unwrap();
        assert!(r.passed && (r.max_ratio - 1.0).abs() < 1e-12);

        let slow: Vec<(f64, f64)> = exact
            .iter()
            .map(|&(t, _)| (t, 2.0 * (-0.5 * rate * t).exp()))
            .collect();
        let r = check_envelope(&slow, 2.0, rate, 1e-6).unwrap();
        assert!(!r.passed);
        assert_eq!(r.first_violation, Some(0.05));

        let zeros = vec![(0.0, 0.0), (1.0, 0.0)];
        assert!(check_envelope(&zeros, 0.0, rate, 1e-6).unwrap().passed);
        assert!(check_envelope(&[], 1.0, rate, 1e-6).is_err());
    }
}
