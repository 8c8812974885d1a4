//! Control-affine delay dynamics `ẋ = f(x_t) + g(x_t)·u`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::delay_state::History;
use crate::error::{invalid, Error, Result};
use crate::field::ScalarField;
use crate::linalg::dot;

/// Largest delay of the mechanical example.
pub const EXAMPLE_MAX_DELAY: f64 = 0.3;

pub trait DelayDynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Offsets `θ ≤ 0` at which the maps read the history. The integrator
    /// uses them to know how far back accuracy matters.
    fn read_points(&self) -> Vec<f64>;

    /// `f(φ)`.
    fn drift(&self, hist: &dyn History) -> Result<Vec<f64>>;

    /// `g(φ)` as `n` rows of `m` entries.
    fn input_map(&self, hist: &dyn History) -> Result<Vec<Vec<f64>>>;

    /// `f(φ) + g(φ)·u`.
    fn rhs(&self, hist: &dyn History, u: &[f64]) -> Result<Vec<f64>> {
        let mut dx = self.drift(hist)?;
        if u.is_empty() {
            return Ok(dx);
        }
        let g = self.input_map(hist)?;
        for (di, row) in dx.iter_mut().zip(&g) {
            *di += dot(row, u);
        }
        Ok(dx)
    }
}

/// `h(v) = (0.8 + 2e^{−100|v|})·tanh(10v) + v`.
pub fn friction(v: f64) -> f64 {
    (0.8 + 2.0 * (-100.0 * v.abs()).exp()) * (10.0 * v).tanh() + v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleConfig {
    /// Delay τ of the friction term, in seconds.
    pub tau: f64,
}

impl ExampleConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=EXAMPLE_MAX_DELAY).contains(&tau) {
            return Err(invalid(format!(
                "friction delay τ = {tau} outside [0, {EXAMPLE_MAX_DELAY}]"
            )));
        }
        Ok(Self { tau })
    }
}

/// Mass with delayed friction: `ẋ₁ = x₂`, `ẋ₂ = −h(x₂(t−τ)) − x₁ + u`.
#[derive(Debug, Clone)]
pub struct ExampleSystem {
    tau: f64,
}

impl ExampleSystem {
    pub fn new(cfg: ExampleConfig) -> Self {
        Self { tau: cfg.tau }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

pub fn example_system(cfg: ExampleConfig) -> ExampleSystem {
    ExampleSystem::new(cfg)
}

impl DelayDynamics for ExampleSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn read_points(&self) -> Vec<f64> {
        vec![0.0, -self.tau]
    }

    fn drift(&self, hist: &dyn History) -> Result<Vec<f64>> {
        if hist.dim() != 2 {
            return Err(invalid("example system needs a 2-dimensional history"));
        }
        if self.tau > hist.horizon() {
            return Err(Error::OutOfRange(format!(
                "delay τ = {} exceeds the window horizon {}",
                self.tau,
                hist.horizon()
            )));
        }
        let now = hist.state(0.0)?;
        let delayed = if self.tau == 0.0 {
            now[1]
        } else {
            hist.state(-self.tau)?[1]
        };
        Ok(vec![now[1], -friction(delayed) - now[0]])
    }

    fn input_map(&self, _hist: &dyn History) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![0.0], vec![1.0]])
    }
}

/// `ẋ = A·x(t) + A_d·x(t − τ) + G·u` with constant matrices.
#[derive(Debug, Clone)]
pub struct LinearDelaySystem {
    a: Vec<Vec<f64>>,
    a_delayed: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    tau: f64,
}

impl LinearDelaySystem {
    pub fn new(
        a: Vec<Vec<f64>>,
        a_delayed: Vec<Vec<f64>>,
        g: Vec<Vec<f64>>,
        tau: f64,
    ) -> Result<Self> {
        let n = a.len();
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if n == 0 || !square(&a) || !square(&a_delayed) {
            return Err(invalid("A and A_d must be non-empty n×n matrices"));
        }
        if g.len() != n {
            return Err(invalid("G must have n rows"));
        }
        let m = g[0].len();
        if g.iter().any(|r| r.len() != m) {
            return Err(invalid("G rows must have equal length"));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(invalid("delay must be non-negative"));
        }
        Ok(Self {
            a,
            a_delayed,
            g,
            tau,
        })
    }

    /// Scalar `ẋ = a·x(t) + b·x(t − τ)` without input.
    pub fn scalar(a: f64, b: f64, tau: f64) -> Result<Self> {
        Self::new(vec![vec![a]], vec![vec![b]], vec![vec![]], tau)
    }
}

impl DelayDynamics for LinearDelaySystem {
    fn state_dim(&self) -> usize {
        self.a.len()
    }

    fn input_dim(&self) -> usize {
        self.g[0].len()
    }

    fn read_points(&self) -> Vec<f64> {
        vec![0.0, -self.tau]
    }

    fn drift(&self, hist: &dyn History) -> Result<Vec<f64>> {
        if hist.dim() != self.state_dim() {
            return Err(invalid("history dimension does not match the system"));
        }
        if self.tau > hist.horizon() {
            return Err(Error::OutOfRange(format!(
                "delay τ = {} exceeds the window horizon {}",
                self.tau,
                hist.horizon()
            )));
        }
        let now = hist.state(0.0)?;
        let delayed = hist.state(-self.tau)?;
        Ok(self
            .a
            .iter()
            .zip(&self.a_delayed)
            .map(|(ra, rd)| dot(ra, &now) + dot(rd, &delayed))
            .collect())
    }

    fn input_map(&self, _hist: &dyn History) -> Result<Vec<Vec<f64>>> {
        Ok(self.g.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LieDerivatives {
    /// `∇F(φ(0))·f(φ)`
    pub lf: f64,
    /// `∇F(φ(0))ᵀ·g(φ)`, one entry per input.
    pub lg: Vec<f64>,
}

pub fn lie_derivatives(
    field: &dyn ScalarField,
    dynamics: &dyn DelayDynamics,
    hist: &dyn History,
) -> Result<LieDerivatives> {
    if field.dim() != dynamics.state_dim() || hist.dim() != dynamics.state_dim() {
        return Err(invalid(format!(
            "dimension mismatch: field {}, system {}, history {}",
            field.dim(),
            dynamics.state_dim(),
            hist.dim()
        )));
    }
    let x = hist.state(0.0)?;
    let grad = field.gradient(&x);
    let f = dynamics.drift(hist)?;
    let lf = dot(&grad, &f);
    let m = dynamics.input_dim();
    let lg = if m == 0 {
        Vec::new()
    } else {
        let g = dynamics.input_map(hist)?;
        (0..m)
            .map(|j| grad.iter().zip(&g).map(|(gi, row)| gi * row[j]).sum())
            .collect()
    };
    Ok(LieDerivatives { lf, lg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay_state::HistoryWindow;
    use crate::field::{combine_clbrf, ExampleBarrier, QuadraticField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn friction_values() {
        assert_eq!(friction(0.0), 0.0);
        // e^{−100} and 1 − tanh(10) are both far below 1e-8
        assert!((friction(1.0) - 1.8).abs() < 1e-8);
        // −(0.8 + 2e^{−1})·tanh(0.1) − 0.01 from 30-digit reference values
        let expected = -(0.8 + 0.735_758_882_342_884_7) * 0.099_667_994_624_955_82 - 0.01;
        assert!((friction(-0.01) - expected).abs() < 1e-15);
        assert!((expected + 0.163_066_008_030_578_78).abs() < 1e-15);
        assert_eq!(friction(-0.7), -friction(0.7));
    }

    #[test]
    fn example_drift() {
        let sys = ExampleSystem::new(ExampleConfig::new(0.3).unwrap());
        let w = HistoryWindow::from_constant(&[0.0, 0.0], 0.3).unwrap();
        assert_eq!(sys.drift(&w).unwrap(), vec![0.0, 0.0]);
        for tau in [0.0, 0.1, 0.3] {
            let sys = ExampleSystem::new(ExampleConfig::new(tau).unwrap());
            let w = HistoryWindow::from_constant(&[1.0, 0.0], 0.3).unwrap();
            assert_eq!(sys.drift(&w).unwrap(), vec![0.0, -1.0]);
        }
        let w = HistoryWindow::from_constant(&[0.0, 1.0], 0.3).unwrap();
        let f = sys.drift(&w).unwrap();
        assert_eq!(f[0], 1.0);
        assert!((f[1] + 1.8).abs() < 1e-8);
        assert_eq!(sys.input_map(&w).unwrap(), vec![vec![0.0], vec![1.0]]);
    }

    #[test]
    fn example_rejects_delay_beyond_window() {
        assert!(ExampleConfig::new(0.31).is_err());
        assert!(ExampleConfig::new(-0.1).is_err());
        let sys = ExampleSystem::new(ExampleConfig::new(0.3).unwrap());
        let w = HistoryWindow::from_constant(&[0.0, 1.0], 0.2).unwrap();
        assert!(matches!(sys.drift(&w), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn drift_reads_only_declared_points() {
        let sys = ExampleSystem::new(ExampleConfig::new(0.2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (c0, c1) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let bump_at = rng.gen_range(-0.28..-0.22);
            let amp = rng.gen_range(-1.0..1.0);
            let base = move |t: f64| vec![c0 + t, c1 - 2.0 * t];
            // perturbation supported away from θ ∈ {0, −0.2}
            let bumped = move |t: f64| {
                let mut x = base(t);
                let r = (t - bump_at) / 0.015;
                if r.abs() < 1.0 {
                    let w = (1.0 - r * r).powi(4);
                    x[0] += amp * w;
                    x[1] -= amp * w;
                }
                x
            };
            let w0 = HistoryWindow::from_fn(base, 0.3, 601).unwrap();
            let w1 = HistoryWindow::from_fn(bumped, 0.3, 601).unwrap();
            let f0 = sys.drift(&w0).unwrap();
            let f1 = sys.drift(&w1).unwrap();
            assert!((f0[0] - f1[0]).abs() < 1e-12 && (f0[1] - f1[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_delay_matches_memoryless_formula() {
        let sys = ExampleSystem::new(ExampleConfig::new(0.0).unwrap());
        let x = [0.4, -0.25];
        let w = HistoryWindow::from_fn(|t| vec![x[0] + 3.0 * t, x[1] + t * t], 0.3, 61).unwrap();
        let f = sys.drift(&w).unwrap();
        assert_eq!(f, vec![x[1], -friction(x[1]) - x[0]]);
    }

    #[test]
    fn lie_derivative_examples() {
        let sys = ExampleSystem::new(ExampleConfig::new(0.3).unwrap());
        let v = QuadraticField::example_lyapunov();
        let zero = HistoryWindow::from_constant(&[0.0, 0.0], 0.3).unwrap();
        let l = lie_derivatives(&v, &sys, &zero).unwrap();
        assert_eq!((l.lf, l.lg.clone()), (0.0, vec![0.0]));

        let w = HistoryWindow::from_constant(&[1.0, 0.0], 0.3).unwrap();
        let l = lie_derivatives(&v, &sys, &w).unwrap();
        assert_eq!((l.lf, l.lg), (-1.0, vec![1.0]));

        let w = HistoryWindow::from_constant(&[0.0, 1.0], 0.3).unwrap();
        let l = lie_derivatives(&v, &sys, &w).unwrap();
        assert!((l.lf - (1.0 - 2.0 * friction(1.0))).abs() < 1e-15);
        assert!((l.lf + 2.6).abs() < 1e-7);
        assert_eq!(l.lg, vec![2.0]);

        let wrong = HistoryWindow::from_constant(&[0.0], 0.3).unwrap();
        assert!(lie_derivatives(&v, &sys, &wrong).is_err());
    }

    #[test]
    fn lie_derivatives_are_linear_in_the_field() {
        let sys = ExampleSystem::new(ExampleConfig::new(0.3).unwrap());
        let v = Arc::new(QuadraticField::example_lyapunov());
        let b = Arc::new(ExampleBarrier::new());
        let w = combine_clbrf(v.clone(), b.clone(), 82.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = [rng.gen_range(-4.0..1.0), rng.gen_range(-1.0..3.0)];
            let hist = HistoryWindow::from_constant(&x, 0.3).unwrap();
            let lv = lie_derivatives(v.as_ref(), &sys, &hist).unwrap();
            let lb = lie_derivatives(b.as_ref(), &sys, &hist).unwrap();
            let lw = lie_derivatives(&w, &sys, &hist).unwrap();
            let scale = 1.0 + lw.lf.abs() + lw.lg[0].abs();
            assert!((lw.lf - (lv.lf + 82.0 * lb.lf)).abs() < 1e-12 * scale);
            assert!((lw.lg[0] - (lv.lg[0] + 82.0 * lb.lg[0])).abs() < 1e-12 * scale);
        }
    }
}
