//! Bounded state histories `φ ∈ C([−Δ, 0], ℝⁿ)` and the sup-type norms
//! evaluated over them.
//!
//! A [`HistoryWindow`] stores time-stamped samples covering at least the
//! delay horizon Δ and reconstructs the state at any offset `θ ∈ [−Δ, 0]`
//! relative to its latest sample. Samples may carry explicit derivatives
//! (the integrator supplies them); otherwise cubic Hermite slopes are taken
//! from a five-point Lagrange stencil.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::ScalarField;
use crate::linalg::norm;

/// Default number of θ-grid points (64 interior points plus both endpoints).
pub const DEFAULT_THETA_GRID: usize = 66;

/// Relative slack allowed when a query lands a hair outside `[−Δ, 0]`.
const THETA_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    Linear,
    #[default]
    CubicHermite,
}

/// Read access to a state history `φ` relative to its current time.
pub trait History {
    fn dim(&self) -> usize;

    /// Delay horizon Δ.
    fn horizon(&self) -> f64;

    /// Absolute time of `φ(0)`.
    fn current_time(&self) -> f64;

    /// Writes `φ(θ)` into `out`.
    fn state_into(&self, theta: f64, out: &mut [f64]) -> Result<()>;

    fn state(&self, theta: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.state_into(theta, &mut out)?;
        Ok(out)
    }

    /// `φ(0)`.
    fn current(&self) -> Vec<f64> {
        self.state(0.0).expect("θ = 0 is always inside the window")
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Sample {
    t: f64,
    x: Vec<f64>,
    // derivative used on the interval ending at this sample
    slope_in: Option<Vec<f64>>,
    // derivative used on the interval starting at this sample
    slope_out: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    horizon: f64,
    dim: usize,
    interpolation: Interpolation,
    samples: VecDeque<Sample>,
    evict: bool,
}

impl HistoryWindow {
    /// Constant initial function `φ(θ) ≡ x0` on `[−Δ, 0]`, ending at time 0.
    pub fn from_constant(x0: &[f64], horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if x0.is_empty() {
            return Err(invalid("state dimension must be positive"));
        }
        let zero = vec![0.0; x0.len()];
        let pieces = 16;
        let samples = (0..=pieces)
            .map(|k| Sample {
                t: -horizon + horizon * k as f64 / pieces as f64,
                x: x0.to_vec(),
                slope_in: Some(zero.clone()),
                // the slope leaving t = 0 belongs to the solution, not the
                // initial function
                slope_out: (k < pieces).then(|| zero.clone()),
            })
            .collect();
        Ok(Self {
            horizon,
            dim: x0.len(),
            interpolation: Interpolation::CubicHermite,
            samples,
            evict: true,
        })
    }

    /// Samples `init(θ)` at `points` uniformly spaced offsets of `[−Δ, 0]`.
    /// Slopes come from finite differences of the samples.
    pub fn from_fn<F>(init: F, horizon: f64, points: usize) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64>,
    {
        check_horizon(horizon)?;
        if points < 2 {
            return Err(invalid("need at least two samples to span the horizon"));
        }
        let mut window: Option<Self> = None;
        for k in 0..points {
            let t = -horizon + horizon * k as f64 / (points - 1) as f64;
            let x = init(t);
            match window.as_mut() {
                None => window = Some(Self::empty(x.len(), horizon)?.with_first(t, x)?),
                Some(w) => w.push_sample(t, x)?,
            }
        }
        Ok(window.expect("points >= 2"))
    }

    /// An empty window; the first pushed sample fixes nothing but the origin
    /// of time. Queries fail until the samples span Δ.
    pub fn empty(dim: usize, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if dim == 0 {
            return Err(invalid("state dimension must be positive"));
        }
        Ok(Self {
            horizon,
            dim,
            interpolation: Interpolation::CubicHermite,
            samples: VecDeque::new(),
            evict: true,
        })
    }

    fn with_first(mut self, t: f64, x: Vec<f64>) -> Result<Self> {
        self.push_sample(t, x)?;
        Ok(self)
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    /// Keep every sample instead of trimming to the horizon.
    pub fn without_eviction(mut self) -> Self {
        self.evict = false;
        self
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn earliest_time(&self) -> f64 {
        self.samples.front().map_or(f64::NAN, |s| s.t)
    }

    pub fn latest_time(&self) -> f64 {
        self.samples.back().map_or(f64::NAN, |s| s.t)
    }

    pub fn latest_state(&self) -> &[f64] {
        &self.samples.back().expect("window is non-empty").x
    }

    /// Iterator over `(t, x)` of the retained samples.
    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.samples.iter().map(|s| (s.t, s.x.as_slice()))
    }

    /// Derivative stored for the interval leaving the latest sample.
    pub fn latest_slope(&self) -> Option<&[f64]> {
        self.samples.back().and_then(|s| s.slope_out.as_deref())
    }

    pub fn push_sample(&mut self, t: f64, x: Vec<f64>) -> Result<()> {
        self.push(t, x, None)
    }

    /// Appends a sample whose derivative is known exactly.
    pub fn push_sample_with_slope(&mut self, t: f64, x: Vec<f64>, slope: Vec<f64>) -> Result<()> {
        if slope.len() != self.dim {
            return Err(invalid(format!(
                "slope dimension {} does not match state dimension {}",
                slope.len(),
                self.dim
            )));
        }
        self.push(t, x, Some(slope))
    }

    fn push(&mut self, t: f64, x: Vec<f64>, slope: Option<Vec<f64>>) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "sample dimension {} does not match window dimension {}",
                x.len(),
                self.dim
            )));
        }
        if !t.is_finite() {
            return Err(invalid("sample time must be finite"));
        }
        if let Some(last) = self.samples.back() {
            if t <= last.t {
                return Err(invalid(format!(
                    "sample time {t} is not after the latest time {}",
                    last.t
                )));
            }
        }
        self.samples.push_back(Sample {
            t,
            x,
            slope_in: slope.clone(),
            slope_out: slope,
        });
        if self.evict {
            self.evict_old();
        }
        Ok(())
    }

    /// Records the derivative leaving the latest sample. Also used for the
    /// interval arriving at it unless that one was set already (a breakpoint).
    pub fn set_latest_slope(&mut self, slope: Vec<f64>) -> Result<()> {
        if slope.len() != self.dim {
            return Err(invalid("slope dimension mismatch"));
        }
        let last = self
            .samples
            .back_mut()
            .ok_or_else(|| invalid("window is empty"))?;
        if last.slope_in.is_none() {
            last.slope_in = Some(slope.clone());
        }
        last.slope_out = Some(slope);
        Ok(())
    }

    /// Freezes finite-difference slopes into every sample that has none, so
    /// later samples no longer influence them.
    pub fn fill_stencil_slopes(&mut self) {
        let slopes: Vec<Option<Vec<f64>>> = (0..self.samples.len())
            .map(|i| {
                let s = &self.samples[i];
                (s.slope_in.is_none() || s.slope_out.is_none()).then(|| self.stencil_slope(i))
            })
            .collect();
        for (s, slope) in self.samples.iter_mut().zip(slopes) {
            if let Some(d) = slope {
                if s.slope_in.is_none() {
                    s.slope_in = Some(d.clone());
                }
                if s.slope_out.is_none() {
                    s.slope_out = Some(d);
                }
            }
        }
    }

    fn evict_old(&mut self) {
        let cutoff = self.latest_time() - self.horizon;
        // keep two samples before the one at or below the cutoff so the
        // slope stencil at θ = −Δ stays intact
        while self.samples.len() > 4 && self.samples[3].t <= cutoff {
            self.samples.pop_front();
        }
    }

    /// `φ(θ)` relative to the latest sample.
    pub fn interpolate(&self, theta: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.state_into(theta, &mut out)?;
        Ok(out)
    }

    /// State at absolute time `t` anywhere inside the retained samples.
    pub fn at_time_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let n = self.samples.len();
        if n == 0 {
            return Err(Error::OutOfRange("window is empty".into()));
        }
        let first = self.samples[0].t;
        let last = self.samples[n - 1].t;
        let slack = THETA_SLACK * (1.0 + self.horizon.abs() + last.abs());
        if !(t >= first - slack && t <= last + slack) {
            return Err(Error::OutOfRange(format!(
                "time {t} outside retained history [{first}, {last}]"
            )));
        }
        // index of the first sample strictly after t
        let hi = self.samples.partition_point(|s| s.t <= t);
        if hi == 0 {
            out.copy_from_slice(&self.samples[0].x);
            return Ok(());
        }
        let lo = hi - 1;
        if self.samples[lo].t == t || hi == n {
            out.copy_from_slice(&self.samples[lo].x);
            return Ok(());
        }
        let a = &self.samples[lo];
        let b = &self.samples[hi];
        let dt = b.t - a.t;
        let s = (t - a.t) / dt;
        match self.interpolation {
            Interpolation::Linear => {
                for i in 0..self.dim {
                    out[i] = a.x[i] + s * (b.x[i] - a.x[i]);
                }
            }
            Interpolation::CubicHermite => {
                let da = match &a.slope_out {
                    Some(d) => std::borrow::Cow::Borrowed(d),
                    None => std::borrow::Cow::Owned(self.stencil_slope(lo)),
                };
                let db = match &b.slope_in {
                    Some(d) => std::borrow::Cow::Borrowed(d),
                    None => std::borrow::Cow::Owned(self.stencil_slope(hi)),
                };
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                for i in 0..self.dim {
                    out[i] = h00 * a.x[i] + h10 * dt * da[i] + h01 * b.x[i] + h11 * dt * db[i];
                }
            }
        }
        Ok(())
    }

    /// Derivative at sample `i` of the Lagrange polynomial through up to five
    /// neighbouring samples.
    fn stencil_slope(&self, i: usize) -> Vec<f64> {
        let n = self.samples.len();
        let width = n.min(5);
        if width < 2 {
            return vec![0.0; self.dim];
        }
        let start = i.saturating_sub(width / 2).min(n - width);
        let idx: Vec<usize> = (start..start + width).collect();
        let ti = self.samples[i].t;
        let mut slope = vec![0.0; self.dim];
        for &j in &idx {
            let tj = self.samples[j].t;
            let weight = if j == i {
                idx.iter()
                    .filter(|&&k| k != i)
                    .map(|&k| 1.0 / (ti - self.samples[k].t))
                    .sum::<f64>()
            } else {
                let mut w = 1.0 / (tj - ti);
                for &k in idx.iter().filter(|&&k| k != i && k != j) {
                    let tk = self.samples[k].t;
                    w *= (ti - tk) / (tj - tk);
                }
                w
            };
            for (s, x) in slope.iter_mut().zip(&self.samples[j].x) {
                *s += weight * x;
            }
        }
        slope
    }

    /// View of this window extended by a provisional state at time `t` beyond
    /// the latest sample. Used for Runge–Kutta stage evaluations.
    pub fn extended<'a>(&'a self, t: f64, x: &'a [f64]) -> ExtendedHistory<'a> {
        ExtendedHistory { base: self, t, x }
    }
}

impl History for HistoryWindow {
    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn current_time(&self) -> f64 {
        self.latest_time()
    }

    fn state_into(&self, theta: f64, out: &mut [f64]) -> Result<()> {
        check_theta(theta, self.horizon)?;
        let latest = self.latest_time();
        self.at_time_into(latest + theta, out)
    }
}

/// A [`HistoryWindow`] plus one provisional state ahead of its latest sample.
///
/// Offsets that fall between the window's latest time and the provisional
/// time are filled by the quadratic matching the latest state, its recorded
/// slope (if any) and the provisional state.
#[derive(Debug, Clone, Copy)]
pub struct ExtendedHistory<'a> {
    base: &'a HistoryWindow,
    t: f64,
    x: &'a [f64],
}

impl History for ExtendedHistory<'_> {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn horizon(&self) -> f64 {
        self.base.horizon
    }

    fn current_time(&self) -> f64 {
        self.t
    }

    fn state_into(&self, theta: f64, out: &mut [f64]) -> Result<()> {
        check_theta(theta, self.base.horizon)?;
        if theta == 0.0 {
            out.copy_from_slice(self.x);
            return Ok(());
        }
        let s = self.t + theta;
        let t0 = self.base.latest_time();
        if s <= t0 {
            return self.base.at_time_into(s, out);
        }
        let span = self.t - t0;
        let r = s - t0;
        let x0 = self.base.latest_state();
        match self.base.latest_slope() {
            Some(d0) => {
                for i in 0..out.len() {
                    let c = (self.x[i] - x0[i] - d0[i] * span) / (span * span);
                    out[i] = x0[i] + d0[i] * r + c * r * r;
                }
            }
            None => {
                let w = r / span;
                for i in 0..out.len() {
                    out[i] = x0[i] + w * (self.x[i] - x0[i]);
                }
            }
        }
        Ok(())
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("delay horizon must be positive, got {horizon}")));
    }
    Ok(())
}

fn check_theta(theta: f64, horizon: f64) -> Result<()> {
    let slack = THETA_SLACK * (1.0 + horizon);
    if !(theta >= -horizon - slack && theta <= slack) {
        return Err(Error::OutOfRange(format!(
            "θ = {theta} outside [−{horizon}, 0]"
        )));
    }
    Ok(())
}

/// Uniform grid of `points` offsets over `[−Δ, 0]`, both endpoints included.
pub fn theta_grid(horizon: f64, points: usize) -> impl Iterator<Item = f64> {
    let last = points.saturating_sub(1).max(1);
    (0..points).map(move |k| {
        if k == last {
            0.0
        } else {
            -horizon + horizon * k as f64 / last as f64
        }
    })
}

/// Grid proxy for `sup_{θ∈[−Δ,0]} e^{μθ}·field(φ(θ))`.
pub fn weighted_sup<H>(hist: &H, field: &dyn ScalarField, mu: f64, grid: usize) -> Result<f64>
where
    H: History + ?Sized,
{
    if grid < 2 {
        return Err(invalid("θ-grid needs at least two points"));
    }
    let mut x = vec![0.0; hist.dim()];
    let mut best = f64::NEG_INFINITY;
    for theta in theta_grid(hist.horizon(), grid) {
        hist.state_into(theta, &mut x)?;
        let v = (mu * theta).exp() * field.value(&x);
        if v > best {
            best = v;
        }
    }
    Ok(best)
}

/// Grid proxy for `‖φ‖_d = sup_θ ‖φ(θ)‖`.
pub fn sup_norm<H>(hist: &H, grid: usize) -> Result<f64>
where
    H: History + ?Sized,
{
    if grid < 2 {
        return Err(invalid("θ-grid needs at least two points"));
    }
    let mut x = vec![0.0; hist.dim()];
    let mut best: f64 = 0.0;
    for theta in theta_grid(hist.horizon(), grid) {
        hist.state_into(theta, &mut x)?;
        best = best.max(norm(&x));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{QuadraticField, ZeroField};

    fn sincos_window(step: f64, interpolation: Interpolation) -> HistoryWindow {
        let mut w = HistoryWindow::empty(2, 1.0)
            .unwrap()
            .with_interpolation(interpolation)
            .without_eviction();
        let mut t = 0.0;
        for _ in 0..=((2.0 / step).round() as usize) {
            w.push_sample(t, vec![t.sin(), t.cos()]).unwrap();
            t += step;
        }
        w
    }

    fn max_midpoint_error(step: f64, interpolation: Interpolation) -> f64 {
        let w = sincos_window(step, interpolation);
        let mut worst: f64 = 0.0;
        let mut out = [0.0; 2];
        // stay clear of the ends where the stencil is one-sided
        let mut t = 0.5 + step / 2.0;
        while t < 1.5 {
            w.at_time_into(t, &mut out).unwrap();
            worst = worst.max((out[0] - t.sin()).abs()).max((out[1] - t.cos()).abs());
            t += step;
        }
        worst
    }

    #[test]
    fn constant_window_interpolates_to_constant() {
        let w = HistoryWindow::from_constant(&[1.0, 2.0], 0.3).unwrap();
        assert_eq!(w.interpolate(-0.15).unwrap(), vec![1.0, 2.0]);
        assert_eq!(w.interpolate(-0.3).unwrap(), vec![1.0, 2.0]);
        assert_eq!(w.interpolate(0.0).unwrap(), vec![1.0, 2.0]);
        let w = HistoryWindow::from_constant(&[-2.5, 1.5], 0.3).unwrap();
        assert_eq!(w.interpolate(-0.3).unwrap(), vec![-2.5, 1.5]);
        assert_eq!(w.interpolate(-0.123).unwrap(), vec![-2.5, 1.5]);
    }

    #[test]
    fn zero_window_has_zero_norm() {
        let w = HistoryWindow::from_constant(&[0.0, 0.0], 0.3).unwrap();
        assert_eq!(sup_norm(&w, DEFAULT_THETA_GRID).unwrap(), 0.0);
        let w = HistoryWindow::from_constant(&[3.0, 4.0], 0.3).unwrap();
        assert_eq!(sup_norm(&w, DEFAULT_THETA_GRID).unwrap(), 5.0);
    }

    #[test]
    fn rejects_bad_horizon_and_samples() {
        assert!(matches!(
            HistoryWindow::from_constant(&[1.0], 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(HistoryWindow::from_constant(&[1.0], -1.0).is_err());
        let mut w = HistoryWindow::from_constant(&[1.0, 1.0], 0.3).unwrap();
        w.push_sample(0.01, vec![1.0, 1.0]).unwrap();
        assert_eq!(w.latest_time(), 0.01);
        assert!(matches!(w.push_sample(0.01, vec![1.0, 1.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(w.push_sample(0.02, vec![1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn theta_outside_window_is_out_of_range() {
        let w = HistoryWindow::from_constant(&[1.0], 0.3).unwrap();
        assert!(matches!(w.interpolate(0.01), Err(Error::OutOfRange(_))));
        assert!(matches!(w.interpolate(-0.31), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn interpolation_exact_at_samples() {
        let w = sincos_window(0.05, Interpolation::CubicHermite);
        for (t, x) in w.samples() {
            let mut out = [0.0; 2];
            w.at_time_into(t, &mut out).unwrap();
            assert_eq!(out, [x[0], x[1]]);
        }
        assert_eq!(w.interpolate(0.0).unwrap(), w.latest_state().to_vec());
    }

    #[test]
    fn linear_reproduces_affine_history() {
        let mut w = HistoryWindow::empty(1, 0.3)
            .unwrap()
            .with_interpolation(Interpolation::Linear);
        for k in 0..=20 {
            let t = 0.05 * k as f64;
            w.push_sample(t, vec![t]).unwrap();
        }
        let latest = w.latest_time();
        let got = w.interpolate(-0.125).unwrap()[0];
        assert!((got - (latest - 0.125)).abs() < 1e-14);
        // the cubic stencil is exact on affine data too
        let w = w.with_interpolation(Interpolation::CubicHermite);
        let got = w.interpolate(-0.125).unwrap()[0];
        assert!((got - (latest - 0.125)).abs() < 1e-13);
    }

    #[test]
    fn sincos_convergence_orders() {
        // halving the step should cut the error by ~4 (linear) and ~16 (cubic)
        let lin = [0.02, 0.01].map(|h| max_midpoint_error(h, Interpolation::Linear));
        let cub = [0.02, 0.01].map(|h| max_midpoint_error(h, Interpolation::CubicHermite));
        let lin_order = (lin[0] / lin[1]).log2();
        let cub_order = (cub[0] / cub[1]).log2();
        assert!(lin_order > 1.9 && lin_order < 2.1, "linear order {lin_order}");
        assert!(cub_order > 3.8, "cubic order {cub_order}");
        // absolute sizes: h²/8 for linear, ~h⁴/384 for cubic
        assert!(lin[1] < 0.01f64.powi(2) / 8.0 * 1.01);
        assert!(cub[1] < 1e-9);
    }

    #[test]
    fn eviction_keeps_horizon_covered() {
        let mut w = HistoryWindow::from_constant(&[0.0], 0.3).unwrap();
        let mut t = 0.0;
        for _ in 0..1000 {
            t += 0.001;
            w.push_sample(t, vec![t]).unwrap();
        }
        assert!(w.earliest_time() <= w.latest_time() - 0.3);
        assert!(w.len() < 320, "window retained {} samples", w.len());
        let x = w.interpolate(-0.3).unwrap()[0];
        assert!((x - (t - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn weighted_sup_constant_cases() {
        let v = QuadraticField::new(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let w = HistoryWindow::from_constant(&[1.0, 1.0], 0.3).unwrap();
        assert_eq!(weighted_sup(&w, &v, 0.0, DEFAULT_THETA_GRID).unwrap(), 3.0);
        // e^{μθ} ≤ 1 so the maximum sits at θ = 0
        assert_eq!(weighted_sup(&w, &v, 1.5, DEFAULT_THETA_GRID).unwrap(), 3.0);
        let zero = ZeroField::new(2);
        assert_eq!(weighted_sup(&w, &zero, 1.0, DEFAULT_THETA_GRID).unwrap(), 0.0);
    }

    #[test]
    fn weighted_sup_of_growing_past_matches_dense_oracle() {
        // history x(θ) = 1 − θ, field = identity on ℝ¹, μ = 1, Δ = 0.3;
        // e^{θ}(1 − θ) has derivative −θe^{θ} ≥ 0 on [−Δ, 0], max 1 at θ = 0.
        // Dense 10⁵-point grid of the closed form gives 1.0 exactly.
        let dense = (0..100_000)
            .map(|k| -0.3 + 0.3 * k as f64 / 99_999.0)
            .map(|th: f64| th.exp() * (1.0 - th))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((dense - 1.0).abs() < 1e-15);

        let w = HistoryWindow::from_fn(|th| vec![1.0 - th], 0.3, 31).unwrap();
        let id = crate::field::LinearField::new(vec![1.0]);
        let got = weighted_sup(&w, &id, 1.0, DEFAULT_THETA_GRID).unwrap();
        assert!((got - dense).abs() < 1e-12, "{got} vs {dense}");
        // a weaker weight moves the maximum of e^{0.2θ}(1 − θ) to θ = −Δ
        let dense2 = (0..100_000)
            .map(|k| -0.3 + 0.3 * k as f64 / 99_999.0)
            .map(|th: f64| (0.2 * th).exp() * (1.0 - th))
            .fold(f64::NEG_INFINITY, f64::max);
        let got2 = weighted_sup(&w, &id, 0.2, DEFAULT_THETA_GRID).unwrap();
        assert!((got2 - dense2).abs() < 1e-6, "{got2} vs {dense2}");
    }

    #[test]
    fn sup_norm_of_sinusoid_matches_amplitude() {
        // x(t) = 2 (cos 10t, sin 10t) has constant norm 2; a scalar
        // 3 sin(20t) over a window longer than a period peaks at 3.
        let w = HistoryWindow::from_fn(|t| vec![3.0 * (20.0 * t).sin()], 0.5, 2001).unwrap();
        let s = sup_norm(&w, 4001).unwrap();
        assert!((s - 3.0).abs() < 3.0 * (20.0f64 * 0.5 / 4000.0).powi(2), "{s}");
    }

    #[test]
    fn extended_view_reads_provisional_state() {
        let mut w = HistoryWindow::from_constant(&[1.0], 0.3).unwrap();
        w.set_latest_slope(vec![-1.0]).unwrap();
        let x1 = [1.0 - 0.01];
        let ext = w.extended(0.01, &x1);
        assert_eq!(ext.state(0.0).unwrap(), vec![0.99]);
        // affine data with matching slope is reproduced exactly
        assert!((ext.state(-0.005).unwrap()[0] - 0.995).abs() < 1e-15);
        assert_eq!(ext.state(-0.3).unwrap(), vec![1.0]);
    }
}
