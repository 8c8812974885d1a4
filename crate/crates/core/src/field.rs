//! Scalar certificate functions with analytic gradients.
//!
//! Lyapunov candidates, barrier candidates and their combination all
//! implement [`ScalarField`]. The mechanical example's functions live here
//! too: the quadratic `V`, the hazard `H` of the obstacle box and the
//! barrier `B` built from it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{norm, norm_sq};

/// Ceiling for the example hazard; `e^{−50}` is below the resolution of any
/// barrier value it is added to.
pub const HAZARD_MAX: f64 = 50.0;
/// Hazard level where the smooth clamp starts bending away from the identity.
pub const HAZARD_BLEND_START: f64 = 45.0;
/// Level set of the hazard that bounds the example's unsafe set.
pub const HAZARD_LEVEL: f64 = 4.0;

pub trait ScalarField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

pub type SharedField = Arc<dyn ScalarField>;

/// `x ↦ 0`.
#[derive(Debug, Clone)]
pub struct ZeroField {
    dim: usize,
}

impl ZeroField {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl ScalarField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// `x ↦ c·x`.
#[derive(Debug, Clone)]
pub struct LinearField {
    coeffs: Vec<f64>,
}

impl LinearField {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }
}

impl ScalarField for LinearField {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.coeffs, x)
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.coeffs.clone()
    }
}

/// `x ↦ xᵀQx` with symmetric `Q`.
#[derive(Debug, Clone)]
pub struct QuadraticField {
    q: Vec<Vec<f64>>,
}

impl QuadraticField {
    pub fn new(q: Vec<Vec<f64>>) -> Result<Self> {
        let n = q.len();
        if n == 0 {
            return Err(invalid("quadratic form needs a non-empty matrix"));
        }
        if q.iter().any(|row| row.len() != n) {
            return Err(invalid("quadratic form matrix must be square"));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (q[i][j], q[j][i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(invalid(format!(
                        "quadratic form matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { q })
    }

    /// The example's Lyapunov candidate `x₁² + x₁x₂ + x₂²`.
    pub fn example_lyapunov() -> Self {
        Self {
            q: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.q
    }
}

impl ScalarField for QuadraticField {
    fn dim(&self) -> usize {
        self.q.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.q
            .iter()
            .zip(x)
            .map(|(row, xi)| xi * crate::linalg::dot(row, x))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.q
            .iter()
            .map(|row| 2.0 * crate::linalg::dot(row, x))
            .collect()
    }
}

/// Axis-aligned open box `∏ (lowerᵢ, upperᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RegionBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("box bounds must have equal, positive length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(invalid("box needs lower < upper on every axis"));
        }
        Ok(Self { lower, upper })
    }

    /// `(−3, −1) × (0, 2)`.
    pub fn example_obstacle() -> Self {
        Self {
            lower: vec![-3.0, 0.0],
            upper: vec![-1.0, 2.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(xi, (l, u))| *l < *xi && *xi < *u)
    }

    /// Euclidean distance from `x` to the box boundary (inside or outside).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(xi, (l, u))| (xi - l).min(u - xi))
                .fold(f64::INFINITY, f64::min)
        } else {
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(xi, (l, u))| {
                    let d = (l - xi).max(xi - u).max(0.0);
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        }
    }

    /// Points on the boundary: each face gets a tensor grid with
    /// `per_edge` points per free axis, edges and corners included.
    pub fn boundary_grid(&self, per_edge: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let per_edge = per_edge.max(2);
        let mut out = Vec::new();
        for axis in 0..n {
            for side in [self.lower[axis], self.upper[axis]] {
                let free: Vec<usize> = (0..n).filter(|&i| i != axis).collect();
                let count = per_edge.pow(free.len() as u32);
                for mut k in 0..count {
                    let mut x = vec![0.0; n];
                    x[axis] = side;
                    for &i in &free {
                        let j = k % per_edge;
                        k /= per_edge;
                        x[i] = self.lower[i]
                            + (self.upper[i] - self.lower[i]) * j as f64 / (per_edge - 1) as f64;
                    }
                    out.push(x);
                }
            }
        }
        out
    }
}

/// Smooth clamp of a hazard value: identity below [`HAZARD_BLEND_START`],
/// quintic blend up to [`HAZARD_MAX`], constant afterwards. Returns the
/// clamped value and its derivative with respect to the raw value.
fn clamp_hazard(raw: f64) -> (f64, f64) {
    if raw <= HAZARD_BLEND_START {
        return (raw, 1.0);
    }
    let width = HAZARD_MAX - HAZARD_BLEND_START;
    if !raw.is_finite() || raw >= HAZARD_MAX {
        return (HAZARD_MAX, 0.0);
    }
    let s = (raw - HAZARD_BLEND_START) / width;
    // p(s) = s + 4s³ − 7s⁴ + 3s⁵: p(0)=0, p'(0)=1, p(1)=1, p'(1)=p''(1)=p''(0)=0
    let p = s + s * s * s * (4.0 + s * (-7.0 + 3.0 * s));
    let dp = (1.0 - s) * (1.0 - s) * (15.0 * s * s + 2.0 * s + 1.0);
    (HAZARD_BLEND_START + width * p, dp)
}

/// `H(x) = (1 − (x₁+2)²)⁻¹ + (1 − (x₂−1)²)⁻¹` on the obstacle box, smoothly
/// clamped at [`HAZARD_MAX`] and equal to it outside the box.
#[derive(Debug, Clone)]
pub struct HazardField {
    region: RegionBox,
}

impl Default for HazardField {
    fn default() -> Self {
        Self {
            region: RegionBox::example_obstacle(),
        }
    }
}

impl HazardField {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn region(&self) -> &RegionBox {
        &self.region
    }

    /// The unclamped formula; `None` outside the box.
    pub fn raw(&self, x: &[f64]) -> Option<f64> {
        if !self.region.contains(x) {
            return None;
        }
        let (a, b) = offsets(x);
        Some(1.0 / (1.0 - a * a) + 1.0 / (1.0 - b * b))
    }

    fn raw_gradient(x: &[f64]) -> [f64; 2] {
        let (a, b) = offsets(x);
        let da = 1.0 - a * a;
        let db = 1.0 - b * b;
        [2.0 * a / (da * da), 2.0 * b / (db * db)]
    }

    /// Clamped value and gradient in one pass.
    fn eval(&self, x: &[f64]) -> (f64, [f64; 2]) {
        match self.raw(x) {
            None => (HAZARD_MAX, [0.0, 0.0]),
            Some(raw) => {
                let (h, dh) = clamp_hazard(raw);
                if dh == 0.0 {
                    (h, [0.0, 0.0])
                } else {
                    let g = Self::raw_gradient(x);
                    (h, [dh * g[0], dh * g[1]])
                }
            }
        }
    }
}

fn offsets(x: &[f64]) -> (f64, f64) {
    (x[0] + 2.0, x[1] - 1.0)
}

impl ScalarField for HazardField {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x).1.to_vec()
    }
}

/// `B(x) = (e^{−H(x)} − e^{−4})‖x‖²` inside the obstacle box and
/// `−e^{−4}‖x‖²` elsewhere.
#[derive(Debug, Clone, Default)]
pub struct ExampleBarrier {
    hazard: HazardField,
}

impl ExampleBarrier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hazard(&self) -> &HazardField {
        &self.hazard
    }
}

impl ScalarField for ExampleBarrier {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let level = (-HAZARD_LEVEL).exp();
        let r2 = norm_sq(x);
        if self.hazard.region.contains(x) {
            let (h, _) = self.hazard.eval(x);
            ((-h).exp() - level) * r2
        } else {
            -level * r2
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let level = (-HAZARD_LEVEL).exp();
        let r2 = norm_sq(x);
        if self.hazard.region.contains(x) {
            let (h, dh) = self.hazard.eval(x);
            let e = (-h).exp();
            (0..2)
                .map(|i| -e * dh[i] * r2 + (e - level) * 2.0 * x[i])
                .collect()
        } else {
            x.iter().map(|xi| -level * 2.0 * xi).collect()
        }
    }
}

/// `W = V + ψB`.
#[derive(Debug, Clone)]
pub struct Clbrf {
    lyapunov: SharedField,
    barrier: SharedField,
    psi: f64,
}

impl Clbrf {
    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn lyapunov(&self) -> &SharedField {
        &self.lyapunov
    }

    pub fn barrier(&self) -> &SharedField {
        &self.barrier
    }
}

pub fn combine_clbrf(lyapunov: SharedField, barrier: SharedField, psi: f64) -> Result<Clbrf> {
    if lyapunov.dim() != barrier.dim() {
        return Err(invalid(format!(
            "dimension mismatch: V has {} and B has {}",
            lyapunov.dim(),
            barrier.dim()
        )));
    }
    if !(psi > 0.0 && psi.is_finite()) {
        return Err(invalid(format!("ψ must be positive, got {psi}")));
    }
    Ok(Clbrf {
        lyapunov,
        barrier,
        psi,
    })
}

impl ScalarField for Clbrf {
    fn dim(&self) -> usize {
        self.lyapunov.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.lyapunov.value(x) + self.psi * self.barrier.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.lyapunov.gradient(x);
        for (gi, bi) in g.iter_mut().zip(self.barrier.gradient(x)) {
            *gi += self.psi * bi;
        }
        g
    }
}

/// Max over components of `|∇f(x) − central difference|`.
pub fn finite_diff_check(field: &dyn ScalarField, x: &[f64], step: f64) -> f64 {
    let grad = field.gradient(x);
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let fp = field.value(&probe);
        probe[i] = x[i] - step;
        let fm = field.value(&probe);
        probe[i] = x[i];
        worst = worst.max((grad[i] - (fp - fm) / (2.0 * step)).abs());
    }
    worst
}

/// `c·vᵖ`, a class-K∞ function when `c, p > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMonomial {
    pub coeff: f64,
    pub power: f64,
}

impl KMonomial {
    pub fn new(coeff: f64, power: f64) -> Result<Self> {
        if !(coeff > 0.0 && power > 0.0) {
            return Err(invalid("class-K∞ monomial needs positive coefficient and power"));
        }
        Ok(Self { coeff, power })
    }

    pub fn quadratic(coeff: f64) -> Result<Self> {
        Self::new(coeff, 2.0)
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.coeff * v.powf(self.power)
    }
}

/// `α₁(‖x‖) ≤ V(x) ≤ α₂(‖x‖)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichBounds {
    pub lower: KMonomial,
    pub upper: KMonomial,
}

impl SandwichBounds {
    pub fn new(lower: KMonomial, upper: KMonomial) -> Result<Self> {
        if lower.power != upper.power || lower.coeff > upper.coeff {
            return Err(invalid("need α₁(v) ≤ α₂(v) for every v ≥ 0"));
        }
        Ok(Self { lower, upper })
    }

    /// `0.5v²` and `1.5v²`, the eigenvalues of the example quadratic form.
    pub fn example() -> Self {
        Self {
            lower: KMonomial {
                coeff: 0.5,
                power: 2.0,
            },
            upper: KMonomial {
                coeff: 1.5,
                power: 2.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest of `V − α₁` and `α₂ − V` over all samples.
    pub worst_slack: f64,
    /// Sample with the most negative slack, when any bound is violated.
    pub witness: Option<Vec<f64>>,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn check_sandwich(
    field: &dyn ScalarField,
    bounds: &SandwichBounds,
    states: &[Vec<f64>],
) -> Result<SandwichReport> {
    if states.is_empty() {
        return Err(invalid("sandwich check needs at least one sample"));
    }
    let mut worst = f64::INFINITY;
    let mut worst_at = None;
    let mut violations = 0;
    for x in states {
        let r = norm(x);
        let v = field.value(x);
        let slack = (v - bounds.lower.eval(r)).min(bounds.upper.eval(r) - v);
        let tol = 1e-12 * (1.0 + v.abs());
        if slack < -tol {
            violations += 1;
        }
        if slack < worst {
            worst = slack;
            worst_at = Some(x);
        }
    }
    Ok(SandwichReport {
        samples: states.len(),
        violations,
        worst_slack: worst,
        witness: (violations > 0).then(|| worst_at.cloned()).flatten(),
    })
}
