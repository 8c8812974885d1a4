//! Trajectory-level and construction-level checks of the certificates.
//!
//! Every check returns a [`VerificationReport`]: a pass flag, the worst value
//! seen, where it was seen, and the tolerances applied.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::RazumikhinGains;
use crate::delay_state::{weighted_sup, HistoryWindow, DEFAULT_THETA_GRID};
use crate::error::{invalid, Result};
use crate::field::{
    check_sandwich, HazardField, KMonomial, RegionBox, SandwichBounds, ScalarField, HAZARD_LEVEL,
};
use crate::halanay::{check_envelope, DecayCertificate};
use crate::linalg::norm;
use crate::simulator::Trajectory;

pub const DEFAULT_SAFETY_TOLERANCE: f64 = 1e-3;
/// `c` in the decrease tolerance `c·h`.
pub const DEFAULT_DECREASE_COEFF: f64 = 10.0;
/// Finer than the controller's θ-grid, so the check never sees a smaller sup.
pub const DECREASE_THETA_GRID: usize = 4 * (DEFAULT_THETA_GRID - 1) + 1;
pub const DEFAULT_SHELL_WIDTH: f64 = 1e-2;
pub const DEFAULT_SEPARATION_LEVEL: f64 = -1e-6;
pub const DEFAULT_CONVERGENCE_RADIUS: f64 = 5e-2;
pub const DEFAULT_BOUNDARY_GRID: usize = 100;
pub const DEFAULT_INTERIOR_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// `None` for construction checks, which are not tied to a time.
    pub t: Option<f64>,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    pub worst_value: f64,
    pub witness: Option<Witness>,
    pub samples: usize,
    pub tolerances: BTreeMap<String, f64>,
}

impl VerificationReport {
    fn new(check: &str, passed: bool, worst_value: f64, witness: Option<Witness>, samples: usize) -> Self {
        Self {
            check: check.to_string(),
            passed,
            worst_value,
            witness,
            samples,
            tolerances: BTreeMap::new(),
        }
    }

    fn tolerance(mut self, name: &str, value: f64) -> Self {
        self.tolerances.insert(name.to_string(), value);
        self
    }
}

/// Hazard sublevel set `{x ∈ 𝔛 : H(x) < level}`, or nothing.
#[derive(Debug, Clone)]
pub struct UnsafeSet {
    hazard: Option<HazardField>,
    level: f64,
}

impl UnsafeSet {
    pub fn example() -> Self {
        Self {
            hazard: Some(HazardField::new()),
            level: HAZARD_LEVEL,
        }
    }

    pub fn empty() -> Self {
        Self {
            hazard: None,
            level: HAZARD_LEVEL,
        }
    }

    pub fn region(&self) -> Option<&RegionBox> {
        self.hazard.as_ref().map(HazardField::region)
    }

    pub fn is_empty(&self) -> bool {
        self.hazard.is_none()
    }

    /// `level − H(x)` on the box: positive exactly inside the set. Outside
    /// the box this is `level − HAZARD_MAX`; for the empty set, `−∞`.
    pub fn margin(&self, x: &[f64]) -> f64 {
        match &self.hazard {
            Some(h) => self.level - h.value(x),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.hazard {
            Some(h) => h.region().contains(x) && self.margin(x) > 0.0,
            None => false,
        }
    }
}

/// Membership in `𝐃 = {x ∈ 𝔛 : W(x) > 0}`.
pub fn in_refined_unsafe_set(region: &RegionBox, w: &dyn ScalarField, x: &[f64]) -> bool {
    region.contains(x) && w.value(x) > 0.0
}

fn all_states(traj: &Trajectory) -> impl Iterator<Item = (f64, &[f64])> + '_ {
    // the last history sample is the first trajectory sample
    let history = traj.history.iter().filter(|(t, _)| *t < 0.0);
    history
        .map(|(t, x)| (*t, x.as_slice()))
        .chain(traj.samples.iter().map(|s| (s.t, s.x.as_slice())))
}

/// Passes iff every sample, initial history included, stays outside the
/// unsafe set by at least `tolerance` in hazard units.
pub fn safety_check(traj: &Trajectory, unsafe_set: &UnsafeSet, tolerance: f64) -> Result<VerificationReport> {
    if traj.samples.is_empty() {
        return Err(invalid("safety check needs a non-empty trajectory"));
    }
    let mut worst = f64::INFINITY;
    let mut witness = None;
    let mut count = 0;
    for (t, x) in all_states(traj) {
        count += 1;
        let clearance = -unsafe_set.margin(x);
        if clearance < worst || witness.is_none() {
            worst = clearance;
            witness = Some(Witness { t: Some(t), state: x.to_vec() });
        }
    }
    let passed = worst >= tolerance;
    Ok(VerificationReport::new("safety", passed, worst, witness, count).tolerance("clearance", tolerance))
}

/// Forward-difference check of `D⁺F ≤ −γF + η·sup_θ e^{μθ}F(x_t(θ))` along
/// the trajectory. Passes iff the largest violation is at most `coeff·h`.
pub fn decrease_check(
    traj: &Trajectory,
    field: &dyn ScalarField,
    gains: RazumikhinGains,
    coeff: f64,
) -> Result<VerificationReport> {
    let h = traj.step;
    if !(h > 0.0) {
        return Err(invalid("trajectory step must be positive"));
    }
    let mut window: HistoryWindow = traj.initial_window()?;
    let values: Vec<f64> = traj.samples.iter().map(|s| field.value(&s.x)).collect();
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    let count = traj.samples.len().saturating_sub(1);
    for (k, sample) in traj.samples.iter().enumerate() {
        if k > 0 {
            match &sample.xdot {
                Some(d) => window.push_sample_with_slope(sample.t, sample.x.clone(), d.clone())?,
                None => window.push_sample(sample.t, sample.x.clone())?,
            }
        } else if let Some(d) = &sample.xdot {
            window.set_latest_slope(d.clone())?;
        }
        if k + 1 == traj.samples.len() {
            break;
        }
        let rate = (values[k + 1] - values[k]) / h;
        let sup = weighted_sup(&window, field, gains.mu(), DECREASE_THETA_GRID)?;
        let violation = rate - (-gains.gamma() * values[k] + gains.eta() * sup);
        if violation > worst || witness.is_none() {
            worst = violation;
            witness = Some(Witness { t: Some(sample.t), state: sample.x.clone() });
        }
    }
    if count == 0 {
        worst = 0.0;
    }
    let tol = coeff * h;
    Ok(VerificationReport::new("decrease", worst <= tol, worst, witness, count)
        .tolerance("violation", tol)
        .tolerance("gamma", gains.gamma())
        .tolerance("eta", gains.eta())
        .tolerance("mu", gains.mu()))
}

/// Exponential envelope `F(x(t)) ≤ e^{−ϱt}F(ξ(0))`. A negative start is
/// checked in signed form: the field has to stay non-positive.
pub fn envelope_check(
    traj: &Trajectory,
    field: &dyn ScalarField,
    certificate: &DecayCertificate,
    tolerance: f64,
) -> Result<VerificationReport> {
    let first = traj
        .samples
        .first()
        .ok_or_else(|| invalid("envelope check needs a non-empty trajectory"))?;
    let t0 = first.t;
    let v0 = field.value(&first.x);
    let values: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .map(|s| (s.t - t0, field.value(&s.x)))
        .collect();
    if v0 < 0.0 {
        let (worst_at, worst) = values
            .iter()
            .enumerate()
            .map(|(i, (_, v))| (i, *v))
            .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        let s = &traj.samples[worst_at];
        return Ok(VerificationReport::new(
            "envelope",
            worst <= 0.0,
            worst,
            Some(Witness { t: Some(s.t), state: s.x.clone() }),
            values.len(),
        )
        .tolerance("rate", certificate.rate)
        .tolerance("sign", 0.0));
    }
    let report = check_envelope(&values, v0, certificate.rate, tolerance)?;
    let witness = report.first_violation.map(|t| {
        let s = traj
            .samples
            .iter()
            .find(|s| s.t - t0 >= t)
            .unwrap_or(first);
        Witness { t: Some(s.t), state: s.x.clone() }
    });
    Ok(VerificationReport::new("envelope", report.passed, report.max_ratio, witness, values.len())
        .tolerance("rate", certificate.rate)
        .tolerance("ratio", tolerance))
}

/// `‖x(T)‖ < radius`.
pub fn convergence_check(traj: &Trajectory, radius: f64) -> Result<VerificationReport> {
    let last = traj
        .samples
        .last()
        .ok_or_else(|| invalid("convergence check needs a non-empty trajectory"))?;
    let r = norm(&last.x);
    Ok(VerificationReport::new(
        "convergence",
        r < radius,
        r,
        Some(Witness { t: Some(last.t), state: last.x.clone() }),
        1,
    )
    .tolerance("radius", radius))
}

/// Largest `|margin|`-style decrease margin recorded by the controller.
pub fn margin_check(traj: &Trajectory, tolerance: f64) -> VerificationReport {
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    let mut count = 0;
    for s in &traj.samples {
        if let Some(m) = s.margin {
            count += 1;
            if m > worst {
                worst = m;
                witness = Some(Witness { t: Some(s.t), state: s.x.clone() });
            }
        }
    }
    if count == 0 {
        worst = 0.0;
    }
    VerificationReport::new("margin", worst <= tolerance, worst, witness, count).tolerance("margin", tolerance)
}

/// Inputs of the `W = V + ψB` construction check.
#[derive(Debug, Clone)]
pub struct ConstructionInputs<'a> {
    pub lyapunov: &'a dyn ScalarField,
    pub barrier: &'a dyn ScalarField,
    pub bounds: SandwichBounds,
    pub region: RegionBox,
    pub unsafe_set: UnsafeSet,
    /// `φ` in `B(x) ≤ −φ(‖x‖)` off the region.
    pub phi: KMonomial,
    pub psi: f64,
    pub gains_v: RazumikhinGains,
    pub gains_b: RazumikhinGains,
    pub boundary_grid: usize,
    pub interior_samples: usize,
    pub exterior_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    /// `max_{x∈∂𝔛} α₂(‖x‖)/φ(‖x‖)`
    pub psi_min: f64,
    pub psi: f64,
    pub passed: bool,
    pub items: Vec<VerificationReport>,
}

impl ConstructionReport {
    pub fn item(&self, name: &str) -> Option<&VerificationReport> {
        self.items.iter().find(|r| r.check == name)
    }
}

fn exterior_point(rng: &mut ChaCha8Rng, region: &RegionBox, reach: f64) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..region.dim()).map(|_| rng.gen_range(-reach..reach)).collect();
        if !region.contains(&x) {
            return x;
        }
    }
}

fn interior_point(rng: &mut ChaCha8Rng, region: &RegionBox) -> Vec<f64> {
    region
        .lower()
        .iter()
        .zip(region.upper())
        .map(|(l, u)| rng.gen_range(*l..*u))
        .collect()
}

/// Checks the hypotheses of the `W = V + ψB` construction and the
/// properties of the resulting `W`:
///
/// * `sandwich`: `α₁(‖x‖) ≤ V(x) ≤ α₂(‖x‖)` on random states
/// * `barrier-exterior`: `B(x) ≤ −φ(‖x‖)` off the region
/// * `psi-threshold`: `α₂ < ψφ` on the region boundary
/// * `gains`: `min{γ_v, γ_b} > max{η_v, η_b}`
/// * `unsafe-positive`: `W > 0` on samples of the unsafe set
/// * `safe-nonempty`: some state with `W < 0`
pub fn clbrf_construction_check(inputs: &ConstructionInputs<'_>) -> Result<ConstructionReport> {
    if inputs.boundary_grid < 100 {
        return Err(invalid("boundary grid needs at least 100 points per edge"));
    }
    let n = inputs.region.dim();
    if inputs.lyapunov.dim() != n || inputs.barrier.dim() != n {
        return Err(invalid("field and region dimensions differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed);
    let w = |x: &[f64]| inputs.lyapunov.value(x) + inputs.psi * inputs.barrier.value(x);
    let reach = inputs
        .region
        .lower()
        .iter()
        .chain(inputs.region.upper())
        .fold(1.0f64, |m, v| m.max(v.abs()))
        * 3.0;
    let mut items = Vec::new();

    // sandwich bounds on V
    let states: Vec<Vec<f64>> = (0..inputs.exterior_samples.max(1))
        .map(|_| (0..n).map(|_| rng.gen_range(-reach..reach)).collect())
        .collect();
    let sandwich = check_sandwich(inputs.lyapunov, &inputs.bounds, &states)?;
    items.push(VerificationReport::new(
        "sandwich",
        sandwich.passed(),
        sandwich.worst_slack,
        sandwich.witness.map(|state| Witness { t: None, state }),
        sandwich.samples,
    ));

    // B ≤ −φ off the region
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for _ in 0..inputs.exterior_samples {
        let x = exterior_point(&mut rng, &inputs.region, reach);
        let excess = inputs.barrier.value(&x) + inputs.phi.eval(norm(&x));
        if excess > worst {
            worst = excess;
            witness = Some(Witness { t: None, state: x });
        }
    }
    let tol = 1e-12;
    items.push(
        VerificationReport::new("barrier-exterior", worst <= tol, worst, witness, inputs.exterior_samples)
            .tolerance("excess", tol),
    );

    // ψ threshold on the boundary
    let boundary = inputs.region.boundary_grid(inputs.boundary_grid);
    let mut psi_min = 0.0;
    let mut ratio_at = None;
    for x in &boundary {
        let r = norm(x);
        let phi = inputs.phi.eval(r);
        if phi <= 0.0 {
            return Err(invalid("φ vanishes on the region boundary"));
        }
        let ratio = inputs.bounds.upper.eval(r) / phi;
        if ratio > psi_min || ratio_at.is_none() {
            psi_min = ratio;
            ratio_at = Some(x.clone());
        }
    }
    let psi_ok = inputs.psi > psi_min;
    items.push(VerificationReport::new(
        "psi-threshold",
        psi_ok,
        psi_min,
        ratio_at.map(|state| Witness { t: None, state }),
        boundary.len(),
    ));

    // gain condition
    let (gv, gb) = (inputs.gains_v, inputs.gains_b);
    let gap = gv.gamma().min(gb.gamma()) - gv.eta().max(gb.eta());
    items.push(VerificationReport::new("gains", gap > 0.0, gap, None, 1));

    // W > 0 on the unsafe set
    let mut worst = f64::INFINITY;
    let mut witness = None;
    let mut count = 0;
    if !inputs.unsafe_set.is_empty() {
        let mut tries = 0;
        while count < inputs.interior_samples && tries < 1000 * inputs.interior_samples.max(1) {
            tries += 1;
            let x = interior_point(&mut rng, &inputs.region);
            if !inputs.unsafe_set.contains(&x) {
                continue;
            }
            count += 1;
            let v = w(&x);
            if v < worst {
                worst = v;
                witness = Some(Witness { t: None, state: x });
            }
        }
    }
    if count == 0 {
        worst = 0.0;
    }
    items.push(VerificationReport::new("unsafe-positive", count == 0 || worst > 0.0, worst, witness, count));

    // a state with W < 0: boundary first, then random exterior states
    let mut found = boundary.iter().find(|x| w(x) < 0.0).cloned();
    let mut searched = boundary.len();
    while found.is_none() && searched < boundary.len() + inputs.exterior_samples {
        searched += 1;
        let x = exterior_point(&mut rng, &inputs.region, reach);
        if w(&x) < 0.0 {
            found = Some(x);
        }
    }
    let value = found.as_deref().map_or(f64::NAN, w);
    items.push(VerificationReport::new(
        "safe-nonempty",
        found.is_some(),
        value,
        found.map(|state| Witness { t: None, state }),
        searched,
    ));

    let passed = items.iter().all(|r| r.passed);
    Ok(ConstructionReport {
        psi_min,
        psi: inputs.psi,
        passed,
        items,
    })
}

/// Samples a shell of width `shell` just outside the boundary of the unsafe
/// set and requires `W ≤ level` there, a sampled proxy for the closure of
/// the unsafe set staying away from the region where `W > 0`.
pub fn separation_check(
    unsafe_set: &UnsafeSet,
    w: &dyn ScalarField,
    budget: usize,
    shell: f64,
    level: f64,
    seed: u64,
) -> Result<VerificationReport> {
    if budget < 1000 {
        return Err(invalid("separation check needs a budget of at least 1000 samples"));
    }
    let region = match unsafe_set.region() {
        Some(r) => r.clone(),
        None => {
            return Ok(VerificationReport::new("separation", true, f64::NEG_INFINITY, None, 0)
                .tolerance("shell", shell)
                .tolerance("level", level))
        }
    };
    let n = region.dim();
    let center: Vec<f64> = region
        .lower()
        .iter()
        .zip(region.upper())
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    if !unsafe_set.contains(&center) {
        return Err(invalid("unsafe set does not contain the box center"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    let at = |s: f64, dir: &[f64]| -> Vec<f64> { center.iter().zip(dir).map(|(c, d)| c + s * d).collect() };
    for _ in 0..budget {
        let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = norm(&dir);
        if len < 1e-6 {
            continue;
        }
        dir.iter_mut().for_each(|d| *d /= len);
        // the hazard grows along rays from the center; bisect for its level
        let mut lo = 0.0;
        let mut hi = region
            .lower()
            .iter()
            .zip(region.upper())
            .zip(&dir)
            .map(|((l, u), d)| if d.abs() < 1e-300 { f64::INFINITY } else { 0.5 * (u - l) / d.abs() })
            .fold(f64::INFINITY, f64::min);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if unsafe_set.contains(&at(mid, &dir)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = at(hi + rng.gen_range(0.0..shell), &dir);
        let v = w.value(&x);
        if v > worst {
            worst = v;
            witness = Some(Witness { t: None, state: x });
        }
    }
    Ok(VerificationReport::new("separation", worst <= level, worst, witness, budget)
        .tolerance("shell", shell)
        .tolerance("level", level))
}
