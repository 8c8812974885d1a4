use std::sync::Arc;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use proptest::prelude::*;

use rzk_core::controller::{kappa, ControllerSpec, RazumikhinGains};
use rzk_core::delay_state::{weighted_sup, History, HistoryWindow, Interpolation};
use rzk_core::field::{QuadraticField, SandwichBounds, ScalarField, SharedField};
use rzk_core::halanay::{decay_rate, gain_function, RootVariant};
use rzk_core::simulator::{batch_integrate, integrate, IntegrationSettings};
use rzk_core::system::{ExampleConfig, ExampleSystem, LinearDelaySystem};

#[test]
fn example_sandwich_constants_are_the_eigenvalues() {
    let q = QuadraticField::example_lyapunov();
    let m = q.matrix();
    let eig = SymmetricEigen::new(Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]));
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let bounds = SandwichBounds::example();
    assert!((bounds.lower.coeff - lo).abs() < 1e-14);
    assert!((bounds.upper.coeff - hi).abs() < 1e-14);
}

#[test]
fn delay_free_linear_system_matches_matrix_exponential() {
    // τ = 0: ẋ = (A + A_d)x, so x(T) = exp(T(A + A_d))x0
    let a = vec![vec![0.0, 1.0], vec![-2.0, -0.3]];
    let ad = vec![vec![0.0, 0.0], vec![0.5, -0.4]];
    let sys = LinearDelaySystem::new(a.clone(), ad.clone(), vec![vec![], vec![]], 0.0).unwrap();
    let x0 = [1.0, -0.5];
    let init = HistoryWindow::from_constant(&x0, 0.3).unwrap();
    let traj = integrate(&sys, None, &init, &IntegrationSettings::new(1e-3, 2.0).unwrap()).unwrap();
    let m = Matrix2::new(
        a[0][0] + ad[0][0],
        a[0][1] + ad[0][1],
        a[1][0] + ad[1][0],
        a[1][1] + ad[1][1],
    );
    let exact = (m * 2.0).exp() * Vector2::new(x0[0], x0[1]);
    let got = traj.final_state().unwrap();
    assert!((got[0] - exact[0]).abs() < 1e-10 && (got[1] - exact[1]).abs() < 1e-10, "{got:?} vs {exact}");
}

#[test]
fn batch_of_nothing_is_nothing() {
    let sys = ExampleSystem::new(ExampleConfig::new(0.3).unwrap());
    let out = batch_integrate(&sys, None, &[], &IntegrationSettings::new(1e-3, 1.0).unwrap());
    assert!(out.is_empty());
}

#[test]
fn identical_closed_loop_runs_are_bit_identical() {
    let sys = ExampleSystem::new(ExampleConfig::new(0.3).unwrap());
    let v: SharedField = Arc::new(QuadraticField::example_lyapunov());
    let spec = ControllerSpec::new(v, RazumikhinGains::new(2.5, 2.0, 0.0).unwrap(), 2.0).unwrap();
    let xi = HistoryWindow::from_constant(&[-4.0, 1.0], 0.3).unwrap();
    let settings = IntegrationSettings::new(1e-3, 2.0).unwrap();
    let out = batch_integrate(&sys, Some(&spec), &[xi.clone(), xi], &settings);
    let (a, b) = (out[0].as_ref().unwrap(), out[1].as_ref().unwrap());
    assert_eq!(a.samples.len(), b.samples.len());
    for (p, q) in a.samples.iter().zip(&b.samples) {
        assert!(p.x.iter().zip(&q.x).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_eq!(p.u[0].to_bits(), q.u[0].to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn root_brackets_and_orders(gamma in 0.5f64..10.0, frac in 0.01f64..0.99, delay in 0.01f64..2.0) {
        let eta = frac * gamma;
        let proof = decay_rate(gamma, eta, delay, RootVariant::Proof).unwrap();
        let stmt = decay_rate(gamma, eta, delay, RootVariant::Statement).unwrap();
        prop_assert!(proof > 0.0 && proof < gamma);
        prop_assert!(stmt > 0.0 && stmt < proof);
        for (v, r) in [(RootVariant::Proof, proof), (RootVariant::Statement, stmt)] {
            prop_assert!(gain_function(v, r - 1e-9, gamma, eta, delay) < 0.0);
            prop_assert!(gain_function(v, r + 1e-9, gamma, eta, delay) > 0.0);
        }
    }

    #[test]
    fn universal_formula_margin(p in -50.0f64..50.0, q0 in -5.0f64..5.0, q1 in -5.0f64..5.0, lambda in 0.1f64..10.0) {
        let q = [q0, q1];
        let q2 = q0 * q0 + q1 * q1;
        prop_assume!(q2.sqrt() > 1e-6);
        let u = kappa(lambda, p, &q).unwrap();
        let margin = p + q0 * u[0] + q1 * u[1];
        let expected = -(p * p + lambda * q2 * q2).sqrt();
        prop_assert!((margin - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn hermite_reproduces_cubics(c in prop::array::uniform4(-3.0f64..3.0), theta in -0.3f64..0.0) {
        let f = |t: f64| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        let df = |t: f64| c[1] + t * (2.0 * c[2] + t * 3.0 * c[3]);
        let mut w = HistoryWindow::empty(1, 0.3).unwrap();
        for k in 0..=6 {
            let t = -0.3 + 0.05 * k as f64;
            w.push_sample_with_slope(t, vec![f(t)], vec![df(t)]).unwrap();
        }
        let w = w.with_interpolation(Interpolation::CubicHermite);
        let got = w.state(theta).unwrap()[0];
        prop_assert!((got - f(theta)).abs() < 1e-12);
    }

    #[test]
    fn weighted_sup_bounds_current_value(a in -2.0f64..2.0, b in -2.0f64..2.0, freq in 0.5f64..20.0, mu in 0.0f64..3.0) {
        let w = HistoryWindow::from_fn(|t| vec![a + (freq * t).sin(), b * (freq * t).cos()], 0.3, 61).unwrap();
        let v = QuadraticField::example_lyapunov();
        let sup = weighted_sup(&w, &v, mu, 66).unwrap();
        prop_assert!(sup >= v.value(&w.current()) - 1e-15);
        let unweighted = weighted_sup(&w, &v, 0.0, 66).unwrap();
        prop_assert!(sup <= unweighted + 1e-15);
    }
}
