//! Properties of the control law evaluated at single instants.

use adaptive_cbc::controller::{control_input, controller_rhs, gain_g, is_hurwitz, robust_eta, saturate, surface_y, ControllerParams, ControllerState, ErrorStack};
use adaptive_cbc::plant::builtin_plant;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn duffing_params() -> ControllerParams {
    ControllerParams::with_scalar_gain(1.0, 1.0, 1.0, 0.1, 2.0, 3, vec![1.0]).unwrap()
}

fn state_strategy(p: usize, n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, p * n)
}

proptest! {
    #[test]
    fn phi_rate_is_nonnegative(
        xi in state_strategy(1, 2),
        xr in state_strategy(1, 2),
        th in prop::collection::vec(-5.0..5.0f64, 3),
        phi in 0.0..10.0f64,
        sigma in -1.0..1.0f64,
    ) {
        let params = duffing_params();
        let reg = builtin_plant("duffing").unwrap().regressor().clone();
        let state = ControllerState::initial(1, phi, th);
        let out = control_input(&params, &reg, &state, &xi, &xr, &[0.2]).unwrap();
        let rates = controller_rhs(&params, &state, &reg.eval(&xi).unwrap(), &[sigma], &out).unwrap();
        prop_assert!(rates.phi >= 0.0);
        prop_assert!((rates.phi - 0.1 * out.y[0] * out.y[0]).abs() <= 1e-12 * (1.0 + rates.phi));
    }

    #[test]
    fn control_input_is_eta_minus_k_z(
        xi in state_strategy(2, 2),
        xr in state_strategy(2, 2),
        th in prop::collection::vec(-1e3..1e3f64, 18),
        acc in prop::collection::vec(-3.0..3.0f64, 2),
        top in prop::collection::vec(-3.0..3.0f64, 2),
        k in 1e-4..10.0f64,
    ) {
        let params = ControllerParams::with_scalar_gain(k, 0.5, 1.0, 1.0, 1.0, 18, vec![2.0]).unwrap();
        let reg = builtin_plant("cross_beam").unwrap().regressor().clone();
        let mut state = ControllerState::initial(2, 0.3, th);
        state.accum.clone_from(&acc);
        let out = control_input(&params, &reg, &state, &xi, &xr, &top).unwrap();
        for i in 0..2 {
            let z = xi[i] - acc[i] - top[i];
            prop_assert!((out.z_tilde[i] - z).abs() <= 1e-12 * (1.0 + z.abs()));
            let u = -k * z + out.eta[i];
            prop_assert!((out.u[i] - u).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn zero_error_gives_kappa_gain_and_zero_eta(
        xi in state_strategy(1, 2),
        th in prop::collection::vec(-5.0..5.0f64, 3),
        phi in 0.0..10.0f64,
    ) {
        let params = duffing_params();
        let reg = builtin_plant("duffing").unwrap().regressor().clone();
        let state = ControllerState::initial(1, phi, th);
        let out = control_input(&params, &reg, &state, &xi, &xi, &[0.0]).unwrap();
        prop_assert_eq!(out.g, 1.0);
        prop_assert_eq!(out.eta[0], 0.0);
        prop_assert_eq!(out.y[0], 0.0);
    }

    #[test]
    fn saturation_is_odd_bounded_and_linear_inside(v in -100.0..100.0f64, eps in 1e-3..10.0f64) {
        let s = saturate(v, eps);
        prop_assert!(s.abs() <= 1.0);
        prop_assert_eq!(saturate(-v, eps), -s);
        if v.abs() <= eps {
            prop_assert!((s - v / eps).abs() <= 1e-15 * (1.0 + (v / eps).abs()));
        } else {
            prop_assert_eq!(s, v.signum());
        }
    }

    #[test]
    fn excitation_matrix_is_psd(states in prop::collection::vec(state_strategy(2, 2), 1..30), w in 1e-4..1.0f64) {
        let reg = builtin_plant("cross_beam").unwrap().regressor().clone();
        let mut me = DMatrix::zeros(18, 18);
        for s in &states {
            let f = reg.eval(s).unwrap();
            me += f.tr_mul(&f) * w;
        }
        let lmin = SymmetricEigen::new(me.clone()).eigenvalues.min();
        prop_assert!(lmin >= -1e-10 * me.trace().max(1.0), "lambda_min {lmin}");
    }

    #[test]
    fn gain_is_at_least_kappa(
        xi in state_strategy(1, 2),
        xr in state_strategy(1, 2),
        th in prop::collection::vec(-5.0..5.0f64, 3),
        kappa in 0.0..3.0f64,
    ) {
        let reg = builtin_plant("duffing").unwrap().regressor().clone();
        let g = gain_g(&reg.eval(&xi).unwrap(), &reg.eval(&xr).unwrap(), &th, kappa).unwrap();
        prop_assert!(g >= kappa);
    }
}

#[test]
fn saturation_examples() {
    assert_eq!(saturate(0.5, 1.0), 0.5);
    assert_eq!(saturate(1.0, 1.0), 1.0);
    assert_eq!(saturate(4.0, 2.0), 1.0);
    assert_eq!(saturate(-0.1, 0.2), -0.5);
    assert_eq!(saturate(-7.0, 0.2), -1.0);
}

#[test]
fn surface_examples() {
    // second order: y = e' + l1 e
    let e = ErrorStack::from_derivatives(&[&[1.0, -2.0], &[0.5, 3.0]]).unwrap();
    assert_eq!(surface_y(&e, &[2.0]).unwrap(), vec![2.5, -1.0]);
    // third order: y = e'' + l2 e' + l1 e
    let e = ErrorStack::from_derivatives(&[&[1.0], &[2.0], &[3.0]]).unwrap();
    assert_eq!(surface_y(&e, &[4.0, 5.0]).unwrap(), vec![3.0 + 5.0 * 2.0 + 4.0 * 1.0]);
    assert!(surface_y(&e, &[1.0]).is_err());
}

#[test]
fn eta_example() {
    // eta = -l1 e' - phi y - g sat(y / eps)
    let e = ErrorStack::from_derivatives(&[&[1.0], &[0.5]]).unwrap();
    let y = surface_y(&e, &[2.0]).unwrap();
    assert_eq!(y, vec![2.5]);
    let eta = robust_eta(&e, &[2.0], &y, 0.4, 3.0, 5.0).unwrap();
    assert!((eta[0] - (-2.0 * 0.5 - 0.4 * 2.5 - 3.0 * 0.5)).abs() < 1e-15);
}

#[test]
fn gain_examples() {
    let fx = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
    let fr = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    // (F - F_r) theta = (0, 3 * 4/3) = (0, 4)
    assert!((gain_g(&fx, &fr, &[9.0, 4.0 / 3.0], 0.25).unwrap() - 4.25).abs() < 1e-15);
    assert_eq!(gain_g(&fx, &fx, &[9.0, 1.0], 0.25).unwrap(), 0.25);
    assert!(gain_g(&fx, &DMatrix::zeros(1, 2), &[1.0, 1.0], 0.0).is_err());
}

#[test]
fn parameter_validation() {
    let s = DMatrix::identity(3, 3);
    assert!(ControllerParams::new(1.0, 1.0, 1.0, 0.1, s.clone(), vec![1.0]).is_ok());
    assert!(ControllerParams::new(0.0, 1.0, 1.0, 0.1, s.clone(), vec![1.0]).is_err());
    assert!(ControllerParams::new(1.0, 1.0, 0.0, 0.1, s.clone(), vec![1.0]).is_err());
    assert!(ControllerParams::new(1.0, 1.0, 1.0, 0.1, s.clone(), vec![-1.0]).is_err());
    assert!(ControllerParams::new(1.0, 1.0, 1.0, 0.1, -s, vec![1.0]).is_err());
    assert!(is_hurwitz(&[2.0, 3.0]));
    assert!(!is_hurwitz(&[-1.0, 3.0]));
}
