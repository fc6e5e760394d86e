//! Harmonic balance, Floquet stability, branch continuation and the
//! control-based continuation zero-problem.

mod common;

use std::f64::consts::PI;

use adaptive_cbc::continuation::{
    cbc_solve, continue_branch, floquet_multipliers, hb_residual, hb_solve, monodromy, quadrature_points, shooting_solve, BranchOptions, CbcOptions, EventKind, NewtonOptions,
};
use adaptive_cbc::plant::{builtin_plant, Excitation, PlantModel};
use adaptive_cbc::reference::{builtin_signal, FourierChannel, FourierSignal, ReferenceTrajectory};
use adaptive_cbc::scenario::Scenario;
use common::{max_abs_diff, resolved, scenario};
use nalgebra::{Complex, Matrix2};

fn duffing() -> PlantModel {
    builtin_plant("duffing").unwrap()
}

fn duffing_forcing(omega: f64) -> Excitation {
    Excitation::cosine(omega, vec![0.15])
}

#[test]
fn quadrature_grid_resolves_cubic_terms() {
    for h in [1, 5, 7, 9] {
        assert!(quadrature_points(h) > 3 * h);
    }
}

#[test]
fn linear_plant_converges_in_two_newton_steps() {
    let (c, k, a, w) = (-0.1, 4.0, 0.15, 2.515);
    let plant = duffing().with_theta(vec![c, k, 0.0]).unwrap();
    let opts = NewtonOptions {
        max_iter: 2,
        ..NewtonOptions::default()
    };
    let orbit = hb_solve(&plant, &duffing_forcing(w), &FourierSignal::zero(w, 1), w, 5, opts).unwrap();
    let det = (k + w * w).powi(2) + (c * w).powi(2);
    let p = -a * (k + w * w) / det;
    let q = -a * c * w / det;
    let coeffs = orbit.coefficients();
    // [a0, a1..a5, b1..b5]
    let mut expect = vec![0.0; 11];
    expect[1] = p;
    expect[6] = q;
    assert!(max_abs_diff(&coeffs, &expect) < 1e-12, "{coeffs:?}");
}

#[test]
fn residual_vanishes_on_an_equilibrium() {
    let signal = FourierSignal::new(2.515, vec![FourierChannel::constant(2f64.sqrt())]);
    let r = hb_residual(&duffing(), &Excitation::zero(1), &signal, 2.515, 5).unwrap();
    assert!(r.iter().all(|v| v.abs() < 1e-13), "{r:?}");
}

#[test]
fn equilibrium_multipliers_are_exponentials_of_the_eigenvalues() {
    let w = 2.515;
    let t = 2.0 * PI / w;
    let x = 2f64.sqrt();
    let signal = FourierSignal::new(w, vec![FourierChannel::constant(x)]);
    // xi = (v, x): v' = -0.1 v + (4 - 6 x^2) x
    let jac = Matrix2::new(-0.1, 4.0 - 6.0 * x * x, 1.0, 0.0);
    let mut expect: Vec<Complex<f64>> = jac.complex_eigenvalues().iter().map(|l| (l * t).exp()).collect();
    let mut got = floquet_multipliers(&duffing(), &signal, 4000);
    let key = |z: &Complex<f64>| (z.re, z.im);
    expect.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
    got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
    for (g, e) in got.iter().zip(&expect) {
        // RK4 with 4000 steps per period
        assert!((g - e).norm() < 1e-7, "{g} vs {e}");
    }
}

#[test]
fn monodromy_satisfies_liouville() {
    let orbit = hb_solve(&duffing(), &duffing_forcing(2.515), &builtin_signal("duffing").unwrap(), 2.515, 7, NewtonOptions::default()).unwrap();
    let (m, trace_integral) = monodromy(&duffing(), &orbit.fourier, 2000);
    let t = 2.0 * PI / 2.515;
    // the trace of the state Jacobian is the damping coefficient
    assert!((trace_integral - (-0.1 * t)).abs() < 1e-10);
    assert!((m.determinant() - trace_integral.exp()).abs() < 1e-9 * trace_integral.exp());

    for name in ["cross_beam", "cantilever"] {
        let r = resolved(name);
        let orbit = r.orbit.unwrap();
        let (m, tr) = monodromy(&r.sim.plant, &orbit.fourier, 4000);
        let det = m.determinant();
        assert!((det - tr.exp()).abs() < 1e-6 * tr.exp(), "{name}: det {det} vs {}", tr.exp());
    }
}

#[test]
fn harmonic_balance_agrees_with_shooting() {
    let cases = [("duffing_noninvasive", 2), ("cross_beam", 2), ("cantilever", 2)];
    for (name, order) in cases {
        let r = resolved(name);
        let orbit = r.orbit.expect("refined reference");
        let h = orbit.harmonics();
        let guess = ReferenceTrajectory::new(orbit.fourier.clone(), order).eval(0.0);
        let shot = shooting_solve(&r.sim.plant, &r.sim.excitation, &guess, 8000, NewtonOptions::default()).unwrap();
        let d = max_abs_diff(&shot.coefficients(order, r.sim.plant.dof(), h), &orbit.coefficients());
        assert!(d <= 1e-6, "{name}: HB and shooting differ by {d:e}");
        assert!(orbit.residual_norm <= 1e-10, "{name}: residual {:e}", orbit.residual_norm);
        assert!(!orbit.stable, "{name}: tabulated orbit should be unstable");
    }
}

#[test]
fn tabulated_references_refine_nearby() {
    // the tabulated series are approximations; allow 5% of the leading
    // coefficient
    for name in ["cross_beam", "cantilever"] {
        let r = resolved(name);
        let orbit = r.orbit.unwrap();
        let tabulated = builtin_signal(name).unwrap().to_coefficients(orbit.harmonics());
        let tol = 5e-2 * tabulated.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = max_abs_diff(&orbit.coefficients(), &tabulated);
        assert!(d <= tol, "{name}: refined coefficients moved by {d:e}");
    }
}

#[test]
fn small_forcing_branch_peaks_at_the_damped_resonance() {
    let plant = builtin_plant("cross_beam").unwrap();
    let exc = Excitation::cosine(100.0, vec![1.261e-3, 0.318e-3]);
    let seed = hb_solve(&plant, &exc, &FourierSignal::zero(100.0, 2), 100.0, 1, NewtonOptions::default()).unwrap();
    let opts = BranchOptions {
        omega_min: 100.0,
        omega_max: 103.0,
        ..BranchOptions::default()
    };
    let branch = continue_branch(&plant, &exc, &seed, opts).unwrap();
    assert_eq!(branch.count(EventKind::LimitPoint), 0);
    // first-harmonic amplitude of mode 1; coefficients are [a0, a1, b1] per mode
    let amp: Vec<f64> = branch.orbits.iter().map(|o| o.coefficients()[1].hypot(o.coefficients()[2])).collect();
    let i = (1..amp.len() - 1).max_by(|&a, &b| amp[a].total_cmp(&amp[b])).unwrap();
    // vertex of the parabola through the three highest samples
    let (w0, w1, w2) = (branch.orbits[i - 1].omega, branch.orbits[i].omega, branch.orbits[i + 1].omega);
    let (a0, a1, a2) = (amp[i - 1], amp[i], amp[i + 1]);
    let num = (w1 - w0).powi(2) * (a1 - a2) - (w1 - w2).powi(2) * (a1 - a0);
    let den = (w1 - w0) * (a1 - a2) - (w1 - w2) * (a1 - a0);
    let peak = w1 - 0.5 * num / den;
    let expect = 101.6 * (1.0 - 2.0 * 0.0076f64.powi(2)).sqrt();
    assert!((peak - expect).abs() < 2e-3, "peak at {peak}, expected {expect}");
}

/// Largest displacement deviation from the orbit during an open-loop run
/// started `delta` away from it, over the first and last `periods / 4`.
fn perturbed_deviation(omega: f64, orbit: &FourierSignal, delta: f64, periods: f64) -> (f64, f64) {
    let r = ReferenceTrajectory::new(orbit.clone(), 2);
    let x0 = r.eval(0.0);
    let sc = Scenario::from_toml(&format!(
        r#"
        mode = "open_loop"
        initial_state = [{}, {}]
        periods = {periods}
        [plant]
        builtin = "duffing"
        [excitation]
        omega = {omega}
        amplitude = [0.15]
        "#,
        x0[0],
        x0[1] + delta
    ))
    .unwrap();
    let trace = sc.resolve().unwrap().sim.run().unwrap();
    let dev = |i: usize| (trace.xi.row(i)[1] - r.eval(trace.time[i])[1]).abs();
    let q = trace.len() / 4;
    let early = (0..q).map(dev).fold(0.0, f64::max);
    let late = (trace.len() - q..trace.len()).map(dev).fold(0.0, f64::max);
    (early, late)
}

#[test]
fn floquet_classification_matches_simulation() {
    let sc = scenario("duffing_branch");
    let r = sc.resolve().unwrap();
    let branch = continue_branch(&r.sim.plant, &r.sim.excitation, r.orbit.as_ref().unwrap(), sc.branch.unwrap()).unwrap();
    let by_multiplier = |a: &&adaptive_cbc::continuation::PeriodicOrbit, b: &&adaptive_cbc::continuation::PeriodicOrbit| a.max_multiplier().total_cmp(&b.max_multiplier());
    let stable = branch.orbits.iter().filter(|o| o.stable).min_by(by_multiplier).expect("a stable orbit");
    let unstable = branch.orbits.iter().filter(|o| !o.stable).max_by(by_multiplier).expect("an unstable orbit");

    let (_, late) = perturbed_deviation(stable.omega, &stable.fourier, 1e-4, 40.0);
    assert!(late < 1e-5, "stable orbit at {} not recovered: {late:e}", stable.omega);
    let (_, late) = perturbed_deviation(unstable.omega, &unstable.fourier, 1e-4, 40.0);
    assert!(late > 1e-2, "unstable orbit at {} kept: {late:e}", unstable.omega);
}

#[test]
fn cantilever_branch_has_torus_bifurcations() {
    let sc = scenario("cantilever_branch");
    let r = sc.resolve().unwrap();
    let branch = continue_branch(&r.sim.plant, &r.sim.excitation, r.orbit.as_ref().unwrap(), sc.branch.unwrap()).unwrap();
    assert!(branch.count(EventKind::NeimarkSacker) >= 1);
    for e in &branch.events {
        assert!(e.omega_high - e.omega_low <= 1e-3 + 1e-12, "{e:?}");
    }
    let mut buf = Vec::new();
    branch.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), branch.orbits.len() + 1);
    assert!(text.contains(",NS"));
}

#[test]
fn zero_problem_is_solved_at_the_natural_response() {
    let sc = scenario("duffing_cbc");
    let r = sc.resolve().unwrap();
    let natural = resolved("duffing_noninvasive").orbit.unwrap();
    let res = cbc_solve(&r.sim, &natural.fourier, &sc.cbc.unwrap_or_default()).unwrap();
    assert!(res.iterations <= 1, "took {} iterations", res.iterations);
    let d = max_abs_diff(&res.reference.signal().to_coefficients(7), &natural.coefficients());
    assert!(d < 1e-5, "moved by {d:e}");
}

#[test]
fn newton_failure_is_an_error() {
    let opts = NewtonOptions {
        max_iter: 1,
        ..NewtonOptions::default()
    };
    let far = FourierSignal::new(2.515, vec![FourierChannel::constant(5.0)]);
    assert!(hb_solve(&duffing(), &duffing_forcing(2.515), &far, 2.515, 7, opts).is_err());
    assert!(cbc_solve(&resolved("duffing_cbc").sim, &far, &CbcOptions { max_iter: 0, ..CbcOptions::default() }).is_err());
}
