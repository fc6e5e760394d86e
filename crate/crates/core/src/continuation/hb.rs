//! Harmonic balance: Fourier-Galerkin residual, damped Newton and Floquet
//! stability of the resulting orbits.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::integrate::Rk4;
use crate::plant::{Excitation, PlantModel};
use crate::reference::FourierSignal;

/// Number of quadrature samples per period for `h` harmonics.
pub fn quadrature_points(h: usize) -> usize {
    8 * h + 8
}

/// Trigonometric tables on the uniform grid `t_j = j T / N`; they do not
/// depend on `omega`.
#[derive(Debug, Clone)]
pub(crate) struct Grid {
    pub h: usize,
    pub nt: usize,
    /// `cos(k 2 pi j / N)` at `[k * nt + j]`, `k = 0..=h`.
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Grid {
    pub fn new(h: usize) -> Self {
        Self::with_points(h, quadrature_points(h))
    }

    pub fn with_points(h: usize, nt: usize) -> Self {
        let mut cos = vec![0.0; (h + 1) * nt];
        let mut sin = vec![0.0; (h + 1) * nt];
        for k in 0..=h {
            for j in 0..nt {
                let (s, c) = (2.0 * PI * (k * j % nt) as f64 / nt as f64).sin_cos();
                cos[k * nt + j] = c;
                sin[k * nt + j] = s;
            }
        }
        Self { h, nt, cos, sin }
    }

    /// `d`-th time derivative of every channel at every grid point; result is
    /// `[channel][j]`.
    pub fn synthesize(&self, coeffs: &[f64], channels: usize, omega: f64, d: usize) -> Vec<Vec<f64>> {
        let (h, nt) = (self.h, self.nt);
        let stride = 2 * h + 1;
        (0..channels)
            .map(|c| {
                let cf = &coeffs[c * stride..(c + 1) * stride];
                let mut out = vec![if d == 0 { cf[0] } else { 0.0 }; nt];
                for k in 1..=h {
                    let kw = k as f64 * omega;
                    let (mut a, mut b) = (cf[k], cf[h + k]);
                    for _ in 0..d {
                        (a, b) = (kw * b, -kw * a);
                    }
                    if a == 0.0 && b == 0.0 {
                        continue;
                    }
                    let (ck, sk) = (&self.cos[k * nt..(k + 1) * nt], &self.sin[k * nt..(k + 1) * nt]);
                    for j in 0..nt {
                        out[j] += a * ck[j] + b * sk[j];
                    }
                }
                out
            })
            .collect()
    }

    /// Galerkin projection of `values[channel][j]` onto harmonics `0..=h`.
    pub fn project(&self, values: &[Vec<f64>]) -> Vec<f64> {
        let (h, nt) = (self.h, self.nt);
        let stride = 2 * h + 1;
        let mut out = vec![0.0; values.len() * stride];
        for (c, v) in values.iter().enumerate() {
            let o = &mut out[c * stride..(c + 1) * stride];
            o[0] = v.iter().sum::<f64>() / nt as f64;
            for k in 1..=h {
                let (ck, sk) = (&self.cos[k * nt..(k + 1) * nt], &self.sin[k * nt..(k + 1) * nt]);
                let (mut a, mut b) = (0.0, 0.0);
                for j in 0..nt {
                    a += v[j] * ck[j];
                    b += v[j] * sk[j];
                }
                o[k] = 2.0 * a / nt as f64;
                o[h + k] = 2.0 * b / nt as f64;
            }
        }
        out
    }
}

/// Residual of `x^(n) - F(xi) theta - sigma` projected onto harmonics
/// `0..=h`, for coefficient vector `coeffs` laid out per DOF as
/// `[a0, a_1..a_h, b_1..b_h]`.
pub(crate) fn residual_coeffs(plant: &PlantModel, excitation: &Excitation, grid: &Grid, coeffs: &[f64], omega: f64) -> Vec<f64> {
    let (n, p) = (plant.order(), plant.dof());
    let derivs: Vec<Vec<Vec<f64>>> = (0..=n).map(|d| grid.synthesize(coeffs, p, omega, d)).collect();
    let exc = excitation.with_omega(omega);
    let mut f = DMatrix::zeros(p, plant.param_count());
    let mut xi = vec![0.0; n * p];
    let mut rhs = vec![0.0; n * p];
    let zero_u = vec![0.0; p];
    let mut raw = vec![0.0; exc.channels()];
    let mut sigma = vec![0.0; p];
    let mut res = vec![vec![0.0; grid.nt]; p];
    let period = 2.0 * PI / omega;
    for j in 0..grid.nt {
        for block in 0..n {
            let d = n - 1 - block;
            for i in 0..p {
                xi[block * p + i] = derivs[d][i][j];
            }
        }
        let t = period * j as f64 / grid.nt as f64;
        exc.eval_into(t, &mut raw);
        plant.map_forcing(&raw, &mut sigma);
        plant.rhs_into(&xi, &zero_u, &mut f, &mut rhs);
        for i in 0..p {
            res[i][j] = derivs[n][i][j] - rhs[i] - sigma[i];
        }
    }
    grid.project(&res)
}

/// Coefficient-space harmonic-balance residual of `signal` at frequency
/// `omega` with `h` harmonics (the signal is padded or truncated to `h`).
pub fn hb_residual(plant: &PlantModel, excitation: &Excitation, signal: &FourierSignal, omega: f64, h: usize) -> Result<Vec<f64>> {
    check_len("signal channels", plant.dof(), signal.channel_count())?;
    check_len("excitation channels", plant.excitation_channels(), excitation.channels())?;
    Ok(residual_coeffs(plant, excitation, &Grid::new(h), &signal.to_coefficients(h), omega))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 8,
        }
    }
}

/// Forward-difference Jacobian of `f` at `x` (`f(x)` given as `f0`).
pub(crate) fn fd_jacobian<F>(f: &mut F, x: &[f64], f0: &[f64], step: impl Fn(usize, f64) -> f64) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.to_vec();
    for c in 0..x.len() {
        let h = step(c, x[c]);
        xp[c] = x[c] + h;
        let fp = f(&xp);
        for r in 0..f0.len() {
            jac[(r, c)] = (fp[r] - f0[r]) / h;
        }
        xp[c] = x[c];
    }
    jac
}

pub(crate) fn solve(jac: DMatrix<f64>, rhs: &[f64], what: &'static str) -> Result<Vec<f64>> {
    let sol = jac.lu().solve(&DVector::from_column_slice(rhs)).ok_or(Error::Singular(what))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what));
    }
    Ok(sol.as_slice().to_vec())
}

/// Result of a damped Newton solve.
#[derive(Debug, Clone)]
pub(crate) struct NewtonResult {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton with forward-difference Jacobian. The step is halved up to
/// `max_halvings` times while the residual norm does not decrease.
pub(crate) fn damped_newton<F>(mut f: F, x0: &[f64], opts: NewtonOptions, solver: &'static str) -> Result<NewtonResult>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let scale = x0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let mut rn = norm(&r);
    for it in 0..=opts.max_iter {
        if !rn.is_finite() {
            break;
        }
        if rn <= opts.tol {
            return Ok(NewtonResult { x, residual: rn, iterations: it });
        }
        if it == opts.max_iter {
            break;
        }
        let jac = fd_jacobian(&mut f, &x, &r, |_, v| 1e-7 * v.abs().max(scale));
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = solve(jac, &neg, solver)?;
        let mut lam = 1.0;
        for halving in 0..=opts.max_halvings {
            let xt: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + lam * d).collect();
            let rt = f(&xt);
            let rtn = norm(&rt);
            let last = halving == opts.max_halvings;
            if rtn < rn || (last && rtn.is_finite()) {
                if !(rtn < rn) {
                    log::debug!("{solver}: no decrease after step halving at iteration {it}");
                }
                x = xt;
                r = rt;
                rn = rtn;
                break;
            }
            lam *= 0.5;
        }
    }
    Err(Error::NoConvergence {
        solver,
        iterations: opts.max_iter,
        residual: rn,
    })
}

/// A periodic response of the uncontrolled plant.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    /// Displacement Fourier series per DOF.
    pub fourier: FourierSignal,
    pub omega: f64,
    pub floquet_multipliers: Vec<Complex<f64>>,
    pub stable: bool,
    pub residual_norm: f64,
}

impl PeriodicOrbit {
    pub fn harmonics(&self) -> usize {
        self.fourier.harmonics()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.fourier.to_coefficients(self.harmonics())
    }

    pub fn max_multiplier(&self) -> f64 {
        self.floquet_multipliers.iter().map(|m| m.norm()).fold(0.0, f64::max)
    }

    /// Largest `|x_i(t)|` over one period, per DOF, sampled finely.
    pub fn max_displacement(&self) -> Vec<f64> {
        let grid = Grid::with_points(self.harmonics(), 64 * (self.harmonics() + 1));
        grid.synthesize(&self.coefficients(), self.fourier.channel_count(), self.omega, 0)
            .iter()
            .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect()
    }
}

/// Default RK4 steps per period for the variational equations.
pub const FLOQUET_STEPS: usize = 2000;

/// Central-difference Jacobian of the plant vector field at `xi`.
pub(crate) fn state_jacobian(plant: &PlantModel, xi: &[f64], out: &mut DMatrix<f64>) {
    let np = xi.len();
    let p = plant.dof();
    let zero_u = vec![0.0; p];
    let mut f = DMatrix::zeros(p, plant.param_count());
    let (mut fp, mut fm) = (vec![0.0; np], vec![0.0; np]);
    let mut x = xi.to_vec();
    for c in 0..np {
        let h = 1e-6 * xi[c].abs().max(1e-3);
        x[c] = xi[c] + h;
        plant.rhs_into(&x, &zero_u, &mut f, &mut fp);
        x[c] = xi[c] - h;
        plant.rhs_into(&x, &zero_u, &mut f, &mut fm);
        x[c] = xi[c];
        for r in 0..np {
            out[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
}

/// Monodromy matrix and `int_0^T trace(J) dt` along a Fourier orbit.
pub fn monodromy(plant: &PlantModel, signal: &FourierSignal, steps: usize) -> (DMatrix<f64>, f64) {
    let (n, p) = (plant.order(), plant.dof());
    let np = n * p;
    let omega = signal.omega;
    let period = 2.0 * PI / omega;
    let dt = period / steps as f64;
    let reference = crate::reference::ReferenceTrajectory::new(signal.clone(), n);
    let mut xi = vec![0.0; np];
    let mut jac = DMatrix::zeros(np, np);
    let mut trace_integral = 0.0;
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        reference.eval_into(t, &mut xi);
        state_jacobian(plant, &xi, &mut jac);
        // y holds the np x np matrix column-major
        let m = DMatrix::from_column_slice(np, np, y);
        dy.copy_from_slice((&jac * m).as_slice());
    };
    let mut rk = Rk4::new(np * np);
    let mut y: Vec<f64> = DMatrix::<f64>::identity(np, np).as_slice().to_vec();
    // Simpson weights on the RK4 stage times for the trace integral
    let tr = |t: f64| {
        let mut j = DMatrix::zeros(np, np);
        state_jacobian(plant, &reference.eval(t), &mut j);
        j.trace()
    };
    for i in 0..steps {
        let t = i as f64 * dt;
        rk.step(&mut rhs, t, &mut y, dt);
        trace_integral += dt / 6.0 * (tr(t) + 4.0 * tr(t + 0.5 * dt) + tr(t + dt));
    }
    (DMatrix::from_column_slice(np, np, &y), trace_integral)
}

pub fn floquet_multipliers(plant: &PlantModel, signal: &FourierSignal, steps: usize) -> Vec<Complex<f64>> {
    let (m, _) = monodromy(plant, signal, steps);
    let mut mu: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    mu.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    mu
}

/// Refines `guess` into a harmonic-balance orbit with `h` harmonics and
/// classifies its stability.
pub fn hb_solve(plant: &PlantModel, excitation: &Excitation, guess: &FourierSignal, omega: f64, h: usize, opts: NewtonOptions) -> Result<PeriodicOrbit> {
    check_len("guess channels", plant.dof(), guess.channel_count())?;
    check_len("excitation channels", plant.excitation_channels(), excitation.channels())?;
    if !(omega > 0.0) {
        return Err(Error::InvalidScenario(format!("omega must be positive, got {omega}")));
    }
    let x0 = guess.to_coefficients(h);
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidScenario("non-finite initial guess".into()));
    }
    let grid = Grid::new(h);
    let sol = damped_newton(|c| residual_coeffs(plant, excitation, &grid, c, omega), &x0, opts, "harmonic balance")?;
    log::debug!("harmonic balance converged in {} iterations, residual {:e}", sol.iterations, sol.residual);
    orbit_from_coeffs(plant, &sol.x, omega, h, sol.residual)
}

pub(crate) fn orbit_from_coeffs(plant: &PlantModel, coeffs: &[f64], omega: f64, h: usize, residual: f64) -> Result<PeriodicOrbit> {
    let fourier = FourierSignal::from_coefficients(omega, plant.dof(), h, coeffs)?;
    let floquet_multipliers = floquet_multipliers(plant, &fourier, FLOQUET_STEPS);
    let stable = floquet_multipliers.iter().all(|m| m.norm() < 1.0);
    Ok(PeriodicOrbit {
        fourier,
        omega,
        floquet_multipliers,
        stable,
        residual_norm: residual,
    })
}
