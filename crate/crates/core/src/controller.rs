//! Adaptive noninvasive tracking controller.
//!
//! The control input is `u' = -k z~ + eta` where
//!
//! * `z~ = x^(n-1) - I - x_r^(n-1)(0)` and `I` integrates
//!   `F(xi) theta_hat + sigma + eta`,
//! * `eta = -sum_j lambda_j e^(j) - phi y - g sat(y / eps)` for `j = 1..n-1`,
//! * `y = e^(n-1) + sum_j lambda_{j+1} e^(j)` for `j = 0..n-2`,
//! * `g = ||(F(xi) - F(xi_r)) theta_hat|| + kappa`,
//!
//! with adaptation `phi' = gamma y^T y` and `theta_hat' = S F(xi)^T z~`.
//! Everything here works through a [`Regressor`]; the true parameters are
//! never visible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::plant::Regressor;

/// `sat(v / eps)`, clamped to `[-1, 1]`.
pub fn saturate(v: f64, eps: f64) -> f64 {
    (v / eps).clamp(-1.0, 1.0)
}

/// Routh test for `s^d + c[d-1] s^(d-1) + ... + c[0]`.
///
/// `coeffs[i]` is the coefficient of `s^i`; the leading coefficient is 1.
pub fn is_hurwitz(coeffs: &[f64]) -> bool {
    let d = coeffs.len();
    if d == 0 {
        return true;
    }
    // Descending powers: [1, c_{d-1}, ..., c_0].
    let poly: Vec<f64> = std::iter::once(1.0).chain(coeffs.iter().rev().copied()).collect();
    if poly.iter().any(|c| !(*c > 0.0)) {
        return false;
    }
    let mut prev: Vec<f64> = poly.iter().step_by(2).copied().collect();
    let mut cur: Vec<f64> = poly.iter().skip(1).step_by(2).copied().collect();
    for _ in 0..d {
        let lead = cur.first().copied().unwrap_or(0.0);
        if !(lead > 0.0) {
            return false;
        }
        let next: Vec<f64> = (0..prev.len().saturating_sub(1))
            .map(|i| {
                let a = prev.get(i + 1).copied().unwrap_or(0.0);
                let b = cur.get(i + 1).copied().unwrap_or(0.0);
                (lead * a - prev[0] * b) / lead
            })
            .collect();
        prev = cur;
        cur = next;
        if cur.is_empty() {
            break;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    k: f64,
    kappa: f64,
    epsilon: f64,
    gamma: f64,
    s: DMatrix<f64>,
    lambda: Vec<f64>,
}

impl ControllerParams {
    pub fn new(k: f64, kappa: f64, epsilon: f64, gamma: f64, s: DMatrix<f64>, lambda: Vec<f64>) -> Result<Self> {
        for (name, v) in [("k", k), ("kappa", kappa), ("epsilon", epsilon), ("gamma", gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !s.is_square() || s.nrows() == 0 {
            return Err(Error::InvalidParams("S must be a non-empty square matrix".into()));
        }
        let scale = s.amax();
        if (&s - s.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidParams("S must be symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(s.clone()).eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(Error::InvalidParams(format!("S must be positive definite (min eigenvalue {min_eig:e})")));
        }
        if !is_hurwitz(&lambda) {
            return Err(Error::InvalidParams(format!("pol(lambda) is not Hurwitz for lambda = {lambda:?}")));
        }
        Ok(Self {
            k,
            kappa,
            epsilon,
            gamma,
            s,
            lambda,
        })
    }

    /// `S = s_diag * I_m`.
    pub fn with_scalar_gain(k: f64, kappa: f64, epsilon: f64, gamma: f64, s_diag: f64, m: usize, lambda: Vec<f64>) -> Result<Self> {
        Self::new(k, kappa, epsilon, gamma, DMatrix::identity(m, m) * s_diag, lambda)
    }

    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }
    /// `(lambda_1, ..., lambda_{n-1})`.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Plant order these parameters are built for.
    pub fn order(&self) -> usize {
        self.lambda.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.s.nrows()
    }

    pub fn with_k(&self, k: f64) -> Result<Self> {
        Self::new(k, self.kappa, self.epsilon, self.gamma, self.s.clone(), self.lambda.clone())
    }

    pub fn check_compatible(&self, regressor: &Regressor) -> Result<()> {
        check_len("controller lambda + 1 (plant order)", regressor.order(), self.order())?;
        check_len("adaptation gain S", regressor.param_count(), self.param_count())
    }
}

/// Integral accumulator behind `z`, adaptive gain `phi` and estimate
/// `theta_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub accum: Vec<f64>,
    pub phi: f64,
    pub theta_hat: Vec<f64>,
}

impl ControllerState {
    pub fn initial(dof: usize, phi0: f64, theta_hat0: Vec<f64>) -> Self {
        Self {
            accum: vec![0.0; dof],
            phi: phi0,
            theta_hat: theta_hat0,
        }
    }

    pub fn zero(dof: usize, m: usize) -> Self {
        Self::initial(dof, 0.0, vec![0.0; m])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
    pub y: Vec<f64>,
    pub g: f64,
    pub z_tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRates {
    pub accum: Vec<f64>,
    pub phi: f64,
    pub theta_hat: Vec<f64>,
}

/// Tracking errors `e^(j)`, `j = 0..n`, one length-`p` slice per order.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStack {
    dof: usize,
    data: Vec<f64>,
}

impl ErrorStack {
    /// From explicit derivatives `[e, e', ..., e^(n-1)]`.
    pub fn from_derivatives(derivs: &[&[f64]]) -> Result<Self> {
        let dof = derivs.first().map_or(0, |d| d.len());
        let mut data = Vec::with_capacity(dof * derivs.len());
        for d in derivs {
            check_len("error derivative", dof, d.len())?;
            data.extend_from_slice(d);
        }
        Ok(Self { dof, data })
    }

    /// From `xi - xi_r` in the stacked `[x^(n-1), ..., x]` ordering.
    pub fn from_states(xi: &[f64], xi_ref: &[f64], dof: usize) -> Self {
        let n = xi.len() / dof;
        let mut data = vec![0.0; xi.len()];
        for j in 0..n {
            let block = n - 1 - j;
            for i in 0..dof {
                data[j * dof + i] = xi[block * dof + i] - xi_ref[block * dof + i];
            }
        }
        Self { dof, data }
    }

    pub fn order(&self) -> usize {
        self.data.len().checked_div(self.dof).unwrap_or(0)
    }

    /// `e^(j)`.
    pub fn derivative(&self, j: usize) -> &[f64] {
        &self.data[j * self.dof..(j + 1) * self.dof]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }
}

/// `y = e^(n-1) + lambda_{n-1} e^(n-2) + ... + lambda_1 e`.
pub fn surface_y(e: &ErrorStack, lambda: &[f64]) -> Result<Vec<f64>> {
    check_len("lambda", e.order().saturating_sub(1), lambda.len())?;
    let n = e.order();
    let mut y = e.derivative(n - 1).to_vec();
    for (j, l) in lambda.iter().enumerate() {
        for (yi, ei) in y.iter_mut().zip(e.derivative(j)) {
            *yi += l * ei;
        }
    }
    Ok(y)
}

/// `g = ||(F(xi) - F(xi_r)) theta_hat||_2 + kappa`.
pub fn gain_g(f_xi: &DMatrix<f64>, f_ref: &DMatrix<f64>, theta_hat: &[f64], kappa: f64) -> Result<f64> {
    if f_xi.shape() != f_ref.shape() {
        return Err(Error::Dimension {
            what: "regressor matrices",
            expected: f_xi.len(),
            got: f_ref.len(),
        });
    }
    check_len("theta_hat", f_xi.ncols(), theta_hat.len())?;
    let th = DVector::from_column_slice(theta_hat);
    Ok(((f_xi - f_ref) * &th).norm() + kappa)
}

/// `eta = -lambda_{n-1} e^(n-1) - ... - lambda_1 e' - phi y - g sat(y / eps)`.
pub fn robust_eta(e: &ErrorStack, lambda: &[f64], y: &[f64], phi: f64, g: f64, eps: f64) -> Result<Vec<f64>> {
    check_len("lambda", e.order().saturating_sub(1), lambda.len())?;
    check_len("surface y", e.dof, y.len())?;
    let mut eta: Vec<f64> = y.iter().map(|&yi| -phi * yi - g * saturate(yi, eps)).collect();
    for (j, l) in lambda.iter().enumerate() {
        for (h, ei) in eta.iter_mut().zip(e.derivative(j + 1)) {
            *h -= l * ei;
        }
    }
    Ok(eta)
}

/// Evaluates the control law at one instant.
pub fn control_input(
    params: &ControllerParams,
    regressor: &Regressor,
    state: &ControllerState,
    xi: &[f64],
    xi_ref: &[f64],
    initial_top: &[f64],
) -> Result<ControlOutput> {
    params.check_compatible(regressor)?;
    let p = regressor.dof();
    check_len("state vector", regressor.state_len(), xi.len())?;
    check_len("reference state", regressor.state_len(), xi_ref.len())?;
    check_len("x_r^(n-1)(0)", p, initial_top.len())?;
    check_len("accumulator", p, state.accum.len())?;
    check_len("theta_hat", regressor.param_count(), state.theta_hat.len())?;

    let e = ErrorStack::from_states(xi, xi_ref, p);
    let y = surface_y(&e, params.lambda())?;
    let f_xi = regressor.eval(xi)?;
    let f_ref = regressor.eval(xi_ref)?;
    let g = gain_g(&f_xi, &f_ref, &state.theta_hat, params.kappa())?;
    let eta = robust_eta(&e, params.lambda(), &y, state.phi, g, params.epsilon())?;
    let z_tilde: Vec<f64> = (0..p).map(|i| xi[i] - state.accum[i] - initial_top[i]).collect();
    let u = z_tilde.iter().zip(&eta).map(|(z, h)| -params.k() * z + h).collect();
    Ok(ControlOutput {
        u,
        eta,
        y,
        g,
        z_tilde,
    })
}

/// `(I', phi', theta_hat')` given `F(xi)`, the generalized excitation and
/// the current control output.
pub fn controller_rhs(params: &ControllerParams, state: &ControllerState, f_xi: &DMatrix<f64>, sigma: &[f64], out: &ControlOutput) -> Result<ControllerRates> {
    check_len("theta_hat", f_xi.ncols(), state.theta_hat.len())?;
    check_len("excitation", f_xi.nrows(), sigma.len())?;
    check_len("z_tilde", f_xi.nrows(), out.z_tilde.len())?;
    let th = DVector::from_column_slice(&state.theta_hat);
    let f_th = f_xi * &th;
    let accum = (0..sigma.len()).map(|i| f_th[i] + sigma[i] + out.eta[i]).collect();
    let phi = params.gamma() * out.y.iter().map(|v| v * v).sum::<f64>();
    let z = DVector::from_column_slice(&out.z_tilde);
    let theta_hat = (params.s() * (f_xi.transpose() * z)).as_slice().to_vec();
    Ok(ControllerRates { accum, phi, theta_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::make_duffing;
    use approx::assert_relative_eq;

    fn duffing_params() -> ControllerParams {
        ControllerParams::with_scalar_gain(1.0, 1.0, 1.0, 0.1, 2.0, 3, vec![1.0]).unwrap()
    }

    #[test]
    fn saturation() {
        assert_eq!(saturate(0.5, 1.0), 0.5);
        assert_eq!(saturate(3.0, 1.0), 1.0);
        assert_eq!(saturate(-2.0, 0.5), -1.0);
    }

    #[test]
    fn surface_examples() {
        let e = ErrorStack::from_derivatives(&[&[0.2], &[0.3]]).unwrap();
        assert_relative_eq!(surface_y(&e, &[1.0]).unwrap()[0], 0.5);
        let e = ErrorStack::from_derivatives(&[&[0.0], &[0.0]]).unwrap();
        assert_eq!(surface_y(&e, &[1.0]).unwrap(), vec![0.0]);
        let e = ErrorStack::from_derivatives(&[&[1.0], &[0.0], &[0.0]]).unwrap();
        assert_eq!(surface_y(&e, &[2.0, 3.0]).unwrap(), vec![2.0]);
        assert!(surface_y(&e, &[2.0]).is_err());
    }

    #[test]
    fn gain_examples() {
        let plant = make_duffing();
        let f = plant.eval_regressor(&[0.0, 1.0]).unwrap();
        let f0 = plant.eval_regressor(&[0.0, 0.0]).unwrap();
        assert_eq!(gain_g(&f, &f, &[3.0, 1.0, 2.0], 0.7).unwrap(), 0.7);
        assert_eq!(gain_g(&f, &f0, &[0.0; 3], 0.7).unwrap(), 0.7);
        assert_relative_eq!(gain_g(&f, &f0, &[0.0, 1.0, 0.0], 1.0).unwrap(), 2.0);
    }

    #[test]
    fn eta_examples() {
        let zero = ErrorStack::from_derivatives(&[&[0.0], &[0.0]]).unwrap();
        assert_eq!(robust_eta(&zero, &[1.0], &[0.0], 5.0, 1.0, 1.0).unwrap(), vec![0.0]);
        let e = ErrorStack::from_derivatives(&[&[0.2], &[0.3]]).unwrap();
        assert_relative_eq!(robust_eta(&e, &[1.0], &[0.5], 2.0, 1.0, 1.0).unwrap()[0], -1.8, epsilon = 1e-15);
        // saturated: sat term contributes exactly -g
        let eta = robust_eta(&zero, &[1.0], &[100.0], 0.0, 3.0, 0.1).unwrap();
        assert_eq!(eta, vec![-3.0]);
        let eta = robust_eta(&zero, &[1.0], &[-100.0], 0.0, 3.0, 0.1).unwrap();
        assert_eq!(eta, vec![3.0]);
    }

    #[test]
    fn starts_noninvasive_on_reference() {
        let plant = make_duffing();
        let xi_r = [1.314, 1.483];
        let st = ControllerState::initial(1, 0.3, vec![0.5, -1.0, 2.0]);
        let out = control_input(&duffing_params(), plant.regressor(), &st, &xi_r, &xi_r, &[1.314]).unwrap();
        assert_eq!(out.z_tilde, vec![0.0]);
        assert_eq!(out.u, vec![0.0]);
        assert_eq!(out.g, 1.0);
    }

    #[test]
    fn surface_from_states() {
        let plant = make_duffing();
        let st = ControllerState::zero(1, 3);
        let out = control_input(&duffing_params(), plant.regressor(), &st, &[0.0, -1.0], &[1.314, 1.483], &[1.314]).unwrap();
        assert_relative_eq!(out.y[0], -3.797, epsilon = 1e-12);
        // u' = -k z~ + eta reproduced from the parts
        assert_eq!(out.u[0], -out.z_tilde[0] + out.eta[0]);
    }

    #[test]
    fn rates_examples() {
        let p = duffing_params();
        let plant = make_duffing();
        let f = plant.eval_regressor(&[0.0, 1.0]).unwrap();
        let st = ControllerState::zero(1, 3);
        let out = ControlOutput {
            u: vec![0.0],
            eta: vec![0.0],
            y: vec![0.0],
            g: 1.0,
            z_tilde: vec![0.5],
        };
        let r = controller_rhs(&p, &st, &f, &[0.0], &out).unwrap();
        assert_eq!(r.phi, 0.0);
        assert_eq!(r.theta_hat, vec![0.0, 1.0, 1.0]);
        let out = ControlOutput {
            z_tilde: vec![0.0],
            y: vec![2.0],
            ..out
        };
        let r = controller_rhs(&p, &st, &f, &[0.0], &out).unwrap();
        assert_eq!(r.theta_hat, vec![0.0; 3]);
        assert_relative_eq!(r.phi, 0.4);
    }

    #[test]
    fn parameter_validation() {
        let s = DMatrix::identity(3, 3);
        assert!(ControllerParams::new(0.0, 1.0, 1.0, 1.0, s.clone(), vec![1.0]).is_err());
        assert!(ControllerParams::new(1.0, 1.0, -1.0, 1.0, s.clone(), vec![1.0]).is_err());
        assert!(ControllerParams::new(1.0, 1.0, 1.0, 1.0, s.clone(), vec![-1.0]).is_err());
        let mut asym = s.clone();
        asym[(0, 1)] = 0.5;
        assert!(ControllerParams::new(1.0, 1.0, 1.0, 1.0, asym, vec![1.0]).is_err());
        let indefinite = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert!(ControllerParams::new(1.0, 1.0, 1.0, 1.0, indefinite, vec![1.0]).is_err());
        // s^2 + s + 6 is Hurwitz; s^3 + s^2 + s + 6 is not (1*1 < 6)
        assert!(ControllerParams::new(1.0, 1.0, 1.0, 1.0, s.clone(), vec![6.0, 1.0]).is_ok());
        assert!(ControllerParams::new(1.0, 1.0, 1.0, 1.0, s, vec![6.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn routh_matches_known_polynomials() {
        assert!(is_hurwitz(&[]));
        assert!(is_hurwitz(&[2.0]));
        assert!(!is_hurwitz(&[0.0]));
        // (s+1)(s+2)(s+3) = s^3 + 6 s^2 + 11 s + 6
        assert!(is_hurwitz(&[6.0, 11.0, 6.0]));
        // (s-1)(s+2)(s+3) = s^3 + 4 s^2 + s - 6
        assert!(!is_hurwitz(&[-6.0, 1.0, 4.0]));
        // s^3 + s^2 + 2 s + 8: positive coefficients, unstable (1*2 < 8)
        assert!(!is_hurwitz(&[8.0, 2.0, 1.0]));
        // (s^2 + s + 1)(s^2 + 2 s + 5) = s^4 + 3 s^3 + 8 s^2 + 7 s + 5
        assert!(is_hurwitz(&[5.0, 7.0, 8.0, 3.0]));
    }
}
