//! Plants of the form `x^(n) = F(xi) theta + u`.
//!
//! The state vector `xi` stacks the derivative blocks from the highest
//! derivative down: `[x^(n-1), ..., x', x]`, each block of length `p`.
//! The regressor `F(xi)` is `p x m` and known; `theta` is the plant's true
//! parameter vector, visible to the simulator and diagnostics only. The
//! controller is handed a [`Regressor`] and never a [`PlantModel`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// One regressor column: a monomial in the state entries placed in a single
/// row of `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub row: usize,
    /// Exponent for every entry of `xi` (length `n * p`).
    pub powers: Vec<u32>,
}

impl Monomial {
    fn eval(&self, xi: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(xi)
            .filter(|(&k, _)| k > 0)
            .map(|(&k, &v)| v.powi(k as i32))
            .product()
    }
}

/// Known geometry of the tip mechanism of the cantilever benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipMechanism {
    /// Mode shapes at the four measurement points (4 x 2, row major).
    pub phi: [[f64; 2]; 4],
    /// Half span of the mechanism.
    pub half_span: f64,
}

impl TipMechanism {
    /// Physical deflections `x' = Phi x`.
    pub fn deflection(&self, x: [f64; 2]) -> [f64; 4] {
        self.phi.map(|r| r[0] * x[0] + r[1] * x[1])
    }

    /// `d (1/a - 1/sqrt(a^2 + d^2))`, evaluated without cancellation.
    pub fn shape(&self, d: f64) -> f64 {
        let a = self.half_span;
        let r = (a * a + d * d).sqrt();
        d * d * d / (a * r * (a + r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RegressorKind {
    Polynomial { columns: Vec<Monomial> },
    /// Block-diagonal modal regressor with the tip spring nonlinearity:
    /// row `i` holds `[x_i', x_i, h(x'_4)]` at columns `i`, `2 + i`, `4 + i`.
    Cantilever(TipMechanism),
}

/// The known part of the plant: the map `xi -> F(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    order: usize,
    dof: usize,
    kind: RegressorKind,
    mask: Option<Vec<bool>>,
}

impl Regressor {
    pub fn new(order: usize, dof: usize, kind: RegressorKind) -> Result<Self> {
        if order == 0 || dof == 0 {
            return Err(Error::InvalidScenario("order and dof must be positive".into()));
        }
        match &kind {
            RegressorKind::Polynomial { columns } => {
                if columns.is_empty() {
                    return Err(Error::InvalidScenario("regressor has no columns".into()));
                }
                for c in columns {
                    check_len("monomial powers", order * dof, c.powers.len())?;
                    if c.row >= dof {
                        return Err(Error::InvalidScenario(format!(
                            "monomial row {} out of range for {dof} dof",
                            c.row
                        )));
                    }
                }
            }
            RegressorKind::Cantilever(_) => {
                if order != 2 || dof != 2 {
                    return Err(Error::InvalidScenario(
                        "cantilever regressor requires order 2 and 2 dof".into(),
                    ));
                }
            }
        }
        Ok(Self {
            order,
            dof,
            kind,
            mask: None,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn state_len(&self) -> usize {
        self.order * self.dof
    }

    pub fn param_count(&self) -> usize {
        match &self.kind {
            RegressorKind::Polynomial { columns } => columns.len(),
            RegressorKind::Cantilever(_) => 6,
        }
    }

    pub fn kind(&self) -> &RegressorKind {
        &self.kind
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// A copy whose columns with `mask[j] == false` evaluate to zero. Masks
    /// compose: a column stays active only if every applied mask keeps it.
    pub fn masked(&self, mask: &[bool]) -> Result<Self> {
        check_len("regressor mask", self.param_count(), mask.len())?;
        let combined = match &self.mask {
            Some(old) => old.iter().zip(mask).map(|(a, b)| *a && *b).collect(),
            None => mask.to_vec(),
        };
        Ok(Self {
            mask: Some(combined),
            ..self.clone()
        })
    }

    /// Evaluates `F(xi)` into a preallocated `p x m` matrix.
    pub fn eval_into(&self, xi: &[f64], out: &mut DMatrix<f64>) {
        debug_assert_eq!(xi.len(), self.state_len());
        debug_assert_eq!(out.shape(), (self.dof, self.param_count()));
        out.fill(0.0);
        match &self.kind {
            RegressorKind::Polynomial { columns } => {
                for (j, c) in columns.iter().enumerate() {
                    out[(c.row, j)] = c.eval(xi);
                }
            }
            RegressorKind::Cantilever(mech) => {
                let d = mech.deflection([xi[2], xi[3]])[3];
                let h = mech.shape(d);
                for i in 0..2 {
                    out[(i, i)] = xi[i];
                    out[(i, 2 + i)] = xi[2 + i];
                    out[(i, 4 + i)] = h;
                }
            }
        }
        if let Some(mask) = &self.mask {
            for (j, keep) in mask.iter().enumerate() {
                if !keep {
                    out.column_mut(j).fill(0.0);
                }
            }
        }
    }

    pub fn eval(&self, xi: &[f64]) -> Result<DMatrix<f64>> {
        check_len("state vector", self.state_len(), xi.len())?;
        let mut out = DMatrix::zeros(self.dof, self.param_count());
        self.eval_into(xi, &mut out);
        Ok(out)
    }
}

/// Harmonic forcing `sigma_i(t) = A_i cos(omega t + psi_i)` per excitation
/// channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub omega: f64,
    pub amplitude: Vec<f64>,
    #[serde(default)]
    pub phase: Vec<f64>,
}

impl Excitation {
    pub fn new(omega: f64, amplitude: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        let exc = Self {
            omega,
            amplitude,
            phase,
        };
        exc.validate()?;
        Ok(exc)
    }

    pub fn cosine(omega: f64, amplitude: Vec<f64>) -> Self {
        let phase = vec![0.0; amplitude.len()];
        Self {
            omega,
            amplitude,
            phase,
        }
    }

    pub fn zero(channels: usize) -> Self {
        Self {
            omega: 0.0,
            amplitude: vec![0.0; channels],
            phase: vec![0.0; channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.phase.is_empty() {
            check_len("excitation phases", self.amplitude.len(), self.phase.len())?;
        }
        if !self.is_zero() && !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "excitation frequency must be positive, got {}",
                self.omega
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude.iter().all(|a| *a == 0.0)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn with_omega(&self, omega: f64) -> Self {
        Self {
            omega,
            ..self.clone()
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let psi = self.phase.get(i).copied().unwrap_or(0.0);
            *o = self.amplitude[i] * (self.omega * t + psi).cos();
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels()];
        self.eval_into(t, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub name: String,
    regressor: Regressor,
    true_theta: Vec<f64>,
    /// Maps excitation channels into the generalized coordinates. `None`
    /// means identity.
    forcing_gain: Option<Vec<Vec<f64>>>,
}

impl PlantModel {
    pub fn new(name: impl Into<String>, regressor: Regressor, true_theta: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", regressor.param_count(), true_theta.len())?;
        Ok(Self {
            name: name.into(),
            regressor,
            true_theta,
            forcing_gain: None,
        })
    }

    /// Sets a `p x q` gain from `q` excitation channels into the `p` equations.
    pub fn with_forcing_gain(mut self, gain: Vec<Vec<f64>>) -> Result<Self> {
        check_len("forcing gain rows", self.dof(), gain.len())?;
        if let Some(q) = gain.first().map(Vec::len) {
            if gain.iter().any(|r| r.len() != q) {
                return Err(Error::InvalidScenario("ragged forcing gain".into()));
            }
        }
        self.forcing_gain = Some(gain);
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.regressor.order
    }

    pub fn dof(&self) -> usize {
        self.regressor.dof
    }

    pub fn param_count(&self) -> usize {
        self.regressor.param_count()
    }

    pub fn state_len(&self) -> usize {
        self.regressor.state_len()
    }

    pub fn regressor(&self) -> &Regressor {
        &self.regressor
    }

    pub fn true_theta(&self) -> &[f64] {
        &self.true_theta
    }

    /// Replaces the true parameters (used by scenario overrides and tests).
    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", self.param_count(), theta.len())?;
        self.true_theta = theta;
        Ok(self)
    }

    /// Number of excitation channels this plant expects.
    pub fn excitation_channels(&self) -> usize {
        match &self.forcing_gain {
            Some(g) => g.first().map_or(0, Vec::len),
            None => self.dof(),
        }
    }

    pub fn forcing_gain(&self) -> Option<&[Vec<f64>]> {
        self.forcing_gain.as_deref()
    }

    /// Maps an excitation-channel vector into generalized forces.
    pub fn map_forcing(&self, raw: &[f64], out: &mut [f64]) {
        match &self.forcing_gain {
            Some(g) => {
                for (o, row) in out.iter_mut().zip(g) {
                    *o = row.iter().zip(raw).map(|(a, b)| a * b).sum();
                }
            }
            None => out.copy_from_slice(raw),
        }
    }

    /// Generalized forcing `B sigma(t)` for an excitation.
    pub fn forcing(&self, excitation: &Excitation, t: f64) -> Vec<f64> {
        let raw = excitation.eval(t);
        let mut out = vec![0.0; self.dof()];
        self.map_forcing(&raw, &mut out);
        out
    }

    /// The generalized forcing amplitude per equation (`|B A|` channel-wise
    /// for in-phase excitation, otherwise the bound `sum |B_ij A_j|`).
    pub fn forcing_amplitude(&self, excitation: &Excitation) -> Vec<f64> {
        let in_phase = excitation.phase.iter().all(|p| *p == excitation.phase.first().copied().unwrap_or(0.0));
        match &self.forcing_gain {
            None => excitation.amplitude.iter().map(|a| a.abs()).collect(),
            Some(g) => g
                .iter()
                .map(|row| {
                    if in_phase {
                        row.iter().zip(&excitation.amplitude).map(|(b, a)| b * a).sum::<f64>().abs()
                    } else {
                        row.iter().zip(&excitation.amplitude).map(|(b, a)| (b * a).abs()).sum()
                    }
                })
                .collect(),
        }
    }

    pub fn eval_regressor(&self, xi: &[f64]) -> Result<DMatrix<f64>> {
        self.regressor.eval(xi)
    }

    /// First-order right-hand side, writing into `out` and using `f` as
    /// regressor scratch space.
    pub fn rhs_into(&self, xi: &[f64], u: &[f64], f: &mut DMatrix<f64>, out: &mut [f64]) {
        let p = self.dof();
        self.regressor.eval_into(xi, f);
        for i in 0..p {
            let mut acc = u[i];
            for (j, th) in self.true_theta.iter().enumerate() {
                acc += f[(i, j)] * th;
            }
            out[i] = acc;
        }
        // d/dt x^(k) is the block above it.
        out[p..].copy_from_slice(&xi[..xi.len() - p]);
    }

    pub fn plant_rhs(&self, xi: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("state vector", self.state_len(), xi.len())?;
        check_len("input vector", self.dof(), u.len())?;
        let mut f = DMatrix::zeros(self.dof(), self.param_count());
        let mut out = vec![0.0; xi.len()];
        self.rhs_into(xi, u, &mut f, &mut out);
        Ok(out)
    }
}

/// Exponent vector with `k` at position `idx`, zero elsewhere.
fn unit_powers(len: usize, factors: &[(usize, u32)]) -> Vec<u32> {
    let mut p = vec![0; len];
    for &(i, k) in factors {
        p[i] += k;
    }
    p
}

pub const DUFFING_THETA: [f64; 3] = [-0.1, 4.0, -2.0];

/// `x'' = theta_1 x' + theta_2 x + theta_3 x^3 + u`.
pub fn make_duffing() -> PlantModel {
    let cols = [vec![(0, 1)], vec![(1, 1)], vec![(1, 3)]]
        .iter()
        .map(|f| Monomial {
            row: 0,
            powers: unit_powers(2, f),
        })
        .collect();
    let reg = Regressor::new(2, 1, RegressorKind::Polynomial { columns: cols }).expect("valid duffing regressor");
    PlantModel::new("duffing", reg, DUFFING_THETA.to_vec()).expect("valid duffing plant")
}

/// Modal parameters of the two-mode cross-beam model. `gamma[i][j]` is
/// `gamma_{i+1, j+1}` (nonlinear term `i + 1` of mode `j + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossBeamParams {
    pub zeta: [f64; 2],
    pub omega: [f64; 2],
    pub gamma: [[f64; 2]; 10],
}

pub const CROSS_BEAM: CrossBeamParams = CrossBeamParams {
    zeta: [0.0076, 0.0026],
    omega: [101.6, 104.6],
    gamma: [
        [113.321, -104.755],
        [-104.755, -29.740],
        [-104.755, -29.740],
        [-29.740, 85.367],
        [3.836e8, 9.644e7],
        [2.451e7, 6.104e6],
        [4.902e7, 1.221e7],
        [1.929e8, 4.902e7],
        [9.644e7, 2.451e7],
        [6.104e6, 2.351e6],
    ],
};

/// Nonlinear monomials of the cross-beam model in column order, as
/// exponents of `(x1, x2)`.
pub const CROSS_BEAM_MONOMIALS: [(u32, u32); 7] = [(2, 0), (1, 1), (0, 2), (3, 0), (1, 2), (2, 1), (0, 3)];

/// Column indices (over the 18 columns) of the mixed `x1 x2`, `x1 x2^2` and
/// `x1^2 x2` monomials in both rows.
pub const CROSS_BEAM_CROSS_TERMS: [usize; 6] = [3, 6, 7, 12, 15, 16];

impl CrossBeamParams {
    /// Grouped parameter vector in regressor column order, signs folded so
    /// that `x'' = F theta + u`.
    pub fn theta(&self) -> Vec<f64> {
        let mut th = Vec::with_capacity(18);
        for j in 0..2 {
            let g = |i: usize| self.gamma[i - 1][j];
            th.extend([
                -2.0 * self.zeta[j] * self.omega[j],
                -self.omega[j] * self.omega[j],
                -g(1) / 2.0,
                -(g(2) + g(3)) / 2.0,
                -g(4) / 2.0,
                -g(5) / 3.0,
                -(g(6) + g(7)) / 3.0,
                -(g(8) + g(9)) / 3.0,
                -g(10) / 3.0,
            ]);
        }
        th
    }
}

/// Two-mode cross-beam with 1:1 internal resonance; 18 regressor columns,
/// block diagonal (mode 1 uses columns 0..9, mode 2 columns 9..18).
pub fn make_cross_beam() -> PlantModel {
    // xi = (x1', x2', x1, x2)
    let mut cols = Vec::with_capacity(18);
    for row in 0..2 {
        cols.push(Monomial {
            row,
            powers: unit_powers(4, &[(row, 1)]),
        });
        cols.push(Monomial {
            row,
            powers: unit_powers(4, &[(2 + row, 1)]),
        });
        for (a, b) in CROSS_BEAM_MONOMIALS {
            cols.push(Monomial {
                row,
                powers: unit_powers(4, &[(2, a), (3, b)]),
            });
        }
    }
    let reg = Regressor::new(2, 2, RegressorKind::Polynomial { columns: cols }).expect("valid cross-beam regressor");
    PlantModel::new("cross_beam", reg, CROSS_BEAM.theta()).expect("valid cross-beam plant")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CantileverParams {
    pub zeta: [f64; 2],
    pub omega: [f64; 2],
    pub spring_stiffness: f64,
    pub spring_length: f64,
    pub mechanism: TipMechanism,
}

pub const CANTILEVER: CantileverParams = CantileverParams {
    zeta: [0.01, 0.01],
    omega: [67.395, 235.783],
    spring_stiffness: 910.0,
    spring_length: 0.018,
    mechanism: TipMechanism {
        phi: [[-0.1603, -0.6821], [-1.7748, -4.4598], [-5.9745, 6.1940], [-6.1389, 7.0245]],
        half_span: 0.019,
    },
};

impl CantileverParams {
    /// Restoring force of the tip springs at tip deflection `d`.
    pub fn spring_force(&self, d: f64) -> f64 {
        2.0 * self.spring_stiffness * self.spring_length * self.mechanism.shape(d)
    }

    pub fn theta(&self) -> Vec<f64> {
        let c = 2.0 * self.spring_stiffness * self.spring_length;
        let phi4 = self.mechanism.phi[3];
        vec![
            -2.0 * self.zeta[0] * self.omega[0],
            -2.0 * self.zeta[1] * self.omega[1],
            -self.omega[0] * self.omega[0],
            -self.omega[1] * self.omega[1],
            -c * phi4[0],
            -c * phi4[1],
        ]
    }

    /// `Phi^T` restricted to the two actuated points.
    pub fn forcing_gain(&self) -> Vec<Vec<f64>> {
        let phi = &self.mechanism.phi;
        vec![vec![phi[0][0], phi[1][0]], vec![phi[0][1], phi[1][1]]]
    }
}

/// Cantilever with a nonlinear spring mechanism at the tip. Excitation and
/// actuation act at the first two measurement points and reach the modal
/// equations through `Phi^T`.
pub fn make_cantilever() -> PlantModel {
    let reg = Regressor::new(2, 2, RegressorKind::Cantilever(CANTILEVER.mechanism.clone())).expect("valid cantilever regressor");
    PlantModel::new("cantilever", reg, CANTILEVER.theta())
        .and_then(|p| p.with_forcing_gain(CANTILEVER.forcing_gain()))
        .expect("valid cantilever plant")
}

pub fn builtin_plant(name: &str) -> Result<PlantModel> {
    match name {
        "duffing" => Ok(make_duffing()),
        "cross_beam" => Ok(make_cross_beam()),
        "cantilever" => Ok(make_cantilever()),
        _ => Err(Error::UnknownName {
            kind: "plant",
            name: name.to_string(),
        }),
    }
}
