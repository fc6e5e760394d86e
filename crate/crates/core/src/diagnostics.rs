//! Quantities computed from simulation traces: invasiveness, tracking
//! error, Lyapunov function, parameter error, excitation matrix and the
//! residual of a reference in the plant equation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::error::{check_len, Error, Result};
use crate::plant::{Excitation, PlantModel, Regressor};
use crate::reference::ReferenceTrajectory;
use crate::simulator::{Mode, Series, SimTrace, Simulation};

/// Indices of the samples in `[t_end - span - offset, t_end - offset]`.
fn window(trace: &SimTrace, span: f64, offset: f64) -> Result<std::ops::Range<usize>> {
    if !(span > 0.0) || trace.span() < 2.0 * span + offset - 1e-9 * span {
        return Err(Error::TraceTooShort {
            span: trace.span(),
            needed: 2.0 * span + offset,
        });
    }
    let t_end = trace.time[trace.len() - 1] - offset;
    let tol = 0.5 * trace.sample_dt();
    let start = trace.time.partition_point(|&t| t < t_end - span - tol);
    let end = trace.time.partition_point(|&t| t <= t_end + tol);
    Ok(start..end)
}

fn sup_inf_norm(series: &Series, range: std::ops::Range<usize>) -> f64 {
    range.map(|i| series.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()))).fold(0.0, f64::max)
}

/// `sup ||u'(t)||_inf` over the final forcing period.
pub fn invasiveness(trace: &SimTrace, period: f64) -> Result<f64> {
    invasiveness_at(trace, period, 0.0)
}

/// Like [`invasiveness`] for the window ending `offset` before the end.
pub fn invasiveness_at(trace: &SimTrace, period: f64, offset: f64) -> Result<f64> {
    Ok(sup_inf_norm(&trace.u, window(trace, period, offset)?))
}

/// `sup ||x(t) - x_r(t)||_inf` over the final forcing period.
pub fn tracking_error(trace: &SimTrace, period: f64) -> Result<f64> {
    let range = window(trace, period, 0.0)?;
    Ok(range
        .map(|i| trace.position_error(i).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0, f64::max))
}

/// Final-period sup norm of an arbitrary recorded series.
pub fn final_period_sup(trace: &SimTrace, series: &Series, period: f64) -> Result<f64> {
    Ok(sup_inf_norm(series, window(trace, period, 0.0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSeries {
    pub time: Vec<f64>,
    pub v: Vec<f64>,
    /// Fourth-order central difference of `v`; `NaN` at the two samples at
    /// each end.
    pub dv_dt: Vec<f64>,
    /// `-k z~^T z~`.
    pub predicted: Vec<f64>,
}

impl LyapunovSeries {
    /// Indices where `dv_dt` is defined.
    pub fn valid(&self) -> std::ops::Range<usize> {
        if self.v.len() < 5 {
            0..0
        } else {
            2..self.v.len() - 2
        }
    }

    pub fn max_dv_dt(&self) -> f64 {
        self.valid().map(|i| self.dv_dt[i]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_dv_dt(&self) -> f64 {
        self.valid().map(|i| self.dv_dt[i].abs()).fold(0.0, f64::max)
    }

    /// Largest `|dV/dt - predicted|`.
    pub fn max_mismatch(&self) -> f64 {
        self.valid().map(|i| (self.dv_dt[i] - self.predicted[i]).abs()).fold(0.0, f64::max)
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.v.windows(2).all(|w| w[1] <= w[0])
    }
}

/// `V = 1/2 z~^T z~ + 1/2 theta~^T S^-1 theta~` with the true parameters.
pub fn lyapunov_series(trace: &SimTrace, theta: &[f64], s: &DMatrix<f64>, k: f64) -> Result<LyapunovSeries> {
    if trace.meta.mode != Mode::ClosedLoop {
        return Err(Error::OpenLoopTrace);
    }
    let m = theta.len();
    check_len("parameter estimates", m, trace.theta_hat.width())?;
    let s_inv = s.clone().try_inverse().ok_or(Error::Singular("adaptation gain"))?;
    let n = trace.len();
    let mut v = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    for i in 0..n {
        let z = trace.z_tilde.row(i);
        let zz: f64 = z.iter().map(|a| a * a).sum();
        let tt = nalgebra::DVector::from_iterator(m, trace.theta_hat.row(i).iter().zip(theta).map(|(a, b)| a - b));
        v.push(0.5 * zz + 0.5 * tt.dot(&(&s_inv * &tt)));
        predicted.push(-k * zz);
    }
    let h = trace.sample_dt();
    let mut dv_dt = vec![f64::NAN; n];
    for i in 2..n.saturating_sub(2) {
        dv_dt[i] = (-v[i + 2] + 8.0 * v[i + 1] - 8.0 * v[i - 1] + v[i - 2]) / (12.0 * h);
    }
    Ok(LyapunovSeries {
        time: trace.time.clone(),
        v,
        dv_dt,
        predicted,
    })
}

/// `||theta_hat(t) - theta||_2` at every sample.
pub fn estimation_error(trace: &SimTrace, theta: &[f64]) -> Result<Vec<f64>> {
    check_len("parameter estimates", theta.len(), trace.theta_hat.width())?;
    Ok(trace
        .theta_hat
        .rows()
        .map(|r| r.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeSeries {
    /// Window start times.
    pub time: Vec<f64>,
    pub lambda_min: Vec<f64>,
    pub trace: Vec<f64>,
}

impl PeSeries {
    /// `lambda_min / (trace / m)` per window (zero where the trace is zero).
    pub fn relative(&self, m: usize) -> Vec<f64> {
        self.lambda_min
            .iter()
            .zip(&self.trace)
            .map(|(l, t)| if *t > 0.0 { l / (t / m as f64) } else { 0.0 })
            .collect()
    }
}

/// `M_e(t) = int_t^{t+s} F(xi)^T F(xi) dtau` by the trapezoidal rule on the
/// recorded samples, for window starts every `stride` samples.
pub fn pe_matrix_min_eig(trace: &SimTrace, regressor: &Regressor, window: f64, stride: usize) -> Result<PeSeries> {
    let m = regressor.param_count();
    let h = trace.sample_dt();
    let w = (window / h).round() as usize;
    if w == 0 || w >= trace.len() {
        return Err(Error::TraceTooShort {
            span: trace.span(),
            needed: window,
        });
    }
    check_len("trace state width", regressor.state_len(), trace.xi.width())?;
    let stride = stride.max(1);
    let mut f = DMatrix::zeros(regressor.dof(), m);
    let gram = |i: usize, f: &mut DMatrix<f64>| {
        regressor.eval_into(trace.xi.row(i), f);
        f.tr_mul(f)
    };
    let mut out = PeSeries {
        time: Vec::new(),
        lambda_min: Vec::new(),
        trace: Vec::new(),
    };
    let mut start = 0;
    while start + w < trace.len() {
        let mut me = DMatrix::zeros(m, m);
        for i in start..=start + w {
            let wt = if i == start || i == start + w { 0.5 * h } else { h };
            me += gram(i, &mut f) * wt;
        }
        let lmin = if m == 0 {
            0.0
        } else {
            SymmetricEigen::new(me.clone()).eigenvalues.min()
        };
        out.time.push(trace.time[start]);
        out.lambda_min.push(lmin);
        out.trace.push(me.trace());
        start += stride;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResidual {
    pub time: Vec<f64>,
    pub delta: Series,
    pub sup: f64,
}

/// `Delta(t) = x_r^(n)(t) - F(xi_r(t)) theta - sigma(t)` on `samples` points
/// over one period.
pub fn reference_residual(plant: &PlantModel, excitation: &Excitation, reference: &ReferenceTrajectory, samples: usize) -> Result<ReferenceResidual> {
    let p = plant.dof();
    check_len("reference channels", p, reference.dof())?;
    check_len("reference order", plant.order(), reference.order())?;
    let period = 2.0 * PI / reference.omega();
    let samples = samples.max(1);
    let zero_u = vec![0.0; p];
    let mut f = DMatrix::zeros(p, plant.param_count());
    let mut rhs = vec![0.0; plant.state_len()];
    let mut xi = vec![0.0; plant.state_len()];
    let mut delta = Series::new(p);
    let mut time = Vec::with_capacity(samples);
    let mut sup = 0.0f64;
    for j in 0..samples {
        let t = period * j as f64 / samples as f64;
        reference.eval_into(t, &mut xi);
        plant.rhs_into(&xi, &zero_u, &mut f, &mut rhs);
        let sigma = plant.forcing(excitation, t);
        let top = reference.top_derivative(t);
        let d: Vec<f64> = (0..p).map(|i| top[i] - rhs[i] - sigma[i]).collect();
        sup = d.iter().fold(sup, |m, v| m.max(v.abs()));
        delta.push(&d);
        time.push(t);
    }
    Ok(ReferenceResidual { time, delta, sup })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterErrorSummary {
    pub initial: f64,
    pub final_value: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub period: f64,
    pub invasiveness: f64,
    pub tracking_error: f64,
    pub z_tilde: f64,
    pub y: f64,
    pub phi_final: f64,
    pub parameter_error: Option<ParameterErrorSummary>,
    /// `V` never increased between samples.
    pub lyapunov_nonincreasing: Option<bool>,
    pub lyapunov_max_dv_dt: Option<f64>,
    /// Smallest `lambda_min(M_e)` over windows in the final half of the run.
    pub pe_min_eig: Option<f64>,
    /// Largest `lambda_min / (trace / m)` over the same windows.
    pub pe_relative: Option<f64>,
    pub reference_residual: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Computes every metric that applies to `trace` produced by `sim`.
pub fn metrics_report(trace: &SimTrace, sim: &Simulation, with_pe: bool) -> Result<MetricsReport> {
    let period = trace.meta.period;
    let closed = trace.meta.mode == Mode::ClosedLoop;
    let theta = sim.plant.true_theta();
    let params: Option<&ControllerParams> = sim.params.as_ref();
    let parameter_error = if closed && theta.len() == trace.theta_hat.width() {
        let e = estimation_error(trace, theta)?;
        Some(ParameterErrorSummary {
            initial: e[0],
            final_value: e[e.len() - 1],
            min: e.iter().copied().fold(f64::INFINITY, f64::min),
            max: e.iter().copied().fold(0.0, f64::max),
        })
    } else {
        None
    };
    let lyap = match (closed, params) {
        (true, Some(par)) if theta.len() == trace.theta_hat.width() => Some(lyapunov_series(trace, theta, par.s(), par.k())?),
        _ => None,
    };
    let pe = if closed && with_pe {
        let series = pe_matrix_min_eig(trace, &sim.controller_regressor, period, ((period / trace.sample_dt()) as usize / 8).max(1))?;
        let half = trace.time[trace.len() / 2];
        let m = sim.controller_regressor.param_count();
        let rel = series.relative(m);
        let idx: Vec<usize> = (0..series.time.len()).filter(|&i| series.time[i] >= half).collect();
        Some((
            idx.iter().map(|&i| series.lambda_min[i]).fold(f64::INFINITY, f64::min),
            idx.iter().map(|&i| rel[i]).fold(f64::NEG_INFINITY, f64::max),
        ))
    } else {
        None
    };
    let reference_residual = match &sim.reference {
        Some(r) => Some(reference_residual(&sim.plant, &sim.excitation, r, 512)?.sup),
        None => None,
    };
    Ok(MetricsReport {
        period,
        invasiveness: invasiveness(trace, period)?,
        tracking_error: tracking_error(trace, period)?,
        z_tilde: final_period_sup(trace, &trace.z_tilde, period)?,
        y: final_period_sup(trace, &trace.y, period)?,
        phi_final: trace.phi[trace.len() - 1],
        parameter_error,
        lyapunov_nonincreasing: lyap.as_ref().map(LyapunovSeries::is_nonincreasing),
        lyapunov_max_dv_dt: lyap.as_ref().map(LyapunovSeries::max_dv_dt),
        pe_min_eig: pe.map(|v| v.0),
        pe_relative: pe.map(|v| v.1),
        reference_residual,
    })
}
