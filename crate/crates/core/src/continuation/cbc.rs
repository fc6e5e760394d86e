//! The control-based continuation zero-problem: find reference Fourier
//! coefficients for which the steady-state control input has no component
//! on harmonics `0..=h`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuation::hb::solve;
use crate::error::{check_len, Error, Result};
use crate::reference::{project_samples, FourierSignal, ReferenceTrajectory};
use crate::simulator::{Mode, RecordOptions, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbcOptions {
    pub harmonics: usize,
    /// Target for the largest projected control coefficient.
    pub tol: f64,
    pub max_iter: usize,
    /// Forcing periods simulated per evaluation; the last one is measured.
    pub settle_periods: usize,
    pub steps_per_period: usize,
    /// Largest relative change of the response between the last two
    /// periods for the run to count as steady.
    pub steady_tol: f64,
    pub fd_rel_step: f64,
    pub fd_min_step: f64,
    pub max_halvings: usize,
    pub parallel: bool,
}

impl Default for CbcOptions {
    fn default() -> Self {
        Self {
            harmonics: 7,
            tol: 1e-6,
            max_iter: 15,
            settle_periods: 120,
            steps_per_period: 2000,
            steady_tol: 1e-3,
            fd_rel_step: 1e-3,
            fd_min_step: 1e-6,
            max_halvings: 8,
            parallel: true,
        }
    }
}

/// Steady-state measurement for one candidate reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CbcMeasurement {
    /// Projection of `u'` over the final period.
    pub control: Vec<f64>,
    /// Projection of the measured displacement over the final period.
    pub response: Vec<f64>,
}

impl CbcMeasurement {
    pub fn control_norm(&self) -> f64 {
        self.control.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct CbcResult {
    pub reference: ReferenceTrajectory,
    /// Newton iterations taken (fixed-point fallbacks included).
    pub iterations: usize,
    /// Largest projected control coefficient at the solution.
    pub residual: f64,
    pub history: Vec<f64>,
    pub simulations: usize,
}

/// Simulates `template` with `signal` as reference from the reference's own
/// initial state, zero parameter estimates and `phi = 0`, and projects the
/// final period.
pub fn cbc_measure(template: &Simulation, signal: &FourierSignal, opts: &CbcOptions) -> Result<CbcMeasurement> {
    let p = template.plant.dof();
    let n = template.plant.order();
    let h = opts.harmonics;
    let reference = ReferenceTrajectory::new(signal.clone(), n);
    let period = signal.period();
    let spp = opts.steps_per_period;
    let mut sim = template.with_reference(reference.clone());
    sim.mode = Mode::ClosedLoop;
    sim.initial_state = reference.eval(0.0);
    sim.theta_hat0 = vec![0.0; template.controller_regressor.param_count()];
    sim.phi0 = 0.0;
    sim.dt = period / spp as f64;
    sim.steps = opts.settle_periods * spp;
    sim.record = RecordOptions {
        every: 1,
        from: (opts.settle_periods as f64 - 2.0) * period,
    };
    let trace = sim.run()?;
    let len = trace.len();
    if len < 2 * spp + 1 {
        return Err(Error::TraceTooShort {
            span: trace.span(),
            needed: 2.0 * period,
        });
    }
    let last = len - 1 - spp..len - 1;
    let off = (n - 1) * p;
    let x = |i: usize| trace.xi.row(i)[off..off + p].to_vec();
    let mut drift = 0.0f64;
    let mut amp = 0.0f64;
    for i in last.clone() {
        let (a, b) = (x(i), x(i - spp));
        for j in 0..p {
            drift = drift.max((a[j] - b[j]).abs());
            amp = amp.max(a[j].abs());
        }
    }
    if drift > opts.steady_tol * amp.max(f64::MIN_POSITIVE) {
        return Err(Error::NoConvergence {
            solver: "steady state",
            iterations: opts.settle_periods,
            residual: drift,
        });
    }
    let u: Vec<Vec<f64>> = last.clone().map(|i| trace.u.row(i).to_vec()).collect();
    let xs: Vec<Vec<f64>> = last.map(x).collect();
    check_len("control channels", p, trace.u.width())?;
    Ok(CbcMeasurement {
        control: project_samples(&u, p, h),
        response: project_samples(&xs, p, h),
    })
}

/// Newton iteration on the projected control input with a forward-difference
/// Jacobian, one simulation per column. When a Newton step cannot reduce the
/// residual the reference is replaced by the measured response.
pub fn cbc_solve(template: &Simulation, initial: &FourierSignal, opts: &CbcOptions) -> Result<CbcResult> {
    let p = template.plant.dof();
    check_len("reference channels", p, initial.channel_count())?;
    if template.params.is_none() {
        return Err(Error::InvalidScenario("control-based continuation needs controller parameters".into()));
    }
    let h = opts.harmonics;
    let omega = initial.omega;
    let to_signal = |c: &[f64]| FourierSignal::from_coefficients(omega, p, h, c);
    let measure = |c: &[f64]| -> Result<CbcMeasurement> { cbc_measure(template, &to_signal(c)?, opts) };

    let mut c = initial.to_coefficients(h);
    let mut m = measure(&c)?;
    let mut simulations = 1;
    let mut history = vec![m.control_norm()];
    let mut iterations = 0;
    while m.control_norm() > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NoConvergence {
                solver: "control-based continuation",
                iterations,
                residual: m.control_norm(),
            });
        }
        iterations += 1;
        let steps: Vec<f64> = c.iter().map(|v| (opts.fd_rel_step * v.abs()).max(opts.fd_min_step)).collect();
        let column = |j: usize| -> Result<Vec<f64>> {
            let mut cp = c.clone();
            cp[j] += steps[j];
            let mp = measure(&cp)?;
            Ok(mp.control.iter().zip(&m.control).map(|(a, b)| (a - b) / steps[j]).collect())
        };
        let cols: Vec<Vec<f64>> = if opts.parallel {
            (0..c.len()).into_par_iter().map(column).collect::<Result<_>>()?
        } else {
            (0..c.len()).map(column).collect::<Result<_>>()?
        };
        simulations += c.len();
        let nc = c.len();
        let jac = nalgebra::DMatrix::from_fn(nc, nc, |r, k| cols[k][r]);
        let neg: Vec<f64> = m.control.iter().map(|v| -v).collect();
        let mut next = None;
        if let Ok(dc) = solve(jac, &neg, "control-based continuation") {
            let mut lam = 1.0;
            for _ in 0..=opts.max_halvings {
                let ct: Vec<f64> = c.iter().zip(&dc).map(|(a, d)| a + lam * d).collect();
                simulations += 1;
                if let Ok(mt) = measure(&ct) {
                    if mt.control_norm() < m.control_norm() {
                        next = Some((ct, mt));
                        break;
                    }
                }
                lam *= 0.5;
            }
        }
        let (cn, mn) = match next {
            Some(v) => v,
            None => {
                log::info!("control-based continuation: Newton step failed, using measured response");
                let ct = m.response.clone();
                simulations += 1;
                let mt = measure(&ct)?;
                (ct, mt)
            }
        };
        c = cn;
        m = mn;
        history.push(m.control_norm());
        log::debug!("control-based continuation iteration {iterations}: residual {:e}", m.control_norm());
    }
    Ok(CbcResult {
        reference: ReferenceTrajectory::new(to_signal(&c)?, template.plant.order()),
        iterations,
        residual: m.control_norm(),
        history,
        simulations,
    })
}
