//! Closed- and open-loop simulation of plant + controller + excitation.
//!
//! The augmented state integrated by RK4 is `[xi | I | phi | theta_hat]`;
//! the controller is evaluated at every stage. In open loop only `xi` is
//! integrated and `u' = 0`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controller::{saturate, ControllerParams};
use crate::error::{check_len, Error, Result};
use crate::integrate::Rk4;
use crate::plant::{Excitation, PlantModel, Regressor};
use crate::reference::ReferenceTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    ClosedLoop,
    OpenLoop,
}

/// Row-major storage of fixed-width samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    width: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(width: usize) -> Self {
        Self { width, data: Vec::new() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.width);
        self.data.extend_from_slice(row);
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.width.max(1)).take(self.len())
    }

    /// Values of one column.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario_hash: String,
    pub plant: String,
    pub integrator: String,
    pub dt: f64,
    pub record_every: usize,
    pub mode: Mode,
    pub order: usize,
    pub dof: usize,
    pub param_count: usize,
    /// Forcing period `2 pi / omega` (infinite for zero excitation).
    pub period: f64,
}

/// Uniformly sampled record of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub time: Vec<f64>,
    pub xi: Series,
    pub xi_ref: Series,
    pub u: Series,
    pub eta: Series,
    pub y: Series,
    pub z_tilde: Series,
    pub theta_hat: Series,
    pub phi: Vec<f64>,
    pub sigma: Series,
}

impl SimTrace {
    fn new(meta: TraceMeta) -> Self {
        let (n, p, m) = (meta.order, meta.dof, meta.param_count);
        let m = if meta.mode == Mode::ClosedLoop { m } else { 0 };
        Self {
            meta,
            time: Vec::new(),
            xi: Series::new(n * p),
            xi_ref: Series::new(n * p),
            u: Series::new(p),
            eta: Series::new(p),
            y: Series::new(p),
            z_tilde: Series::new(p),
            theta_hat: Series::new(m),
            phi: Vec::new(),
            sigma: Series::new(p),
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Sampling interval of the recorded grid.
    pub fn sample_dt(&self) -> f64 {
        self.meta.dt * self.meta.record_every as f64
    }

    pub fn span(&self) -> f64 {
        match (self.time.first(), self.time.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Position tracking error `x - x_r` at sample `i`.
    pub fn position_error(&self, i: usize) -> Vec<f64> {
        let p = self.meta.dof;
        let off = (self.meta.order - 1) * p;
        (0..p).map(|j| self.xi.row(i)[off + j] - self.xi_ref.row(i)[off + j]).collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        let (n, p, m) = (self.meta.order, self.meta.dof, self.theta_hat.width());
        let state_names = |prefix: &str| -> Vec<String> {
            let mut v = Vec::new();
            for block in 0..n {
                let d = n - 1 - block;
                for i in 1..=p {
                    v.push(if d == 0 { format!("{prefix}{i}") } else { format!("{prefix}{i}_d{d}") });
                }
            }
            v
        };
        let indexed = |prefix: &'static str, k: usize| (1..=k).map(move |i| format!("{prefix}{i}"));
        let mut cols = vec!["t".to_string()];
        cols.extend(state_names("x"));
        cols.extend(state_names("xr"));
        cols.extend(indexed("u", p));
        cols.extend(indexed("eta", p));
        cols.extend(indexed("y", p));
        cols.extend(indexed("ztilde", p));
        cols.extend(indexed("theta_hat", m));
        cols.push("phi".into());
        cols.extend(indexed("sigma", p));
        cols
    }

    /// One row per recorded sample, header from [`SimTrace::column_names`].
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.column_names())?;
        let mut row = Vec::new();
        for i in 0..self.len() {
            row.clear();
            row.push(self.time[i]);
            for s in [&self.xi, &self.xi_ref, &self.u, &self.eta, &self.y, &self.z_tilde, &self.theta_hat] {
                row.extend_from_slice(s.row(i));
            }
            row.push(self.phi[i]);
            row.extend_from_slice(self.sigma.row(i));
            wr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordOptions {
    pub every: usize,
    /// Samples before this time are not stored.
    pub from: f64,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self { every: 1, from: 0.0 }
    }
}

/// A fully resolved, validated simulation setup.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub plant: PlantModel,
    /// What the controller believes `F` to be (possibly masked).
    pub controller_regressor: Regressor,
    pub excitation: Excitation,
    pub reference: Option<ReferenceTrajectory>,
    pub params: Option<ControllerParams>,
    pub initial_state: Vec<f64>,
    pub phi0: f64,
    pub theta_hat0: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub mode: Mode,
    pub record: RecordOptions,
    pub hash: String,
}

impl Simulation {
    pub fn t_end(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let plant = &self.plant;
        check_len("initial state", plant.state_len(), self.initial_state.len())?;
        check_len("excitation channels", plant.excitation_channels(), self.excitation.channels())?;
        self.excitation.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidScenario(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidScenario("t_end must be at least dt".into()));
        }
        if self.record.every == 0 {
            return Err(Error::InvalidScenario("record_every must be positive".into()));
        }
        if let Some(r) = &self.reference {
            check_len("reference channels", plant.dof(), r.dof())?;
            check_len("reference order", plant.order(), r.order())?;
        }
        if self.mode == Mode::ClosedLoop {
            let params = self
                .params
                .as_ref()
                .ok_or_else(|| Error::InvalidScenario("closed loop requires controller parameters".into()))?;
            if self.reference.is_none() {
                return Err(Error::InvalidScenario("closed loop requires a reference".into()));
            }
            params.check_compatible(&self.controller_regressor)?;
            check_len("controller regressor dof", plant.dof(), self.controller_regressor.dof())?;
            check_len("theta_hat(0)", self.controller_regressor.param_count(), self.theta_hat0.len())?;
        }
        Ok(())
    }

    /// Same setup with a different reference.
    pub fn with_reference(&self, reference: ReferenceTrajectory) -> Self {
        Self {
            reference: Some(reference),
            ..self.clone()
        }
    }

    pub fn run(&self) -> Result<SimTrace> {
        self.validate()?;
        match self.mode {
            Mode::ClosedLoop => self.run_closed_loop(),
            Mode::OpenLoop => self.run_open_loop(),
        }
    }

    fn meta(&self) -> TraceMeta {
        TraceMeta {
            scenario_hash: self.hash.clone(),
            plant: self.plant.name.clone(),
            integrator: "rk4".into(),
            dt: self.dt,
            record_every: self.record.every,
            mode: self.mode,
            order: self.plant.order(),
            dof: self.plant.dof(),
            param_count: self.controller_regressor.param_count(),
            period: if self.excitation.is_zero() { f64::INFINITY } else { self.excitation.period() },
        }
    }

    fn should_record(&self, i: usize, t: f64) -> bool {
        i.is_multiple_of(self.record.every) && t >= self.record.from - 0.5 * self.dt
    }

    fn run_open_loop(&self) -> Result<SimTrace> {
        let plant = &self.plant;
        let (np, p) = (plant.state_len(), plant.dof());
        let mut trace = SimTrace::new(self.meta());
        let mut f = DMatrix::zeros(p, plant.param_count());
        let mut raw = vec![0.0; self.excitation.channels()];
        let mut sigma = vec![0.0; p];
        let mut xi_ref = vec![0.0; np];
        let zeros = vec![0.0; p];
        let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            self.excitation.eval_into(t, &mut raw);
            plant.map_forcing(&raw, &mut sigma);
            plant.rhs_into(y, &sigma, &mut f, dy);
        };
        let mut rk = Rk4::new(np);
        let mut y = self.initial_state.clone();
        for i in 0..=self.steps {
            let t = i as f64 * self.dt;
            if self.should_record(i, t) {
                let sig = plant.forcing(&self.excitation, t);
                if let Some(r) = &self.reference {
                    r.eval_into(t, &mut xi_ref);
                }
                trace.time.push(t);
                trace.xi.push(&y);
                trace.xi_ref.push(&xi_ref);
                for s in [&mut trace.u, &mut trace.eta, &mut trace.y, &mut trace.z_tilde] {
                    s.push(&zeros);
                }
                trace.theta_hat.push(&[]);
                trace.phi.push(0.0);
                trace.sigma.push(&sig);
            }
            if i == self.steps {
                break;
            }
            rk.step(&mut rhs, t, &mut y, self.dt);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    time: t + self.dt,
                    trace: Box::new(trace),
                });
            }
        }
        Ok(trace)
    }

    fn run_closed_loop(&self) -> Result<SimTrace> {
        let reference = self.reference.as_ref().expect("validated");
        let params = self.params.as_ref().expect("validated");
        let mut sys = ClosedLoop::new(&self.plant, &self.controller_regressor, &self.excitation, reference, params);
        let mut trace = SimTrace::new(self.meta());
        let mut y = sys.initial_state(&self.initial_state, self.phi0, &self.theta_hat0);
        let mut slope = vec![0.0; y.len()];
        let mut rk = Rk4::new(y.len());
        for i in 0..=self.steps {
            let t = i as f64 * self.dt;
            sys.rhs(t, &y, &mut slope);
            if self.should_record(i, t) {
                sys.record(t, &y, &mut trace);
            }
            if i == self.steps {
                break;
            }
            rk.step_with_slope(&mut |t, y, d| sys.rhs(t, y, d), t, &mut y, self.dt, &slope);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    time: t + self.dt,
                    trace: Box::new(trace),
                });
            }
        }
        Ok(trace)
    }
}

/// Closed-loop right-hand side with preallocated scratch space. After
/// [`ClosedLoop::rhs`] the intermediate signals of that evaluation are
/// available in the struct.
struct ClosedLoop<'a> {
    plant: &'a PlantModel,
    regressor: &'a Regressor,
    excitation: &'a Excitation,
    reference: &'a ReferenceTrajectory,
    params: &'a ControllerParams,
    n: usize,
    p: usize,
    m: usize,
    xi_ref: Vec<f64>,
    raw: Vec<f64>,
    sigma: Vec<f64>,
    f_true: DMatrix<f64>,
    f_xi: DMatrix<f64>,
    f_ref: DMatrix<f64>,
    e: Vec<f64>,
    y: Vec<f64>,
    eta: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    diff: Vec<f64>,
    ftz: Vec<f64>,
}

impl<'a> ClosedLoop<'a> {
    fn new(plant: &'a PlantModel, regressor: &'a Regressor, excitation: &'a Excitation, reference: &'a ReferenceTrajectory, params: &'a ControllerParams) -> Self {
        let (n, p, m) = (plant.order(), plant.dof(), regressor.param_count());
        Self {
            plant,
            regressor,
            excitation,
            reference,
            params,
            n,
            p,
            m,
            xi_ref: vec![0.0; n * p],
            raw: vec![0.0; excitation.channels()],
            sigma: vec![0.0; p],
            f_true: DMatrix::zeros(p, plant.param_count()),
            f_xi: DMatrix::zeros(p, m),
            f_ref: DMatrix::zeros(p, m),
            e: vec![0.0; n * p],
            y: vec![0.0; p],
            eta: vec![0.0; p],
            z: vec![0.0; p],
            u: vec![0.0; p],
            diff: vec![0.0; p],
            ftz: vec![0.0; m],
        }
    }

    fn initial_state(&self, xi0: &[f64], phi0: f64, theta0: &[f64]) -> Vec<f64> {
        let mut y = xi0.to_vec();
        y.extend(std::iter::repeat_n(0.0, self.p));
        y.push(phi0);
        y.extend_from_slice(theta0);
        y
    }

    fn rhs(&mut self, t: f64, state: &[f64], out: &mut [f64]) {
        let (n, p, m) = (self.n, self.p, self.m);
        let np = n * p;
        let xi = &state[..np];
        let accum = &state[np..np + p];
        let phi = state[np + p];
        let th = &state[np + p + 1..];
        let par = self.params;
        let lambda = par.lambda();

        self.reference.eval_into(t, &mut self.xi_ref);
        self.excitation.eval_into(t, &mut self.raw);
        self.plant.map_forcing(&self.raw, &mut self.sigma);
        self.regressor.eval_into(xi, &mut self.f_xi);
        self.regressor.eval_into(&self.xi_ref, &mut self.f_ref);

        // e^(j) lives in block n-1-j of xi - xi_ref
        for j in 0..n {
            let block = n - 1 - j;
            for i in 0..p {
                self.e[j * p + i] = xi[block * p + i] - self.xi_ref[block * p + i];
            }
        }
        for i in 0..p {
            let mut yi = self.e[(n - 1) * p + i];
            for (j, l) in lambda.iter().enumerate() {
                yi += l * self.e[j * p + i];
            }
            self.y[i] = yi;
        }
        let mut g2 = 0.0;
        for i in 0..p {
            let mut d = 0.0;
            for (j, t) in th.iter().enumerate() {
                d += (self.f_xi[(i, j)] - self.f_ref[(i, j)]) * t;
            }
            self.diff[i] = d;
            g2 += d * d;
        }
        let g = g2.sqrt() + par.kappa();
        let initial_top = self.reference.initial_top_derivative();
        for i in 0..p {
            let mut eta = -phi * self.y[i] - g * saturate(self.y[i], par.epsilon());
            for (j, l) in lambda.iter().enumerate() {
                eta -= l * self.e[(j + 1) * p + i];
            }
            self.eta[i] = eta;
            self.z[i] = xi[i] - accum[i] - initial_top[i];
            self.u[i] = -par.k() * self.z[i] + eta;
        }

        // plant: x^(n) = F theta + sigma + u'
        for i in 0..p {
            self.diff[i] = self.sigma[i] + self.u[i];
        }
        self.plant.rhs_into(xi, &self.diff, &mut self.f_true, &mut out[..np]);

        // I' = F theta_hat + sigma + eta
        for i in 0..p {
            let mut acc = self.sigma[i] + self.eta[i];
            for (j, t) in th.iter().enumerate() {
                acc += self.f_xi[(i, j)] * t;
            }
            out[np + i] = acc;
        }
        out[np + p] = par.gamma() * self.y.iter().map(|v| v * v).sum::<f64>();
        // theta_hat' = S F^T z~
        for j in 0..m {
            self.ftz[j] = (0..p).map(|i| self.f_xi[(i, j)] * self.z[i]).sum();
        }
        let s = par.s();
        for r in 0..m {
            let mut acc = 0.0;
            for c in 0..m {
                acc += s[(r, c)] * self.ftz[c];
            }
            out[np + p + 1 + r] = acc;
        }
    }

    /// Stores the signals of the most recent `rhs` evaluation.
    fn record(&self, t: f64, state: &[f64], trace: &mut SimTrace) {
        let np = self.n * self.p;
        trace.time.push(t);
        trace.xi.push(&state[..np]);
        trace.xi_ref.push(&self.xi_ref);
        trace.u.push(&self.u);
        trace.eta.push(&self.eta);
        trace.y.push(&self.y);
        trace.z_tilde.push(&self.z);
        trace.theta_hat.push(&state[np + self.p + 1..]);
        trace.phi.push(state[np + self.p]);
        trace.sigma.push(&self.sigma);
    }
}

/// Controller-side regressor with masked columns zeroed; the plant keeps
/// its full regressor.
pub fn apply_regressor_mask(plant: &PlantModel, mask: &[bool]) -> Result<Regressor> {
    plant.regressor().masked(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{control_input, ControllerState};
    use crate::plant::{make_cross_beam, make_duffing, CROSS_BEAM_CROSS_TERMS};
    use crate::reference::{builtin_reference, FourierSignal};

    fn duffing_sim(reference: ReferenceTrajectory, xi0: Vec<f64>, steps: usize) -> Simulation {
        let plant = make_duffing();
        Simulation {
            controller_regressor: plant.regressor().clone(),
            plant,
            excitation: Excitation::cosine(2.515, vec![0.15]),
            reference: Some(reference),
            params: Some(ControllerParams::with_scalar_gain(1.0, 1.0, 1.0, 0.1, 2.0, 3, vec![1.0]).unwrap()),
            initial_state: xi0,
            phi0: 0.0,
            theta_hat0: vec![0.0; 3],
            dt: 2.0 * std::f64::consts::PI / 2.515 / 2000.0,
            steps,
            mode: Mode::ClosedLoop,
            record: RecordOptions::default(),
            hash: "test".into(),
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let mut sim = duffing_sim(ReferenceTrajectory::new(FourierSignal::zero(2.515, 1), 2), vec![0.0, 0.0], 500);
        sim.excitation = Excitation::zero(1);
        let tr = sim.run().unwrap();
        assert!(tr.xi.rows().all(|r| r.iter().all(|v| *v == 0.0)));
        assert!(tr.u.rows().all(|r| r[0] == 0.0));
    }

    #[test]
    fn logged_signals_match_controller_law() {
        let sim = duffing_sim(builtin_reference("duffing").unwrap(), vec![0.0, -1.0], 400);
        let tr = sim.run().unwrap();
        let reference = sim.reference.as_ref().unwrap();
        let params = sim.params.as_ref().unwrap();
        for i in [0, 1, 57, 399] {
            let xi = tr.xi.row(i);
            let xi_r = tr.xi_ref.row(i);
            // recover I from z~ = x' - I - x_r'(0)
            let accum = vec![xi[0] - tr.z_tilde.row(i)[0] - reference.initial_top_derivative()[0]];
            let st = ControllerState {
                accum,
                phi: tr.phi[i],
                theta_hat: tr.theta_hat.row(i).to_vec(),
            };
            let out = control_input(params, &sim.controller_regressor, &st, xi, xi_r, reference.initial_top_derivative()).unwrap();
            assert!((out.u[0] - tr.u.row(i)[0]).abs() <= 1e-12 * (1.0 + out.u[0].abs()));
            assert!((out.y[0] - tr.y.row(i)[0]).abs() <= 1e-12);
            assert_eq!(tr.u.row(i)[0], -params.k() * tr.z_tilde.row(i)[0] + tr.eta.row(i)[0]);
        }
    }

    #[test]
    fn validation_errors() {
        let mut sim = duffing_sim(builtin_reference("duffing").unwrap(), vec![0.0, -1.0], 10);
        sim.dt = 0.0;
        assert!(matches!(sim.run(), Err(Error::InvalidScenario(_))));
        let mut sim = duffing_sim(builtin_reference("duffing").unwrap(), vec![0.0], 10);
        assert!(matches!(sim.run(), Err(Error::Dimension { .. })));
        sim.initial_state = vec![0.0, 0.0];
        sim.reference = None;
        assert!(sim.run().is_err());
    }

    #[test]
    fn divergence_is_reported_with_partial_trace() {
        let plant = make_duffing().with_theta(vec![0.0, 0.0, 5.0]).unwrap();
        let mut sim = duffing_sim(builtin_reference("duffing").unwrap(), vec![0.0, 3.0], 100_000);
        sim.plant = plant;
        sim.mode = Mode::OpenLoop;
        match sim.run() {
            Err(Error::Diverged { time, trace }) => {
                assert!(time > 0.0 && time < sim.t_end());
                assert!(!trace.is_empty());
                assert!(trace.xi.rows().all(|r| r.iter().all(|v| v.is_finite())));
            }
            other => panic!("expected divergence, got {:?}", other.map(|t| t.len())),
        }
    }

    #[test]
    fn masks() {
        let plant = make_cross_beam();
        let all = apply_regressor_mask(&plant, &[true; 18]).unwrap();
        let xi = [0.1, -0.2, 0.3, 0.4];
        assert_eq!(all.eval(&xi).unwrap(), plant.eval_regressor(&xi).unwrap());
        let mut mask = [true; 18];
        for j in CROSS_BEAM_CROSS_TERMS {
            mask[j] = false;
        }
        let partial = apply_regressor_mask(&plant, &mask).unwrap();
        let f = partial.eval(&xi).unwrap();
        for j in CROSS_BEAM_CROSS_TERMS {
            assert!(f.column(j).iter().all(|v| *v == 0.0));
        }
        // the true plant is untouched
        assert!(plant.eval_regressor(&xi).unwrap().column(3).iter().any(|v| *v != 0.0));
        let none = apply_regressor_mask(&plant, &[false; 18]).unwrap();
        assert!(none.eval(&xi).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn record_options_decimate() {
        let mut sim = duffing_sim(builtin_reference("duffing").unwrap(), vec![0.0, -1.0], 100);
        sim.record = RecordOptions { every: 10, from: 50.0 * sim.dt };
        let tr = sim.run().unwrap();
        assert_eq!(tr.len(), 6);
        assert!((tr.time[0] - 50.0 * sim.dt).abs() < 1e-12);
        assert!((tr.sample_dt() - 10.0 * sim.dt).abs() < 1e-15);
    }

    #[test]
    fn csv_header_and_rows() {
        let tr = duffing_sim(builtin_reference("duffing").unwrap(), vec![0.0, -1.0], 3).run().unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let txt = String::from_utf8(buf).unwrap();
        let mut lines = txt.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x1_d1,x1,xr1_d1,xr1,u1,eta1,y1,ztilde1,theta_hat1,theta_hat2,theta_hat3,phi,sigma1"
        );
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert_eq!(first[2], -1.0);
        assert_eq!(txt.lines().count(), 5);
    }
}
