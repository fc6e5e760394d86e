//! Pseudo-arclength continuation of harmonic-balance orbits in forcing
//! frequency, with limit-point and Neimark-Sacker detection.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::continuation::hb::{fd_jacobian, norm, orbit_from_coeffs, residual_coeffs, solve, Grid, PeriodicOrbit};
use crate::error::{check_len, Error, Result};
use crate::plant::{Excitation, PlantModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchOptions {
    pub omega_min: f64,
    pub omega_max: f64,
    /// Initial, smallest and largest arclength step in scaled variables.
    pub ds: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    /// Residual tolerance of the corrector.
    pub tol: f64,
    pub max_corrector_iter: usize,
    /// Target width of the bracketing omega interval of an event.
    pub omega_resolution: f64,
    pub max_bisections: usize,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self {
            omega_min: 0.0,
            omega_max: f64::INFINITY,
            ds: 0.02,
            ds_min: 1e-6,
            ds_max: 0.1,
            max_steps: 2000,
            tol: 1e-10,
            max_corrector_iter: 10,
            omega_resolution: 1e-3,
            max_bisections: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LimitPoint,
    NeimarkSacker,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::LimitPoint => "LP",
            EventKind::NeimarkSacker => "NS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEvent {
    pub kind: EventKind,
    /// The event lies between orbits `index` and `index + 1`.
    pub index: usize,
    pub omega_low: f64,
    pub omega_high: f64,
}

impl BranchEvent {
    pub fn omega(&self) -> f64 {
        0.5 * (self.omega_low + self.omega_high)
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub orbits: Vec<PeriodicOrbit>,
    pub events: Vec<BranchEvent>,
    /// Why each end of the branch stopped (low-omega end first).
    pub termination: Vec<String>,
}

impl Branch {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.orbits.iter().map(|o| o.omega).collect()
    }

    /// One row per orbit: omega, per DOF mean and harmonic amplitudes, max
    /// displacement, stability, largest multiplier modulus and event label of
    /// an event starting at that orbit.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let (p, h) = match self.orbits.first() {
            Some(o) => (o.fourier.channel_count(), o.harmonics()),
            None => (0, 0),
        };
        let mut header = vec!["omega".to_string()];
        for i in 1..=p {
            header.push(format!("x{i}_mean"));
            header.extend((1..=h).map(|k| format!("x{i}_amp{k}")));
            header.push(format!("x{i}_max"));
        }
        header.extend(["stable", "max_multiplier", "event"].map(String::from));
        wr.write_record(&header)?;
        for (idx, o) in self.orbits.iter().enumerate() {
            let mut row = vec![o.omega.to_string()];
            let maxd = o.max_displacement();
            for (i, ch) in o.fourier.channels.iter().enumerate() {
                let ch = ch.clone();
                row.push(ch.a0.to_string());
                for k in 0..h {
                    let a = ch.cos.get(k).copied().unwrap_or(0.0);
                    let b = ch.sin.get(k).copied().unwrap_or(0.0);
                    row.push(a.hypot(b).to_string());
                }
                row.push(maxd[i].to_string());
            }
            row.push(o.stable.to_string());
            row.push(o.max_multiplier().to_string());
            let ev: Vec<&str> = self.events.iter().filter(|e| e.index == idx).map(|e| e.kind.label()).collect();
            row.push(ev.join("+"));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Continuation in scaled variables `X = (c / c_scale, omega / omega_scale)`.
struct Continuer<'a> {
    plant: &'a PlantModel,
    excitation: &'a Excitation,
    grid: Grid,
    h: usize,
    c_scale: f64,
    w_scale: f64,
    opts: BranchOptions,
}

#[derive(Debug, Clone)]
struct Point {
    x: Vec<f64>,
    tangent: Vec<f64>,
    orbit: PeriodicOrbit,
}

impl<'a> Continuer<'a> {
    fn unscale(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let n = x.len() - 1;
        (x[..n].iter().map(|v| v * self.c_scale).collect(), x[n] * self.w_scale)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let (c, w) = self.unscale(x);
        residual_coeffs(self.plant, self.excitation, &self.grid, &c, w)
    }

    fn jacobian(&self, x: &[f64], r0: &[f64]) -> DMatrix<f64> {
        let mut f = |y: &[f64]| self.residual(y);
        fd_jacobian(&mut f, x, r0, |_, v| 1e-7 * v.abs().max(1.0))
    }

    /// Unit null vector of the residual Jacobian oriented along `prev`.
    fn tangent(&self, x: &[f64], r0: &[f64], prev: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let jac = self.jacobian(x, r0);
        let mut aug = DMatrix::zeros(n, n);
        aug.rows_mut(0, n - 1).copy_from(&jac);
        for j in 0..n {
            aug[(n - 1, j)] = prev[j];
        }
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = 1.0;
        let t = solve(aug, &rhs, "continuation tangent")?;
        let tn = norm(&t);
        let dot: f64 = t.iter().zip(prev).map(|(a, b)| a * b).sum();
        let s = if dot < 0.0 { -1.0 / tn } else { 1.0 / tn };
        Ok(t.iter().map(|v| v * s).collect())
    }

    /// Newton on `R(X) = 0`, `t . (X - X_pred) = 0`.
    fn correct(&self, pred: &[f64], t: &[f64]) -> Option<(Vec<f64>, f64, usize)> {
        let n = pred.len();
        let mut x = pred.to_vec();
        for it in 0..=self.opts.max_corrector_iter {
            let r = self.residual(&x);
            let rn = norm(&r);
            if !rn.is_finite() {
                return None;
            }
            let arc: f64 = t.iter().zip(x.iter().zip(pred)).map(|(a, (b, c))| a * (b - c)).sum();
            if rn <= self.opts.tol && arc.abs() <= 1e-12 {
                return Some((x, rn, it));
            }
            if it == self.opts.max_corrector_iter {
                return None;
            }
            let jac = self.jacobian(&x, &r);
            let mut aug = DMatrix::zeros(n, n);
            aug.rows_mut(0, n - 1).copy_from(&jac);
            for j in 0..n {
                aug[(n - 1, j)] = t[j];
            }
            let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            rhs.push(-arc);
            let dx = solve(aug, &rhs, "continuation corrector").ok()?;
            for (a, d) in x.iter_mut().zip(&dx) {
                *a += d;
            }
        }
        None
    }

    fn point(&self, x: Vec<f64>, residual: f64, prev_tangent: &[f64]) -> Result<Point> {
        let r0 = self.residual(&x);
        let tangent = self.tangent(&x, &r0, prev_tangent)?;
        let (c, w) = self.unscale(&x);
        let orbit = orbit_from_coeffs(self.plant, &c, w, self.h, residual)?;
        Ok(Point { x, tangent, orbit })
    }

    /// Point at arclength `s` from `from` along its tangent.
    fn point_at(&self, from: &Point, s: f64) -> Option<Point> {
        let pred: Vec<f64> = from.x.iter().zip(&from.tangent).map(|(a, b)| a + s * b).collect();
        let (x, rn, _) = self.correct(&pred, &from.tangent)?;
        self.point(x, rn, &from.tangent).ok()
    }

    fn omega_of(&self, p: &Point) -> f64 {
        p.x[p.x.len() - 1] * self.w_scale
    }

    /// Shrinks the arclength bracket `(0, s)` from `a` until the omega
    /// interval is below the resolution, keeping `indicator` different at
    /// both ends.
    fn bisect<I>(&self, a: &Point, b: &Point, s: f64, indicator: I) -> (f64, f64)
    where
        I: Fn(&Point) -> i64,
    {
        let ia = indicator(a);
        let (mut lo, mut hi) = (0.0, s);
        let (mut wlo, mut whi) = (self.omega_of(a), self.omega_of(b));
        for _ in 0..self.opts.max_bisections {
            if (whi - wlo).abs() <= self.opts.omega_resolution {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let Some(pm) = self.point_at(a, mid) else { break };
            if indicator(&pm) == ia {
                lo = mid;
                wlo = self.omega_of(&pm);
            } else {
                hi = mid;
                whi = self.omega_of(&pm);
            }
        }
        (wlo.min(whi), wlo.max(whi))
    }

    fn in_range(&self, w: f64) -> bool {
        w >= self.opts.omega_min && w <= self.opts.omega_max
    }

    /// Runs from `seed` in the direction of `dir` until omega leaves the
    /// range, steps run out, or the step size underflows.
    fn run(&self, seed: &Point, dir: f64) -> (Vec<Point>, Vec<BranchEvent>, String) {
        let mut pts = vec![seed.clone()];
        pts[0].tangent.iter_mut().for_each(|v| *v *= dir);
        let mut events = Vec::new();
        let mut ds = self.opts.ds;
        let reason;
        loop {
            if pts.len() > self.opts.max_steps {
                reason = "maximum number of steps".to_string();
                break;
            }
            let last = pts.last().expect("nonempty");
            let pred: Vec<f64> = last.x.iter().zip(&last.tangent).map(|(a, b)| a + ds * b).collect();
            let next = self
                .correct(&pred, &last.tangent)
                .and_then(|(x, rn, it)| self.point(x, rn, &last.tangent).ok().map(|p| (p, it)));
            let Some((next, iters)) = next else {
                ds *= 0.5;
                if ds < self.opts.ds_min {
                    reason = format!("step size underflow at omega {}", self.omega_of(last));
                    break;
                }
                continue;
            };
            let idx = pts.len() - 1;
            let n = next.x.len();
            if (last.tangent[n - 1] > 0.0) != (next.tangent[n - 1] > 0.0) {
                let (lo, hi) = self.bisect(last, &next, ds, |p| (p.tangent[n - 1] > 0.0) as i64);
                events.push(BranchEvent {
                    kind: EventKind::LimitPoint,
                    index: idx,
                    omega_low: lo,
                    omega_high: hi,
                });
            }
            if unstable_complex_count(&last.orbit) != unstable_complex_count(&next.orbit) {
                let (lo, hi) = self.bisect(last, &next, ds, |p| unstable_complex_count(&p.orbit));
                events.push(BranchEvent {
                    kind: EventKind::NeimarkSacker,
                    index: idx,
                    omega_low: lo,
                    omega_high: hi,
                });
            }
            let w = self.omega_of(&next);
            pts.push(next);
            if !self.in_range(w) {
                reason = format!("left omega range at {w}");
                break;
            }
            if iters <= 3 {
                ds = (ds * 1.5).min(self.opts.ds_max);
            }
        }
        (pts, events, reason)
    }
}

/// Number of complex multipliers outside the unit circle.
fn unstable_complex_count(o: &PeriodicOrbit) -> i64 {
    o.floquet_multipliers
        .iter()
        .filter(|m| m.im.abs() > 1e-9 * m.norm() && m.norm() > 1.0)
        .count() as i64
}

/// Continues `seed` in both directions of omega within
/// `[opts.omega_min, opts.omega_max]`. Orbits are ordered from the end
/// reached by decreasing omega to the end reached by increasing omega.
pub fn continue_branch(plant: &PlantModel, excitation: &Excitation, seed: &PeriodicOrbit, opts: BranchOptions) -> Result<Branch> {
    check_len("seed channels", plant.dof(), seed.fourier.channel_count())?;
    if !(opts.ds > 0.0 && opts.ds_min > 0.0 && opts.ds_max >= opts.ds && opts.omega_min < opts.omega_max) {
        return Err(Error::InvalidScenario("inconsistent continuation step or range settings".into()));
    }
    let h = seed.harmonics();
    let coeffs = seed.coefficients();
    let c_scale = coeffs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let cont = Continuer {
        plant,
        excitation,
        grid: Grid::new(h),
        h,
        c_scale,
        w_scale: seed.omega,
        opts,
    };
    let mut x: Vec<f64> = coeffs.iter().map(|v| v / c_scale).collect();
    x.push(1.0);
    let r0 = cont.residual(&x);
    if norm(&r0) > 1e3 * opts.tol.max(seed.residual_norm) {
        return Err(Error::InvalidScenario(format!("seed orbit is not converged (residual {:e})", norm(&r0))));
    }
    let mut up = vec![0.0; x.len()];
    up[x.len() - 1] = 1.0;
    let seed_pt = cont.point(x, seed.residual_norm, &up)?;
    let (fwd, fwd_ev, fwd_reason) = cont.run(&seed_pt, 1.0);
    let (bwd, bwd_ev, bwd_reason) = cont.run(&seed_pt, -1.0);

    // the backward run goes toward decreasing omega along the tangent, which
    // is not necessarily decreasing omega; order by whichever end is lower
    let nb = bwd.len();
    let mut orbits: Vec<PeriodicOrbit> = bwd.iter().rev().map(|p| p.orbit.clone()).collect();
    orbits.extend(fwd.into_iter().skip(1).map(|p| p.orbit));
    let mut events: Vec<BranchEvent> = bwd_ev
        .into_iter()
        .map(|e| BranchEvent {
            index: nb - 2 - e.index,
            ..e
        })
        .collect();
    events.extend(fwd_ev.into_iter().map(|e| BranchEvent {
        index: e.index + nb - 1,
        ..e
    }));
    events.sort_by_key(|e| e.index);
    let mut termination = vec![bwd_reason, fwd_reason];
    if orbits.first().map(|o| o.omega) > orbits.last().map(|o| o.omega) {
        orbits.reverse();
        let n = orbits.len();
        for e in &mut events {
            e.index = n - 2 - e.index;
        }
        events.reverse();
        termination.reverse();
    }
    Ok(Branch {
        orbits,
        events,
        termination,
    })
}
