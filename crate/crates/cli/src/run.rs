//! The simulate, branch and cbc subcommands.

use std::path::Path;

use adaptive_cbc::continuation::{cbc_solve, continue_branch, Branch};
use adaptive_cbc::diagnostics::{metrics_report, MetricsReport};
use adaptive_cbc::scenario::{Expectation, Resolved, Scenario};
use adaptive_cbc::simulator::{Mode, SimTrace};
use adaptive_cbc::Error;
use serde_json::json;

use crate::summary::{Check, Summary};

pub type AppResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

pub struct SimRun {
    pub resolved: Resolved,
    pub trace: SimTrace,
    pub metrics: MetricsReport,
    pub checks: Vec<Check>,
}

/// Threshold checks for a finished run.
pub fn checks(resolved: &Resolved, metrics: &MetricsReport) -> Vec<Check> {
    if resolved.sim.mode == Mode::OpenLoop {
        return Vec::new();
    }
    let th = resolved.thresholds;
    match th.expect {
        Expectation::Noninvasive => vec![
            Check::at_most("invasiveness", metrics.invasiveness, th.tol_noninv),
            Check::at_most("tracking_error", metrics.tracking_error, th.error_tol),
        ],
        Expectation::Invasive => vec![Check::at_least("invasiveness", metrics.invasiveness, th.floor_inv)],
    }
}

/// Resolves and runs a scenario. A diverged run's partial trace is written
/// to `partial` before the error is returned.
pub fn run_scenario(sc: &Scenario, partial: Option<&Path>) -> AppResult<SimRun> {
    let resolved = sc.resolve()?;
    log::info!("{}: {} steps of {:e}", resolved.name, resolved.sim.steps, resolved.sim.dt);
    let trace = match resolved.sim.run() {
        Ok(t) => t,
        Err(Error::Diverged { time, trace }) => {
            if let Some(dir) = partial {
                trace.save_csv(&dir.join("trace.csv"))?;
            }
            return Err(format!("simulation diverged at t = {time}").into());
        }
        Err(e) => return Err(e.into()),
    };
    let metrics = metrics_report(&trace, &resolved.sim, resolved.sim.mode == Mode::ClosedLoop)?;
    let checks = checks(&resolved, &metrics);
    Ok(SimRun {
        resolved,
        trace,
        metrics,
        checks,
    })
}

fn describe(sc: &Scenario, summary: &mut Summary) {
    summary.scenario_hash = Some(sc.hash());
    if let Some(name) = &sc.name {
        summary.scenario = name.clone();
    }
}

pub fn simulate(sc: &Scenario, out: &Path, summary: &mut Summary) -> AppResult<()> {
    describe(sc, summary);
    let run = run_scenario(sc, Some(out))?;
    run.trace.save_csv(&out.join("trace.csv"))?;
    std::fs::write(out.join("metrics.json"), run.metrics.to_json()? + "\n")?;
    summary.artifacts.extend(["trace.csv".into(), "metrics.json".into()]);
    summary.metrics = serde_json::to_value(&run.metrics)?;
    summary.checks = run.checks;
    Ok(())
}

pub fn compute_branch(sc: &Scenario) -> AppResult<Branch> {
    let opts = sc.branch.ok_or("config has no [branch] section")?;
    let r = sc.resolve()?;
    let seed = r.orbit.as_ref().ok_or("continuation needs a reference with `refine = true` as its seed orbit")?;
    Ok(continue_branch(&r.sim.plant, &r.sim.excitation, seed, opts)?)
}

pub fn branch_metrics(branch: &Branch) -> serde_json::Value {
    let events: Vec<_> = branch
        .events
        .iter()
        .map(|e| {
            json!({
                "kind": e.kind.label(),
                "omega": e.omega(),
                "omega_low": e.omega_low,
                "omega_high": e.omega_high,
                "index": e.index,
            })
        })
        .collect();
    json!({
        "orbits": branch.orbits.len(),
        "omega_min": branch.orbits.iter().map(|o| o.omega).fold(f64::INFINITY, f64::min),
        "omega_max": branch.orbits.iter().map(|o| o.omega).fold(f64::NEG_INFINITY, f64::max),
        "events": events,
        "termination": branch.termination,
    })
}

pub fn branch(sc: &Scenario, out: &Path, summary: &mut Summary) -> AppResult<()> {
    describe(sc, summary);
    let branch = compute_branch(sc)?;
    branch.save_csv(&out.join("branch.csv"))?;
    summary.artifacts.push("branch.csv".into());
    summary.metrics = branch_metrics(&branch);
    Ok(())
}

pub fn cbc(sc: &Scenario, out: &Path, summary: &mut Summary) -> AppResult<()> {
    describe(sc, summary);
    let r = sc.resolve()?;
    if r.sim.mode != Mode::ClosedLoop {
        return Err("control-based continuation needs a closed-loop scenario".into());
    }
    let opts = sc.cbc.unwrap_or_default();
    let start = r.sim.reference.as_ref().ok_or("control-based continuation needs a starting reference")?;
    let res = cbc_solve(&r.sim, start.signal(), &opts)?;
    std::fs::write(out.join("reference.json"), res.reference.signal().to_json()? + "\n")?;
    summary.artifacts.push("reference.json".into());
    summary.metrics = json!({
        "iterations": res.iterations,
        "residual": res.residual,
        "history": res.history,
        "simulations": res.simulations,
        "coefficients": res.reference.signal().to_coefficients(opts.harmonics),
    });
    summary.checks.push(Check::at_most("control_residual", res.residual, opts.tol));
    Ok(())
}
