//! Catalog of reproducible figures and their CSV outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use adaptive_cbc::diagnostics::{estimation_error, pe_matrix_min_eig};
use adaptive_cbc::scenario::Scenario;
use adaptive_cbc::simulator::SimTrace;
use rayon::prelude::*;

use crate::run::{branch_metrics, compute_branch, run_scenario, AppResult, SimRun};
use crate::summary::Summary;

/// What a figure plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plot {
    /// Frequency response: the full branch table.
    Branch,
    /// `t`, displacements and reference displacements.
    Response,
    /// `t` and control inputs.
    Input,
    /// `t` and `||theta_hat - theta||`.
    ParameterError,
    /// Window start, `lambda_min(M_e)`, `trace(M_e)` and their ratio.
    Excitation,
}

pub struct Figure {
    pub id: &'static str,
    pub config: &'static str,
    pub plot: Plot,
    pub caption: &'static str,
}

pub const CATALOG: [Figure; 14] = [
    fig("fig1a", "duffing_branch", Plot::Branch, "Duffing frequency response at A = 0.15 with limit points"),
    fig("fig1b", "duffing_open_loop", Plot::Response, "uncontrolled Duffing response from (0, -1) against the unstable orbit"),
    fig("fig2a", "duffing_noninvasive", Plot::Response, "closed-loop Duffing response tracking the natural response"),
    fig("fig2b", "duffing_noninvasive", Plot::Input, "control input decaying to zero"),
    fig("fig2c", "duffing_invasive", Plot::Response, "closed-loop response with a 30% perturbed reference"),
    fig("fig2d", "duffing_invasive", Plot::Input, "persistent control input with the perturbed reference"),
    fig("fig3", "cross_beam_branch", Plot::Branch, "cross-beam first-mode frequency response"),
    fig("fig4a", "cross_beam", Plot::Response, "cross-beam closed-loop response"),
    fig("fig4b", "cross_beam", Plot::Input, "cross-beam control inputs"),
    fig("fig5", "cantilever_branch", Plot::Branch, "cantilever first-mode frequency response"),
    fig("fig6a", "cantilever", Plot::Response, "cantilever closed-loop response"),
    fig("fig6b", "cantilever", Plot::Input, "cantilever control inputs"),
    fig("fig7a", "cantilever", Plot::ParameterError, "parameter estimation error norm"),
    fig("fig7b", "cantilever", Plot::Excitation, "smallest eigenvalue of the excitation matrix"),
];

const fn fig(id: &'static str, config: &'static str, plot: Plot, caption: &'static str) -> Figure {
    Figure { id, config, plot, caption }
}

/// The shipped configs, embedded so figures do not depend on the working
/// directory.
const CONFIGS: [(&str, &str); 11] = [
    ("duffing_branch", include_str!("../../../configs/duffing_branch.toml")),
    ("duffing_open_loop", include_str!("../../../configs/duffing_open_loop.toml")),
    ("duffing_noninvasive", include_str!("../../../configs/duffing_noninvasive.toml")),
    ("duffing_invasive", include_str!("../../../configs/duffing_invasive.toml")),
    ("duffing_cbc", include_str!("../../../configs/duffing_cbc.toml")),
    ("cross_beam_branch", include_str!("../../../configs/cross_beam_branch.toml")),
    ("cross_beam", include_str!("../../../configs/cross_beam.toml")),
    ("cross_beam_partial", include_str!("../../../configs/cross_beam_partial.toml")),
    ("cross_beam_partial_invasive", include_str!("../../../configs/cross_beam_partial_invasive.toml")),
    ("cantilever_branch", include_str!("../../../configs/cantilever_branch.toml")),
    ("cantilever", include_str!("../../../configs/cantilever.toml")),
];

pub fn find(id: &str) -> Option<&'static Figure> {
    CATALOG.iter().find(|f| f.id == id)
}

pub fn embedded_config(name: &str) -> Option<&'static str> {
    CONFIGS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Expands `all` and checks every id against the catalog.
pub fn select(ids: &[String]) -> AppResult<Vec<&'static Figure>> {
    let mut out = Vec::new();
    for id in ids {
        if id == "all" {
            out.extend(CATALOG.iter());
        } else {
            let known: Vec<_> = CATALOG.iter().map(|f| f.id).collect();
            out.push(find(id).ok_or_else(|| format!("unknown figure `{id}` (known: {}, all)", known.join(", ")))?);
        }
    }
    out.dedup_by_key(|f| f.id);
    Ok(out)
}

fn push_row(buf: &mut String, row: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in row {
        if !first {
            buf.push(',');
        }
        first = false;
        // Display for f64 is the shortest string that parses back exactly
        write!(buf, "{v}").unwrap();
    }
    buf.push('\n');
}

/// Displacement block of the state, `(start, len)`.
fn displacements(trace: &SimTrace) -> (usize, usize) {
    let (n, p) = (trace.meta.order, trace.meta.dof);
    ((n - 1) * p, p)
}

fn trace_csv(plot: Plot, run: &SimRun) -> AppResult<String> {
    let trace = &run.trace;
    let p = trace.meta.dof;
    let mut buf = String::new();
    match plot {
        Plot::Response => {
            let (off, len) = displacements(trace);
            let header: Vec<String> = std::iter::once("t".to_string())
                .chain((1..=len).map(|i| format!("x{i}")))
                .chain((1..=len).map(|i| format!("xr{i}")))
                .collect();
            buf.push_str(&header.join(","));
            buf.push('\n');
            for i in 0..trace.len() {
                let row = std::iter::once(trace.time[i])
                    .chain(trace.xi.row(i)[off..off + len].iter().copied())
                    .chain(trace.xi_ref.row(i)[off..off + len].iter().copied());
                push_row(&mut buf, row);
            }
        }
        Plot::Input => {
            let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=p).map(|i| format!("u{i}"))).collect();
            buf.push_str(&header.join(","));
            buf.push('\n');
            for i in 0..trace.len() {
                push_row(&mut buf, std::iter::once(trace.time[i]).chain(trace.u.row(i).iter().copied()));
            }
        }
        Plot::ParameterError => {
            let err = estimation_error(trace, run.resolved.sim.plant.true_theta())?;
            buf.push_str("t,theta_error_norm\n");
            for (t, e) in trace.time.iter().zip(err) {
                push_row(&mut buf, [*t, e]);
            }
        }
        Plot::Excitation => {
            let period = trace.meta.period;
            let stride = ((period / trace.sample_dt()) as usize / 8).max(1);
            let reg = &run.resolved.sim.controller_regressor;
            let pe = pe_matrix_min_eig(trace, reg, period, stride)?;
            let rel = pe.relative(reg.param_count());
            buf.push_str("t,lambda_min,trace,relative\n");
            for (i, r) in rel.iter().enumerate() {
                push_row(&mut buf, [pe.time[i], pe.lambda_min[i], pe.trace[i], *r]);
            }
        }
        Plot::Branch => unreachable!("branch figures are not traces"),
    }
    Ok(buf)
}

fn scenario_for(config: &str, seed: Option<u64>) -> AppResult<Scenario> {
    let text = embedded_config(config).ok_or_else(|| format!("no embedded config `{config}`"))?;
    let sc = Scenario::from_toml(text)?;
    Ok(match seed {
        Some(s) => sc.with_seed(s),
        None => sc,
    })
}

/// Everything computed for one config, shared by its figures.
enum Computed {
    Sim(Box<SimRun>),
    Branch(Box<adaptive_cbc::continuation::Branch>),
}

fn compute(config: &str, branch: bool, seed: Option<u64>) -> AppResult<Computed> {
    let sc = scenario_for(config, seed)?;
    if branch {
        Ok(Computed::Branch(Box::new(compute_branch(&sc)?)))
    } else {
        Ok(Computed::Sim(Box::new(run_scenario(&sc, None)?)))
    }
}

/// Runs the configs behind `figures` (in parallel on the current rayon pool)
/// and writes `out/<id>/figure.csv` and `out/<id>/summary.json` for each.
pub fn reproduce(figures: &[&'static Figure], out: &Path, seed: Option<u64>) -> Vec<Summary> {
    let mut groups: BTreeMap<(&str, bool), Vec<&Figure>> = BTreeMap::new();
    for f in figures {
        groups.entry((f.config, f.plot == Plot::Branch)).or_default().push(f);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    groups
        .par_iter()
        .flat_map_iter(|((config, branch), figs)| {
            let t0 = Instant::now();
            let computed = compute(config, *branch, seed);
            let elapsed = t0.elapsed().as_secs_f64();
            let hash = scenario_for(config, seed).ok().map(|s| s.hash());
            figs.iter()
                .map(|f| {
                    let mut summary = Summary::new("reproduce-figure", config);
                    summary.figure = Some(f.id.to_string());
                    summary.seed = seed;
                    summary.scenario_hash = hash.clone();
                    summary.config = Some(format!("configs/{config}.toml"));
                    let dir = out.join(f.id);
                    let written = std::fs::create_dir_all(&dir).map_err(Into::into).and_then(|_| match &computed {
                        Ok(c) => emit(f, c, &dir, &mut summary),
                        Err(e) => Err(e.to_string().into()),
                    });
                    if let Err(e) = written {
                        summary.fail_with(&e);
                    }
                    summary.finish(elapsed);
                    if let Err(e) = summary.write(&dir) {
                        log::error!("{}: cannot write summary: {e}", f.id);
                    }
                    summary
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn emit(f: &Figure, computed: &Computed, dir: &Path, summary: &mut Summary) -> AppResult<()> {
    match computed {
        Computed::Branch(b) => {
            b.save_csv(&dir.join("figure.csv"))?;
            summary.metrics = branch_metrics(b);
        }
        Computed::Sim(run) => {
            std::fs::write(dir.join("figure.csv"), trace_csv(f.plot, run)?)?;
            summary.metrics = serde_json::to_value(&run.metrics)?;
            summary.checks = run.checks.clone();
        }
    }
    summary.artifacts.push("figure.csv".into());
    Ok(())
}
