//! Command line entry point: simulations, continuation branches, CBC solves
//! and figure data from scenario configs.
//!
//! Exit status: 0 when every threshold check passes, 2 when a run completes
//! but a check fails, 1 on any error.

mod figures;
mod run;
mod summary;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use adaptive_cbc::scenario::Scenario;
use clap::{Args, Parser, Subcommand};

use crate::run::AppResult;
use crate::summary::{Status, Summary};

#[derive(Parser)]
#[command(name = "adaptive-cbc", version, about = "Adaptive noninvasive control and control-based continuation")]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    parallel: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML, or JSON with a `.json` extension).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Seed for a perturbed reference, replacing the one in the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; writes trace.csv, metrics.json and summary.json.
    Simulate(RunArgs),
    /// Continue the periodic orbit of the uncontrolled plant; writes branch.csv.
    Branch(RunArgs),
    /// Solve the control-based continuation zero-problem; writes reference.json.
    Cbc(RunArgs),
    /// Write figure.csv and summary.json per figure under DIR/<id>/.
    ReproduceFigure {
        /// Figure id (repeatable), or `all`.
        #[arg(long, value_name = "ID", required = true)]
        figure: Vec<String>,

        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,

        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// List the figure catalog.
    Figures,
}

fn init_logging() {
    let env = env_logger::Env::default().filter_or("CBC_ADAPT_LOG", "warn");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
}

fn exit_code(statuses: impl IntoIterator<Item = Status>) -> ExitCode {
    let mut code = 0;
    for s in statuses {
        code = match s {
            Status::Error => 1,
            Status::Fail if code == 0 => 2,
            _ => code,
        };
    }
    ExitCode::from(code)
}

fn load(args: &RunArgs) -> AppResult<Scenario> {
    let sc = Scenario::load(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    Ok(match args.seed {
        Some(s) => sc.with_seed(s),
        None => sc,
    })
}

fn ensure_dir(dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create output directory {}: {e}", dir.display()))?;
    Ok(())
}

type Runner = fn(&Scenario, &Path, &mut Summary) -> AppResult<()>;

fn single(name: &str, args: &RunArgs, runner: Runner) -> ExitCode {
    let t0 = Instant::now();
    let mut summary = Summary::new(name, &args.config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    summary.config = Some(args.config.display().to_string());
    summary.seed = args.seed;
    if let Err(e) = ensure_dir(&args.out) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let result = load(args).and_then(|sc| runner(&sc, &args.out, &mut summary));
    if let Err(e) = &result {
        eprintln!("error: {e}");
        summary.fail_with(e);
    }
    summary.finish(t0.elapsed().as_secs_f64());
    if let Err(e) = summary.write(&args.out) {
        eprintln!("error: cannot write summary: {e}");
        return ExitCode::from(1);
    }
    for c in &summary.checks {
        println!("{} {} = {:e} ({} {:e})", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.comparison, c.threshold);
    }
    println!("{name} {}: {:?} in {:.2} s", summary.scenario, summary.status, summary.runtime_s);
    exit_code([summary.status])
}

fn reproduce(ids: &[String], out: &Path, seed: Option<u64>) -> ExitCode {
    let figs = match figures::select(ids).and_then(|f| ensure_dir(out).map(|_| f)) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let summaries = figures::reproduce(&figs, out, seed);
    for s in &summaries {
        let id = s.figure.as_deref().unwrap_or("?");
        match &s.error {
            Some(e) => println!("{id}: error: {e}"),
            None => println!("{id}: {:?} ({}) -> {}", s.status, s.scenario, out.join(id).join("figure.csv").display()),
        }
    }
    exit_code(summaries.iter().map(|s| s.status))
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    if let Some(n) = cli.parallel {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match &cli.command {
        Command::Simulate(args) => single("simulate", args, run::simulate),
        Command::Branch(args) => single("branch", args, run::branch),
        Command::Cbc(args) => single("cbc", args, run::cbc),
        Command::ReproduceFigure { figure, out, seed } => reproduce(figure, out, *seed),
        Command::Figures => {
            for f in &figures::CATALOG {
                println!("{:6} {:22} {}", f.id, f.config, f.caption);
            }
            ExitCode::SUCCESS
        }
    }
}
