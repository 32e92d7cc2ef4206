//! Command line front end for the planner.
//!
//! Exit codes: 0 when the request succeeded (problem solved, plan valid),
//! 1 when the answer is a clean negative (unsolved, plan invalid), 2 for
//! errors of any kind.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use widthplan::harness::{self, parse_mode, BenchConfig, HarnessOptions, PlanStepDoc};
use widthplan::heuristics::FVariant;
use widthplan::ingest;
use widthplan::model::Problem;
use widthplan::search::{ExecMode, KBound};
use widthplan::validator;

#[derive(Parser)]
#[command(
    name = "widthplan",
    version,
    about = "Decentralized width-based planner for multi-agent problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem and emit the run report as JSON.
    Plan(PlanArgs),
    /// Execute a plan file against a problem with full knowledge.
    Validate {
        /// Problem file.
        problem: PathBuf,
        /// JSON plan: a list of {agent, action} steps, or any object with
        /// a "plan" field holding one (a run report works as is).
        plan: PathBuf,
    },
    /// Probe each goal on its own at width bounds one and two.
    WidthProfile {
        /// Problem file.
        problem: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-probe wall clock limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
    },
    /// Run every problem in a directory against a config and emit CSV.
    Bench {
        /// Directory of problem files.
        dir: PathBuf,
        /// JSON config: heuristics, k, mode, seed, time_limit_s, repeats.
        #[arg(long)]
        config: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PlanArgs {
    /// Problem file.
    problem: PathBuf,
    /// One of: hff, f1, f2, f3, f4, f5, f6.
    #[arg(long, default_value = "f1")]
    heuristic: String,
    /// Novelty pruning bound: 1, 2, or unbounded.
    #[arg(long, default_value = "2")]
    k: String,
    /// det replays a seeded round-robin schedule, conc runs real threads.
    #[arg(long, default_value = "det")]
    mode: String,
    /// Required in det mode; conc mode draws one from the clock if absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Wall clock limit per repeat in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Report the median repeat of this many runs.
    #[arg(long, default_value_t = 1)]
    repeats: u32,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: &Path) -> Result<Problem> {
    ingest::load_problem(path).with_context(|| format!("loading {}", path.display()))
}

fn problem_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().to_string())
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    let body = text.trim_end_matches('\n');
    match out {
        Some(path) => std::fs::write(path, format!("{body}\n"))
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{body}"),
    }
    Ok(())
}

fn clock_seed() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64)
}

fn cmd_plan(args: &PlanArgs) -> Result<ExitCode> {
    let variant = FVariant::parse(&args.heuristic)
        .ok_or_else(|| anyhow!("unknown heuristic {:?}", args.heuristic))?;
    let k = KBound::parse(&args.k).ok_or_else(|| anyhow!("unknown k {:?}", args.k))?;
    let mode = parse_mode(&args.mode).ok_or_else(|| anyhow!("unknown mode {:?}", args.mode))?;
    let seed = match (mode, args.seed) {
        (_, Some(seed)) => seed,
        (ExecMode::Deterministic, None) => bail!("deterministic mode requires --seed"),
        (ExecMode::Concurrent, None) => clock_seed(),
    };
    if args.repeats < 1 {
        bail!("--repeats must be at least 1");
    }
    let mut opts = HarnessOptions::new(variant, k, seed);
    opts.mode = mode;
    opts.repeats = args.repeats;
    opts.time_limit = args.time_limit.map(Duration::from_secs_f64);

    let problem = load(&args.problem)?;
    let report = harness::run_problem(&problem, &problem_name(&args.problem), &opts)?;
    emit(args.out.as_ref(), &serde_json::to_string_pretty(&report)?)?;
    Ok(if report.solved { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn read_plan_steps(path: &Path) -> Result<Vec<PlanStepDoc>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let steps = match &value {
        serde_json::Value::Array(_) => value.clone(),
        serde_json::Value::Object(map) => map
            .get("plan")
            .cloned()
            .ok_or_else(|| anyhow!("{} has no \"plan\" field", path.display()))?,
        _ => bail!("{} is neither a step list nor an object", path.display()),
    };
    serde_json::from_value(steps)
        .with_context(|| format!("{}: steps must be {{agent, action}} objects", path.display()))
}

fn cmd_validate(problem: &Path, plan: &Path) -> Result<ExitCode> {
    let p = load(problem)?;
    let steps = read_plan_steps(plan)?;
    let pairs: Vec<(String, String)> =
        steps.into_iter().map(|s| (s.agent, s.action)).collect();
    let report = validator::validate_plan(&p, &pairs);
    if report.valid {
        println!("valid: {} steps, cost {}", report.steps_applied, report.cost);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("invalid: {}", report.reason.unwrap_or_default());
        Ok(ExitCode::from(1))
    }
}

fn cmd_width_profile(problem: &Path, seed: u64, time_limit: Option<f64>) -> Result<ExitCode> {
    let p = load(problem)?;
    let profile = harness::width_profile(&p, seed, time_limit.map(Duration::from_secs_f64))?;
    println!("{}", serde_json::to_string_pretty(&profile)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(dir: &Path, config: &Path, out: Option<&PathBuf>) -> Result<ExitCode> {
    let text =
        std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let config: BenchConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let csv = harness::bench_suite(dir, &config)?;
    emit(out, &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Validate { problem, plan } => cmd_validate(problem, plan),
        Command::WidthProfile { problem, seed, time_limit } => {
            cmd_width_profile(problem, *seed, *time_limit)
        }
        Command::Bench { dir, config, out } => cmd_bench(dir, config, out.as_ref()),
    };
    run.unwrap_or_else(|err| {
        eprintln!("error: {err:#}");
        ExitCode::from(2)
    })
}
