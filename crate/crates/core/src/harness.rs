//! Run orchestration: repeat handling, reports, width profiling and the
//! benchmark table.
//!
//! Deterministic reports never contain wall-clock readings; the logical
//! scheduler round count stands in for time, so serializing the same run
//! twice yields identical bytes.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::comm::PlanStep;
use crate::heuristics::FVariant;
use crate::ingest::{self, split_single_goal, IngestError};
use crate::model::Problem;
use crate::search::{self, AgentStats, EngineError, EngineOptions, ExecMode, KBound, Outcome};

#[derive(Clone, Debug)]
pub struct HarnessOptions {
    pub variant: FVariant,
    pub k: KBound,
    pub mode: ExecMode,
    pub seed: u64,
    pub time_limit: Option<Duration>,
    pub repeats: u32,
}

impl HarnessOptions {
    pub fn new(variant: FVariant, k: KBound, seed: u64) -> HarnessOptions {
        HarnessOptions {
            variant,
            k,
            mode: ExecMode::Deterministic,
            seed,
            time_limit: None,
            repeats: 1,
        }
    }

    fn engine_options(&self) -> EngineOptions {
        let mut o = EngineOptions::new(self.variant, self.k, self.seed);
        o.mode = self.mode;
        o.time_limit = self.time_limit;
        o
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize, Debug)]
pub struct PlanStepDoc {
    pub agent: String,
    pub action: String,
}

#[derive(Serialize, Debug)]
pub struct RunReport {
    pub problem: String,
    pub heuristic: String,
    pub k: String,
    pub mode: String,
    pub seed: u64,
    pub repeats: u32,
    pub solved: bool,
    pub timed_out: bool,
    pub plan: Option<Vec<PlanStepDoc>>,
    pub plan_cost: Option<f64>,
    pub plan_length: Option<usize>,
    pub scheduler_steps: Option<u64>,
    /// Present only for runs under the thread fabric.
    pub wall_time_ms: Option<u64>,
    pub agents: Vec<AgentStats>,
}

fn k_name(k: KBound) -> String {
    match k {
        KBound::K(v) => v.to_string(),
        KBound::Unbounded => "unbounded".to_string(),
    }
}

fn mode_name(mode: ExecMode) -> &'static str {
    match mode {
        ExecMode::Deterministic => "det",
        ExecMode::Concurrent => "conc",
    }
}

/// Index of the run to report: middle of the repeats ordered by wall
/// time, timeouts sorting last.
pub fn median_index(times: &[Option<Duration>]) -> usize {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by_key(|&i| (times[i].is_none(), times[i].unwrap_or(Duration::MAX), i));
    order[times.len() / 2]
}

/// A repeated run counts as unsolved when more than half its repeats
/// timed out.
pub fn timed_out_majority(times: &[Option<Duration>]) -> bool {
    times.iter().filter(|t| t.is_none()).count() > times.len() / 2
}

fn plan_docs(problem: &Problem, plan: &[PlanStep]) -> Vec<PlanStepDoc> {
    plan.iter()
        .map(|s| PlanStepDoc {
            agent: problem.agents[s.agent.0 as usize].clone(),
            action: s.label.clone(),
        })
        .collect()
}

/// Run one problem `repeats` times and report the median repeat.
pub fn run_problem(
    problem: &Problem,
    problem_name: &str,
    opts: &HarnessOptions,
) -> Result<RunReport, EngineError> {
    let repeats = opts.repeats.max(1);
    let mut results = Vec::with_capacity(repeats as usize);
    let mut times: Vec<Option<Duration>> = Vec::with_capacity(repeats as usize);
    for _ in 0..repeats {
        let started = Instant::now();
        let result = search::run(problem, &opts.engine_options())?;
        let elapsed = started.elapsed();
        times.push((result.outcome != Outcome::TimedOut).then_some(elapsed));
        results.push(result);
    }
    let chosen = median_index(&times);
    let majority_timeout = timed_out_majority(&times);
    let result = &results[chosen];

    let (solved, timed_out, plan, cost) = match &result.outcome {
        _ if majority_timeout => (false, true, None, None),
        Outcome::Solved { plan, cost } => (true, false, Some(plan.clone()), Some(*cost)),
        Outcome::Unsolvable => (false, false, None, None),
        Outcome::TimedOut => (false, true, None, None),
    };
    Ok(RunReport {
        problem: problem_name.to_string(),
        heuristic: opts.variant.name().to_string(),
        k: k_name(opts.k),
        mode: mode_name(opts.mode).to_string(),
        seed: opts.seed,
        repeats,
        solved,
        timed_out,
        plan_length: plan.as_ref().map(Vec::len),
        plan: plan.map(|p| plan_docs(problem, &p)),
        plan_cost: cost,
        scheduler_steps: result.scheduler_steps,
        wall_time_ms: (opts.mode == ExecMode::Concurrent)
            .then(|| times[chosen].unwrap_or_default().as_millis() as u64),
        agents: result.stats.clone(),
    })
}

#[derive(Serialize, Debug)]
pub struct GoalWidthEntry {
    pub goal: String,
    pub solved_k1: bool,
    pub solved_k2: bool,
}

#[derive(Serialize, Debug)]
pub struct WidthProfile {
    pub goals: Vec<GoalWidthEntry>,
    pub coverage_k1_percent: f64,
    pub coverage_k2_percent: f64,
}

/// Probe each goal on its own under the pure width search at bounds one
/// and two.
pub fn width_profile(
    problem: &Problem,
    seed: u64,
    time_limit: Option<Duration>,
) -> Result<WidthProfile, EngineError> {
    let singles = split_single_goal(problem);
    let mut goals = Vec::with_capacity(singles.len());
    for single in &singles {
        let goal_name = single
            .goals
            .iter()
            .map(|f| single.fact_name(f).to_string())
            .next()
            .unwrap_or_default();
        let mut solved = [false; 2];
        for (slot, k) in [(0, KBound::K(1)), (1, KBound::K(2))] {
            let mut options = EngineOptions::new(FVariant::WidthProbe, k, seed);
            options.time_limit = time_limit;
            let result = search::run(single, &options)?;
            solved[slot] = matches!(result.outcome, Outcome::Solved { .. });
        }
        goals.push(GoalWidthEntry { goal: goal_name, solved_k1: solved[0], solved_k2: solved[1] });
    }
    let pct = |f: fn(&GoalWidthEntry) -> bool| {
        if goals.is_empty() {
            100.0
        } else {
            100.0 * goals.iter().filter(|g| f(g)).count() as f64 / goals.len() as f64
        }
    };
    Ok(WidthProfile {
        coverage_k1_percent: pct(|g| g.solved_k1),
        coverage_k2_percent: pct(|g| g.solved_k2),
        goals,
    })
}

#[derive(Clone, Deserialize, Debug)]
pub struct BenchConfig {
    pub heuristics: Vec<String>,
    pub k: String,
    pub mode: String,
    pub seed: u64,
    pub time_limit_s: Option<f64>,
    pub repeats: u32,
}

#[derive(thiserror::Error, Debug)]
pub enum BenchError {
    #[error("cannot list {path}: {source}")]
    Dir { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("unknown heuristic {0}")]
    UnknownHeuristic(String),
    #[error("unknown width bound {0}")]
    UnknownK(String),
    #[error("unknown mode {0}")]
    UnknownMode(String),
}

pub fn parse_mode(s: &str) -> Option<ExecMode> {
    match s {
        "det" => Some(ExecMode::Deterministic),
        "conc" => Some(ExecMode::Concurrent),
        _ => None,
    }
}

struct BenchCell {
    solved: bool,
    errored: bool,
    time: Duration,
    plan_length: usize,
    messages: u64,
    expanded: u64,
}

/// Run every problem in `dir` under every configured heuristic and lay
/// the results out as CSV: a coverage matrix, a blank line, then
/// aggregate rows over the problems everyone solved.
pub fn bench_suite(dir: &Path, config: &BenchConfig) -> Result<String, BenchError> {
    let variants: Vec<FVariant> = config
        .heuristics
        .iter()
        .map(|h| FVariant::parse(h).ok_or_else(|| BenchError::UnknownHeuristic(h.clone())))
        .collect::<Result<_, _>>()?;
    let k = KBound::parse(&config.k).ok_or_else(|| BenchError::UnknownK(config.k.clone()))?;
    let mode = parse_mode(&config.mode).ok_or_else(|| BenchError::UnknownMode(config.mode.clone()))?;

    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| BenchError::Dir { path: dir.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();

    let mut rows: Vec<(String, Vec<BenchCell>)> = Vec::new();
    for path in &entries {
        let problem = ingest::load_problem(path)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let mut cells = Vec::with_capacity(variants.len());
        for &variant in &variants {
            let mut opts = HarnessOptions::new(variant, k, config.seed);
            opts.mode = mode;
            opts.repeats = config.repeats;
            opts.time_limit = config.time_limit_s.map(Duration::from_secs_f64);
            let started = Instant::now();
            match run_problem(&problem, &stem, &opts) {
                Ok(report) => cells.push(BenchCell {
                    solved: report.solved,
                    errored: false,
                    time: started.elapsed(),
                    plan_length: report.plan_length.unwrap_or(0),
                    messages: report.agents.iter().map(|a| a.messages_sent).sum(),
                    expanded: report.agents.iter().map(|a| a.expanded).sum(),
                }),
                Err(_) => cells.push(BenchCell {
                    solved: false,
                    errored: true,
                    time: started.elapsed(),
                    plan_length: 0,
                    messages: 0,
                    expanded: 0,
                }),
            }
        }
        rows.push((stem, cells));
    }

    let mut csv = String::new();
    csv.push_str("problem");
    for v in &variants {
        csv.push(',');
        csv.push_str(v.name());
    }
    csv.push('\n');
    for (stem, cells) in &rows {
        csv.push_str(stem);
        for cell in cells {
            csv.push(',');
            csv.push_str(if cell.errored {
                "err"
            } else if cell.solved {
                "1"
            } else {
                "0"
            });
        }
        csv.push('\n');
    }
    csv.push('\n');

    let common: Vec<&(String, Vec<BenchCell>)> =
        rows.iter().filter(|(_, cells)| cells.iter().all(|c| c.solved)).collect();
    csv.push_str("metric");
    for v in &variants {
        csv.push(',');
        csv.push_str(v.name());
    }
    csv.push('\n');
    let aggregate = |csv: &mut String, name: &str, f: &dyn Fn(&BenchCell) -> f64| {
        csv.push_str(name);
        for col in 0..variants.len() {
            csv.push(',');
            if common.is_empty() {
                csv.push_str("n/a");
            } else {
                let sum: f64 = common.iter().map(|(_, cells)| f(&cells[col])).sum();
                csv.push_str(&format!("{:.3}", sum / common.len() as f64));
            }
        }
        csv.push('\n');
    };
    aggregate(&mut csv, "avg_time", &|c| c.time.as_secs_f64());
    aggregate(&mut csv, "avg_plan_length", &|c| c.plan_length as f64);
    aggregate(&mut csv, "messages_k", &|c| c.messages as f64 / 1000.0);
    aggregate(&mut csv, "states_k", &|c| c.expanded as f64 / 1000.0);
    Ok(csv)
}

/// Workspace fixtures directory, reachable from any crate in the tree.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn load_fixture(name: &str) -> Problem {
    let path = fixtures_dir().join(format!("{name}.json"));
    ingest::load_problem(&path).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn fixture_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(fixtures_dir())
        .expect("fixtures directory exists")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().to_string()))
        .collect();
    names.sort();
    names
}
