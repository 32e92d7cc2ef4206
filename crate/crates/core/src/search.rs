//! Distributed best-first width search.
//!
//! Every agent owns a private open list, novelty memory and token vault.
//! Public successor states are broadcast at expansion time; received
//! states enter the open list after decryption and are never pruned by
//! the novelty bound. Plans are reconstructed cooperatively: whoever
//! reaches a goal walks its local parent chain and asks the originating
//! agent to continue whenever the chain bottoms out at a received state.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::comm::{
    self, Envelope, Message, Net, PlanStep, TerminationAction, TerminationTracker, WireLog,
};
use crate::heuristics::{Anchor, EvalContext, EvalKey, Evaluator, FVariant};
use crate::model::{ActionId, AgentId, FactSet, Owner, Problem, State, Token};
use crate::novelty::CostNoveltyTable;
use crate::privacy::{decrypt_incoming, encrypt_outgoing, TokenVault};

/// Width bound applied to locally generated successors.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum KBound {
    K(u8),
    Unbounded,
}

impl KBound {
    pub fn parse(s: &str) -> Option<KBound> {
        Some(match s {
            "1" => KBound::K(1),
            "2" => KBound::K(2),
            "unbounded" => KBound::Unbounded,
            _ => return None,
        })
    }

    pub fn cap(self) -> Option<u8> {
        match self {
            KBound::K(k) => Some(k),
            KBound::Unbounded => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ExecMode {
    Deterministic,
    Concurrent,
}

#[derive(Clone, Debug)]
pub struct EngineOptions {
    pub variant: FVariant,
    pub k: KBound,
    pub mode: ExecMode,
    pub seed: u64,
    pub allow_zero_cost: bool,
    pub max_steps: Option<u64>,
    pub time_limit: Option<Duration>,
    pub record_wire: bool,
    pub record_pops: bool,
}

impl EngineOptions {
    pub fn new(variant: FVariant, k: KBound, seed: u64) -> EngineOptions {
        EngineOptions {
            variant,
            k,
            mode: ExecMode::Deterministic,
            seed,
            allow_zero_cost: false,
            max_steps: None,
            time_limit: None,
            record_wire: false,
            record_pops: false,
        }
    }
}

#[derive(thiserror::Error, Debug)]
pub enum EngineError {
    #[error("zero-cost actions break the accumulated-cost pruning rule; \
             rerun unbounded or enable zero-cost mode")]
    ZeroCostWithPruning,
    #[error("at most 255 agents are supported, problem has {0}")]
    TooManyAgents(usize),
}

#[derive(Clone, PartialEq, Debug)]
pub enum Outcome {
    Solved { plan: Vec<PlanStep>, cost: f64 },
    Unsolvable,
    TimedOut,
}

#[derive(Clone, Default, Debug, serde::Serialize)]
pub struct AgentStats {
    pub agent: String,
    pub expanded: u64,
    pub generated: u64,
    pub pruned: u64,
    pub duplicates: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub states_received_opened: u64,
    pub rpg_builds: u64,
    pub max_levels: u16,
}

/// One open-list pop, for mirroring the search externally.
#[derive(Clone, PartialEq, Debug)]
pub struct PopRecord {
    pub plain: Vec<u32>,
    pub g: f64,
    pub key: EvalKey,
}

pub struct RunResult {
    pub outcome: Outcome,
    pub stats: Vec<AgentStats>,
    /// Scheduler rounds in deterministic mode, absent under threads.
    pub scheduler_steps: Option<u64>,
    pub wire: Option<WireLog>,
    pub pops: Option<Vec<Vec<PopRecord>>>,
}

#[derive(Clone, Debug)]
enum Via {
    Root,
    Local { parent: u64, action: ActionId },
    Received { origin: AgentId, origin_node: u64 },
}

struct Node {
    state: State,
    g: f64,
    via: Via,
    key: EvalKey,
    anchor: Option<Arc<Anchor>>,
    achieved: Option<FactSet>,
}

struct SeenEntry {
    best_g: f64,
    best_node: u64,
}

struct HeapEntry {
    key: EvalKey,
    seq: u64,
    node: u64,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &HeapEntry) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &HeapEntry) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &HeapEntry) -> Ordering {
        self.key.cmp(&other.key).then(self.seq.cmp(&other.seq))
    }
}

enum Phase {
    Search,
    AwaitTraceback { collected: Vec<PlanStep>, cost: f64 },
    Done(AgentOutcome),
}

#[derive(Clone, Debug)]
enum AgentOutcome {
    Solved { steps: Vec<PlanStep>, cost: f64 },
    Unsolvable,
    TimedOut,
}

struct Agent<N: Net> {
    me: AgentId,
    problem: Arc<Problem>,
    net: N,
    vault: TokenVault,
    evaluator: Evaluator,
    cost_table: CostNoveltyTable,
    token_ids: HashMap<Token, u32>,
    arena: Vec<Node>,
    open: BinaryHeap<Reverse<HeapEntry>>,
    seen: HashMap<State, SeenEntry>,
    tracker: TerminationTracker,
    phase: Phase,
    goal_set: FactSet,
    can_declare: bool,
    k: KBound,
    stats: AgentStats,
    open_seq: u64,
    record_pops: bool,
    pops: Vec<PopRecord>,
    reveal: HashMap<String, String>,
}

impl<N: Net> Agent<N> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        problem: Arc<Problem>,
        me: AgentId,
        net: N,
        vault: TokenVault,
        init_tokens: &[(AgentId, Token)],
        options: &EngineOptions,
    ) -> Agent<N> {
        let n_agents = problem.num_agents();
        let evaluator = Evaluator::new(&problem, me, options.variant);
        let can_declare = problem
            .goals
            .iter()
            .all(|f| matches!(problem.owner(f), Owner::Public) || problem.owner(f) == Owner::Agent(me));
        let mut agent = Agent {
            me,
            goal_set: problem.goals.clone(),
            problem,
            net,
            vault,
            evaluator,
            cost_table: CostNoveltyTable::new(),
            token_ids: HashMap::new(),
            arena: Vec::new(),
            open: BinaryHeap::new(),
            seen: HashMap::new(),
            tracker: TerminationTracker::new(me, n_agents),
            phase: Phase::Search,
            can_declare,
            k: options.k,
            stats: AgentStats::default(),
            open_seq: 0,
            record_pops: options.record_pops,
            pops: Vec::new(),
            reveal: HashMap::new(),
        };
        agent.stats.agent = agent.problem.agents[me.0 as usize].clone();
        agent.bootstrap_root(init_tokens);
        agent
    }

    /// The root is the agent's view of the initial state: own and public
    /// facts in the clear, every other agent's private share as the token
    /// that agent minted for it.
    fn bootstrap_root(&mut self, init_tokens: &[(AgentId, Token)]) {
        let mut root = State::new(self.problem.init_view(self.me));
        for &(agent, token) in init_tokens {
            if agent != self.me {
                root.tokens.insert(agent, token);
            }
        }
        let view = self.view_ids(&root);
        let level = self.cost_table.evaluate_and_update(&view, 0.0);
        let eval = self.evaluator.evaluate(&root, &view, 0.0, level, EvalContext::Root);
        self.push_node(root, 0.0, Via::Root, eval.key, eval.anchor, eval.achieved);
    }

    fn view_ids(&mut self, state: &State) -> Vec<u32> {
        let n_facts = self.problem.num_facts() as u32;
        let mut v: Vec<u32> = state.plain.iter().map(|f| f.0).collect();
        for token in state.tokens.values() {
            let next = n_facts + self.token_ids.len() as u32;
            let id = *self.token_ids.entry(*token).or_insert(next);
            v.push(id);
        }
        v.sort_unstable();
        v
    }

    fn push_node(
        &mut self,
        state: State,
        g: f64,
        via: Via,
        key: EvalKey,
        anchor: Option<Arc<Anchor>>,
        achieved: Option<FactSet>,
    ) -> u64 {
        let node = self.arena.len() as u64;
        self.seen.insert(state.clone(), SeenEntry { best_g: g, best_node: node });
        let seq = self.open_seq;
        self.open_seq += 1;
        self.open.push(Reverse(HeapEntry { key: key.clone(), seq, node }));
        self.arena.push(Node { state, g, via, key, anchor, achieved });
        node
    }

    fn handle(&mut self, env: Envelope) {
        match env.msg {
            Message::State { node, g, state } => {
                self.stats.messages_received += 1;
                self.tracker.note_state_received(env.sender);
                self.open_received(env.sender, node, g, state);
            }
            Message::TracebackRequest { node } => {
                let (steps, continuation) = self.trace_local(node);
                self.net
                    .send(env.sender, &Message::TracebackSegment { steps, continuation });
            }
            Message::TracebackSegment { steps, continuation } => {
                if let Phase::AwaitTraceback { collected, cost } =
                    std::mem::replace(&mut self.phase, Phase::Search)
                {
                    let mut full = steps;
                    full.extend(collected);
                    let cost_copy = cost;
                    self.advance_traceback(full, cost_copy, continuation);
                }
            }
            Message::Idle { sent, received } => {
                self.tracker.note_peer_idle(env.sender, sent, received);
            }
            Message::Resume => self.tracker.note_peer_resumed(env.sender),
            Message::Terminate => {
                self.phase = Phase::Done(AgentOutcome::Unsolvable);
            }
            Message::SolutionFound { cost, steps } => {
                self.phase = Phase::Done(AgentOutcome::Solved { steps, cost });
            }
        }
    }

    fn open_received(&mut self, origin: AgentId, origin_node: u64, g: f64, encrypted: State) {
        let state = decrypt_incoming(&self.problem, &encrypted, &self.vault)
            .expect("peer states carry this agent's token");
        if let Some(entry) = self.seen.get(&state) {
            if entry.best_g <= g {
                self.stats.duplicates += 1;
                return;
            }
        }
        let view = self.view_ids(&state);
        let level = self.cost_table.evaluate_and_update(&view, g);
        // Received states bypass the width bound: pruning them would lose
        // the only copies of foreign progress.
        let eval = self.evaluator.evaluate(&state, &view, g, level, EvalContext::Received);
        self.push_node(state, g, Via::Received { origin, origin_node }, eval.key, eval.anchor, eval.achieved);
        self.stats.states_received_opened += 1;
    }

    fn step_search(&mut self) {
        let has_work = !self.open.is_empty();
        match self.tracker.decide(has_work) {
            TerminationAction::AnnounceIdle => {
                let (sent, received) = self.tracker.idle_payload();
                self.net.broadcast(&Message::Idle { sent, received });
                return;
            }
            TerminationAction::AnnounceResume => {
                self.net.broadcast(&Message::Resume);
            }
            TerminationAction::Terminated => {
                self.net.broadcast(&Message::Terminate);
                self.phase = Phase::Done(AgentOutcome::Unsolvable);
                return;
            }
            TerminationAction::Continue => {
                if !has_work {
                    return;
                }
            }
        }
        self.expand_best();
    }

    fn expand_best(&mut self) {
        let node_id = loop {
            let Some(Reverse(entry)) = self.open.pop() else { return };
            let node = &self.arena[entry.node as usize];
            let current = self.seen.get(&node.state).expect("open nodes are in the seen table");
            if current.best_node == entry.node {
                break entry.node;
            }
        };
        let (state, g, via, key) = {
            let n = &self.arena[node_id as usize];
            (n.state.clone(), n.g, n.via.clone(), n.key.clone())
        };
        if self.record_pops {
            self.pops.push(PopRecord {
                plain: state.plain.iter().map(|f| f.0).collect(),
                g,
                key,
            });
        }

        if self.can_declare && self.goal_set.is_subset_of(&state.plain) {
            self.advance_traceback(Vec::new(), g, Some((self.me, node_id)));
            return;
        }

        if let Via::Local { action, .. } = via {
            if self.problem.actions[self.me.0 as usize][self.local_index(action)].is_public {
                let encrypted = encrypt_outgoing(&self.problem, &state, &mut self.vault);
                let n = self.problem.num_agents();
                for i in 0..n {
                    let to = AgentId(i as u16);
                    if to != self.me {
                        self.tracker.note_state_sent(to);
                        self.stats.messages_sent += 1;
                    }
                }
                self.net.broadcast(&Message::State { node: node_id, g, state: encrypted });
            }
        }

        self.stats.expanded += 1;
        let my_actions = self.me.0 as usize;
        for idx in 0..self.problem.actions[my_actions].len() {
            let (child, g_child, action_id) = {
                let action = &self.problem.actions[my_actions][idx];
                if !state.applicable(action) {
                    continue;
                }
                let child =
                    state.apply(action, &self.problem).expect("applicability was checked");
                (child, g + action.cost, action.id)
            };
            self.stats.generated += 1;
            if let Some(entry) = self.seen.get(&child) {
                if entry.best_g <= g_child {
                    self.stats.duplicates += 1;
                    continue;
                }
            }
            let view = self.view_ids(&child);
            let level = self.cost_table.evaluate_and_update(&view, g_child);
            if let Some(cap) = self.k.cap() {
                if !level.within(cap) {
                    self.stats.pruned += 1;
                    continue;
                }
            }
            let (parent_anchor, parent_achieved) = {
                let n = &self.arena[node_id as usize];
                (n.anchor.clone(), n.achieved.clone())
            };
            let eval = self.evaluator.evaluate(
                &child,
                &view,
                g_child,
                level,
                EvalContext::LocalChild {
                    parent_anchor: parent_anchor.as_ref(),
                    parent_achieved: parent_achieved.as_ref(),
                },
            );
            self.push_node(
                child,
                g_child,
                Via::Local { parent: node_id, action: action_id },
                eval.key,
                eval.anchor,
                eval.achieved,
            );
        }
    }

    fn local_index(&self, action: ActionId) -> usize {
        let actions = &self.problem.actions[self.me.0 as usize];
        actions
            .binary_search_by_key(&action, |a| a.id)
            .expect("action ids of one agent are contiguous and sorted")
    }

    fn plan_step(&mut self, action: ActionId) -> PlanStep {
        let a = &self.problem.actions[self.me.0 as usize][self.local_index(action)];
        let label = if a.is_public {
            a.name.clone()
        } else {
            let code = self.vault.action_code(a.id.0);
            self.reveal.insert(code.clone(), a.name.clone());
            code
        };
        PlanStep { agent: self.me, label }
    }

    /// Walk the local parent chain from `node` towards the root. Returns
    /// the steps in plan order plus where the chain continues, if it
    /// entered this agent through a received state.
    fn trace_local(&mut self, node: u64) -> (Vec<PlanStep>, Option<(AgentId, u64)>) {
        let mut rev = Vec::new();
        let mut cur = node;
        loop {
            match self.arena[cur as usize].via.clone() {
                Via::Root => {
                    rev.reverse();
                    return (rev, None);
                }
                Via::Local { parent, action } => {
                    rev.push(self.plan_step(action));
                    cur = parent;
                }
                Via::Received { origin, origin_node } => {
                    rev.reverse();
                    return (rev, Some((origin, origin_node)));
                }
            }
        }
    }

    /// Resolve as much of the plan as local chains allow; either finish
    /// with a broadcast solution or park waiting for a peer's segment.
    fn advance_traceback(
        &mut self,
        mut collected: Vec<PlanStep>,
        cost: f64,
        mut cont: Option<(AgentId, u64)>,
    ) {
        while let Some((agent, node)) = cont {
            if agent == self.me {
                let (mut seg, next) = self.trace_local(node);
                seg.extend(collected);
                collected = seg;
                cont = next;
            } else {
                self.net.send(agent, &Message::TracebackRequest { node });
                self.phase = Phase::AwaitTraceback { collected, cost };
                return;
            }
        }
        self.net
            .broadcast(&Message::SolutionFound { cost, steps: collected.clone() });
        self.phase = Phase::Done(AgentOutcome::Solved { steps: collected, cost });
    }

    /// One scheduler turn: digest the inbox, then either search or sit on
    /// the termination protocol. Returns false once the agent has exited.
    fn step(&mut self) -> bool {
        if matches!(self.phase, Phase::Done(_)) {
            return false;
        }
        for env in self.net.drain() {
            if matches!(self.phase, Phase::Done(_)) {
                break;
            }
            self.handle(env);
        }
        match self.phase {
            Phase::Done(_) => false,
            Phase::AwaitTraceback { .. } => {
                // Waiting on a peer segment counts as work; the agent must
                // not take part in idle detection while a plan is pending.
                let _ = self.tracker.decide(true);
                true
            }
            Phase::Search => {
                self.step_search();
                !matches!(self.phase, Phase::Done(_))
            }
        }
    }

    fn run_threaded(&mut self, abort: &AtomicBool, deadline: Option<Instant>) {
        loop {
            if matches!(self.phase, Phase::Done(_)) {
                return;
            }
            if abort.load(AtomicOrdering::Relaxed)
                || deadline.is_some_and(|d| Instant::now() >= d)
            {
                self.phase = Phase::Done(AgentOutcome::TimedOut);
                return;
            }
            let busy = matches!(self.phase, Phase::Search) && !self.open.is_empty();
            let msgs = if busy {
                self.net.drain()
            } else {
                self.net.park_drain(Duration::from_millis(5))
            };
            for env in msgs {
                if matches!(self.phase, Phase::Done(_)) {
                    break;
                }
                self.handle(env);
            }
            match self.phase {
                Phase::Done(_) => return,
                Phase::AwaitTraceback { .. } => {
                    let _ = self.tracker.decide(true);
                }
                Phase::Search => self.step_search(),
            }
        }
    }

    fn finish(self) -> AgentFinish {
        let outcome = match self.phase {
            Phase::Done(o) => o,
            _ => AgentOutcome::TimedOut,
        };
        let mut stats = self.stats;
        stats.rpg_builds = self.evaluator.rpg_builds;
        stats.max_levels = self.evaluator.max_levels_seen;
        AgentFinish { outcome, stats, pops: self.pops, reveal: self.reveal }
    }
}

struct AgentFinish {
    outcome: AgentOutcome,
    stats: AgentStats,
    pops: Vec<PopRecord>,
    reveal: HashMap<String, String>,
}

fn check_options(problem: &Problem, options: &EngineOptions) -> Result<(), EngineError> {
    if problem.num_agents() > 255 {
        return Err(EngineError::TooManyAgents(problem.num_agents()));
    }
    if options.k != KBound::Unbounded && !options.allow_zero_cost {
        let zero = problem.all_actions().any(|a| a.cost == 0.0);
        if zero {
            return Err(EngineError::ZeroCostWithPruning);
        }
    }
    Ok(())
}

fn init_tokens(problem: &Problem, vaults: &mut [TokenVault]) -> Vec<(AgentId, Token)> {
    vaults
        .iter_mut()
        .enumerate()
        .map(|(i, vault)| {
            let agent = AgentId(i as u16);
            (agent, vault.token_for(&problem.init_private_of(agent)))
        })
        .collect()
}

fn aggregate(
    finishes: Vec<AgentFinish>,
    scheduler_steps: Option<u64>,
    wire: Option<WireLog>,
    timed_out: bool,
    record_pops: bool,
) -> RunResult {
    let reveals: Vec<&HashMap<String, String>> = finishes.iter().map(|f| &f.reveal).collect();
    let mut outcome = if timed_out { Outcome::TimedOut } else { Outcome::Unsolvable };
    for f in &finishes {
        if let AgentOutcome::Solved { steps, cost } = &f.outcome {
            let plan = steps
                .iter()
                .map(|s| PlanStep {
                    agent: s.agent,
                    label: reveals[s.agent.0 as usize]
                        .get(&s.label)
                        .cloned()
                        .unwrap_or_else(|| s.label.clone()),
                })
                .collect();
            outcome = Outcome::Solved { plan, cost: *cost };
            break;
        }
    }
    if matches!(outcome, Outcome::Unsolvable)
        && finishes.iter().any(|f| matches!(f.outcome, AgentOutcome::TimedOut))
    {
        outcome = Outcome::TimedOut;
    }
    let mut stats = Vec::new();
    let mut pops = Vec::new();
    for f in finishes {
        stats.push(f.stats);
        pops.push(f.pops);
    }
    RunResult {
        outcome,
        stats,
        scheduler_steps,
        wire,
        pops: record_pops.then_some(pops),
    }
}

fn run_deterministic(problem: &Arc<Problem>, options: &EngineOptions) -> RunResult {
    let n = problem.num_agents();
    let bus = comm::new_bus(n, problem.num_facts(), options.record_wire);
    let mut vaults: Vec<TokenVault> = (0..n)
        .map(|i| TokenVault::new(AgentId(i as u16), options.seed))
        .collect();
    let tokens = init_tokens(problem, &mut vaults);
    let mut agents: Vec<Agent<comm::DetNet>> = vaults
        .into_iter()
        .enumerate()
        .map(|(i, vault)| {
            let me = AgentId(i as u16);
            Agent::new(
                problem.clone(),
                me,
                comm::DetNet::new(me, bus.clone()),
                vault,
                &tokens,
                options,
            )
        })
        .collect();

    let mut running: Vec<bool> = vec![true; n];
    let mut rounds: u64 = 0;
    let started = Instant::now();
    let mut timed_out = false;
    while running.iter().any(|&r| r) {
        for i in 0..n {
            if running[i] && !agents[i].step() {
                running[i] = false;
            }
        }
        rounds += 1;
        if options.max_steps.is_some_and(|cap| rounds >= cap) && running.iter().any(|&r| r) {
            timed_out = true;
            break;
        }
        if rounds.is_multiple_of(64)
            && options.time_limit.is_some_and(|lim| started.elapsed() >= lim)
            && running.iter().any(|&r| r)
        {
            timed_out = true;
            break;
        }
    }

    let wire = bus.borrow_mut().take_capture();
    let finishes: Vec<AgentFinish> = agents.into_iter().map(Agent::finish).collect();
    aggregate(finishes, Some(rounds), wire, timed_out, options.record_pops)
}

fn run_concurrent(problem: &Arc<Problem>, options: &EngineOptions) -> RunResult {
    let n = problem.num_agents();
    let capture = options.record_wire.then(|| Arc::new(Mutex::new(WireLog::default())));
    let mesh = comm::thread_mesh(n, problem.num_facts(), capture.clone());
    let mut vaults: Vec<TokenVault> = (0..n)
        .map(|i| TokenVault::new(AgentId(i as u16), options.seed))
        .collect();
    let tokens = init_tokens(problem, &mut vaults);
    let abort = Arc::new(AtomicBool::new(false));
    let deadline = options.time_limit.map(|lim| Instant::now() + lim);

    let mut handles = Vec::with_capacity(n);
    for (net, vault) in mesh.into_iter().zip(vaults) {
        let me = net.me;
        let mut agent = Agent::new(problem.clone(), me, net, vault, &tokens, options);
        let abort = abort.clone();
        handles.push(std::thread::spawn(move || {
            agent.run_threaded(&abort, deadline);
            agent.finish()
        }));
    }
    let finishes: Vec<AgentFinish> =
        handles.into_iter().map(|h| h.join().expect("agent threads do not panic")).collect();
    let timed_out = finishes.iter().all(|f| matches!(f.outcome, AgentOutcome::TimedOut));
    let wire = capture.map(|c| {
        Arc::try_unwrap(c)
            .unwrap_or_else(|arc| {
                Mutex::new(WireLog {
                    frames: std::mem::take(&mut arc.lock().unwrap().frames),
                })
            })
            .into_inner()
            .unwrap()
    });
    aggregate(finishes, None, wire, timed_out, options.record_pops)
}

/// Run the full multi-agent search to completion.
pub fn run(problem: &Problem, options: &EngineOptions) -> Result<RunResult, EngineError> {
    check_options(problem, options)?;
    let problem = Arc::new(problem.clone());
    Ok(match options.mode {
        ExecMode::Deterministic => run_deterministic(&problem, options),
        ExecMode::Concurrent => run_concurrent(&problem, options),
    })
}
