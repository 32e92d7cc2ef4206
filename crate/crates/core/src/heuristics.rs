//! Goal-distance estimators and the evaluation keys built from them.
//!
//! Everything here is computed from one agent's own actions under delete
//! relaxation. Foreign tokens are inert: they are never preconditions of
//! own actions and never appear in a relaxed graph.
//!
//! The expensive object is the relaxed planning graph (RPG). The cheap
//! anchor-based estimators rebuild it only when a foreign state enters the
//! open list (f5) or once per run from the initial state (f6); the others
//! rebuild it per evaluated state.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::model::{ActionId, AgentId, FactId, FactSet, Problem, State};
use crate::novelty::{NoveltyLevel, PartitionKey, PartitionNoveltyTable};

const UNREACHED: u16 = u16::MAX;

/// Delete relaxation of an action: preconditions and add effects only.
#[derive(Clone, Debug)]
pub struct RelaxedAction {
    pub id: ActionId,
    pub prec: FactSet,
    pub add: FactSet,
}

pub fn relax(problem: &Problem, agent: AgentId) -> Vec<RelaxedAction> {
    problem.actions[agent.0 as usize]
        .iter()
        .map(|a| RelaxedAction { id: a.id, prec: a.prec.clone(), add: a.add.clone() })
        .collect()
}

/// Layered reachability structure of a relaxed task.
pub struct Rpg {
    fact_layer: Vec<u16>,
    action_layer: Vec<u16>,
    /// Number of fact layers, counting the seed layer.
    pub levels: u16,
    pub reached: FactSet,
    /// Facts granted for free after the first fixpoint; they need no
    /// achiever during extraction.
    pub injected: FactSet,
}

impl Rpg {
    pub fn build(seed: &FactSet, actions: &[RelaxedAction], n_facts: usize) -> Rpg {
        let mut rpg = Rpg {
            fact_layer: vec![UNREACHED; n_facts],
            action_layer: vec![UNREACHED; actions.len()],
            levels: 1,
            reached: seed.clone(),
            injected: FactSet::new(n_facts),
        };
        for id in seed.iter() {
            rpg.fact_layer[id.0 as usize] = 0;
        }
        rpg.saturate(actions);
        rpg
    }

    /// Extend `build` with a second phase: preconditions of own actions
    /// that own actions cannot add, and that the first fixpoint missed,
    /// are granted at the frontier, then layering continues. This models
    /// facts some other agent would have to provide.
    pub fn build_two_step(seed: &FactSet, actions: &[RelaxedAction], n_facts: usize) -> Rpg {
        let mut rpg = Rpg::build(seed, actions, n_facts);
        let own_addable = {
            let mut s = FactSet::new(n_facts);
            for a in actions {
                s.union_with(&a.add);
            }
            s
        };
        let mut injected = FactSet::new(n_facts);
        for a in actions {
            for p in a.prec.iter() {
                if !own_addable.contains(p) && !rpg.reached.contains(p) {
                    injected.insert(p);
                }
            }
        }
        if !injected.is_empty() {
            let frontier = rpg.levels - 1;
            for id in injected.iter() {
                rpg.fact_layer[id.0 as usize] = frontier;
                rpg.reached.insert(id);
            }
            rpg.injected = injected;
            rpg.saturate(actions);
        }
        rpg
    }

    fn saturate(&mut self, actions: &[RelaxedAction]) {
        loop {
            let layer = self.levels - 1;
            let mut new_facts = Vec::new();
            for (i, a) in actions.iter().enumerate() {
                if self.action_layer[i] != UNREACHED {
                    continue;
                }
                if a.prec.is_subset_of(&self.reached) {
                    self.action_layer[i] = layer;
                    for f in a.add.iter() {
                        if !self.reached.contains(f) {
                            new_facts.push(f);
                        }
                    }
                }
            }
            if new_facts.is_empty() {
                return;
            }
            for f in new_facts {
                self.reached.insert(f);
                self.fact_layer[f.0 as usize] = layer + 1;
            }
            self.levels += 1;
        }
    }

    pub fn fact_layer_of(&self, id: FactId) -> Option<u16> {
        let l = self.fact_layer[id.0 as usize];
        (l != UNREACHED).then_some(l)
    }
}

/// Relaxed plan pulled backwards out of an RPG.
pub struct Extraction {
    /// Indices into the relaxed action slice, in the order chosen.
    pub chosen: Vec<usize>,
    pub add_union: FactSet,
}

impl Extraction {
    pub fn count(&self) -> usize {
        self.chosen.len()
    }
}

/// FF-style extraction: every target outside the seed layer picks the
/// achiever sitting in the earliest possible action layer, lowest id
/// winning ties, and that achiever's preconditions become subgoals.
/// Callers must pass targets inside `rpg.reached`.
pub fn extract_plan(
    rpg: &Rpg,
    actions: &[RelaxedAction],
    targets: &FactSet,
    n_facts: usize,
) -> Extraction {
    let mut scheduled = FactSet::new(n_facts);
    let mut per_layer: Vec<Vec<FactId>> = vec![Vec::new(); rpg.levels as usize];
    let schedule = |f: FactId, scheduled: &mut FactSet, per_layer: &mut Vec<Vec<FactId>>| {
        let layer = rpg.fact_layer[f.0 as usize];
        debug_assert_ne!(layer, UNREACHED, "extraction target must be reached");
        if layer == 0 || rpg.injected.contains(f) || scheduled.contains(f) {
            return;
        }
        scheduled.insert(f);
        per_layer[layer as usize].push(f);
    };
    for f in targets.iter() {
        schedule(f, &mut scheduled, &mut per_layer);
    }

    let mut chosen_mask = vec![false; actions.len()];
    let mut chosen = Vec::new();
    let mut add_union = FactSet::new(n_facts);
    for layer in (1..rpg.levels as usize).rev() {
        let mut queue = std::mem::take(&mut per_layer[layer]);
        queue.sort_unstable();
        for f in queue {
            let achiever = actions
                .iter()
                .enumerate()
                .filter(|(i, a)| {
                    a.add.contains(f) && rpg.action_layer[*i] == layer as u16 - 1
                })
                .map(|(i, a)| (a.id, i))
                .min()
                .map(|(_, i)| i)
                .expect("reached fact has an achiever in the previous layer");
            if !chosen_mask[achiever] {
                chosen_mask[achiever] = true;
                chosen.push(achiever);
                add_union.union_with(&actions[achiever].add);
                for p in actions[achiever].prec.iter() {
                    schedule(p, &mut scheduled, &mut per_layer);
                }
            }
        }
    }
    Extraction { chosen, add_union }
}

/// Search configurations: which components make up the evaluation key.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FVariant {
    /// Plain relaxed-plan count, no novelty preference.
    Hff,
    /// Novelty over relaxed-plan-count partitions, then the count.
    F1,
    /// Novelty, false goals, relaxed-plan count.
    F2,
    /// Novelty, unreachable goals, false goals, relaxed-plan count.
    F3,
    /// As F3 with the never-infinite relaxed-plan estimate.
    F4,
    /// Novelty, false goals, pending relevant facts from the last anchor.
    F5,
    /// As F5 with the anchor fixed at the initial state.
    F6,
    /// Cost novelty level then accumulated cost; used for width profiling.
    WidthProbe,
}

impl FVariant {
    pub fn parse(name: &str) -> Option<FVariant> {
        Some(match name {
            "hff" => FVariant::Hff,
            "f1" => FVariant::F1,
            "f2" => FVariant::F2,
            "f3" => FVariant::F3,
            "f4" => FVariant::F4,
            "f5" => FVariant::F5,
            "f6" => FVariant::F6,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FVariant::Hff => "hff",
            FVariant::F1 => "f1",
            FVariant::F2 => "f2",
            FVariant::F3 => "f3",
            FVariant::F4 => "f4",
            FVariant::F5 => "f5",
            FVariant::F6 => "f6",
            FVariant::WidthProbe => "wg",
        }
    }

    pub const ALL_NAMED: [FVariant; 7] = [
        FVariant::Hff,
        FVariant::F1,
        FVariant::F2,
        FVariant::F3,
        FVariant::F4,
        FVariant::F5,
        FVariant::F6,
    ];
}

/// Lexicographic sort key of an open-list entry; smaller is better.
/// Components never contain NaN, so the bitwise total order is the
/// numeric one.
#[derive(Clone, PartialEq, Debug)]
pub struct EvalKey(pub Vec<f64>);

impl Eq for EvalKey {}

impl PartialOrd for EvalKey {
    fn partial_cmp(&self, other: &EvalKey) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EvalKey {
    fn cmp(&self, other: &EvalKey) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

/// Relevant-fact set fixed at an anchor state; nodes below the anchor
/// share it.
pub struct Anchor {
    pub relevant: FactSet,
}

/// Where a node being evaluated came from, as far as anchors care.
pub enum EvalContext<'a> {
    Root,
    LocalChild {
        parent_anchor: Option<&'a Arc<Anchor>>,
        parent_achieved: Option<&'a FactSet>,
    },
    Received,
}

/// Evaluation outcome attached to a search node.
pub struct NodeEval {
    pub key: EvalKey,
    pub anchor: Option<Arc<Anchor>>,
    pub achieved: Option<FactSet>,
}

struct F6Graphs {
    super_actions: Vec<RelaxedAction>,
    super_rpg: Rpg,
}

/// Per-agent heuristic state: relaxed own actions, partition-novelty
/// memory, anchor machinery and instrumentation counters.
pub struct Evaluator {
    variant: FVariant,
    goal_view: FactSet,
    relaxed_own: Vec<RelaxedAction>,
    n_facts: usize,
    partition: PartitionNoveltyTable,
    pub max_levels_seen: u16,
    pub rpg_builds: u64,
    init_anchor: Option<Arc<Anchor>>,
    f6: Option<F6Graphs>,
}

impl Evaluator {
    pub fn new(problem: &Problem, agent: AgentId, variant: FVariant) -> Evaluator {
        let n_facts = problem.num_facts();
        let mut ev = Evaluator {
            variant,
            goal_view: problem.observable_goals(agent),
            relaxed_own: relax(problem, agent),
            n_facts,
            partition: PartitionNoveltyTable::new(),
            max_levels_seen: 0,
            rpg_builds: 0,
            init_anchor: None,
            f6: None,
        };
        let init_view = problem.init_view(agent);
        match variant {
            FVariant::F5 => {
                let anchor = ev.build_anchor(&init_view);
                ev.init_anchor = Some(anchor);
            }
            FVariant::F6 => {
                // One construction event: the two-phase graph for the
                // relevant set, and the doubly relaxed layering reused by
                // every later plan extraction.
                let two_step = Rpg::build_two_step(&init_view, &ev.relaxed_own, n_facts);
                ev.rpg_builds += 1;
                ev.max_levels_seen = ev.max_levels_seen.max(two_step.levels);
                // Precondition filter for the doubly relaxed task: the
                // fixpoint before injection. Facts reached only through
                // injected support do not qualify.
                let own_reach = Rpg::build(&init_view, &ev.relaxed_own, n_facts).reached;
                let targets = ev.goal_view.intersection(&two_step.reached);
                let extraction = extract_plan(&two_step, &ev.relaxed_own, &targets, n_facts);
                let mut relevant = FactSet::new(n_facts);
                for &i in &extraction.chosen {
                    relevant.union_with(&ev.relaxed_own[i].prec);
                }
                ev.init_anchor = Some(Arc::new(Anchor { relevant }));
                let super_actions: Vec<RelaxedAction> = ev
                    .relaxed_own
                    .iter()
                    .map(|a| RelaxedAction {
                        id: a.id,
                        prec: a.prec.intersection(&own_reach),
                        add: a.add.clone(),
                    })
                    .collect();
                let super_rpg = Rpg::build(&init_view, &super_actions, n_facts);
                ev.f6 = Some(F6Graphs { super_actions, super_rpg });
            }
            _ => {}
        }
        ev
    }

    pub fn goal_view(&self) -> &FactSet {
        &self.goal_view
    }

    fn build_rpg(&mut self, plain: &FactSet) -> Rpg {
        let rpg = Rpg::build(plain, &self.relaxed_own, self.n_facts);
        self.rpg_builds += 1;
        self.max_levels_seen = self.max_levels_seen.max(rpg.levels);
        rpg
    }

    fn build_anchor(&mut self, plain: &FactSet) -> Arc<Anchor> {
        let rpg = self.build_rpg(plain);
        let targets = self.goal_view.intersection(&rpg.reached);
        let extraction = extract_plan(&rpg, &self.relaxed_own, &targets, self.n_facts);
        let mut relevant = FactSet::new(self.n_facts);
        for &i in &extraction.chosen {
            relevant.union_with(&self.relaxed_own[i].prec);
        }
        Arc::new(Anchor { relevant })
    }

    /// Relaxed-plan action count towards the observable goals; infinite
    /// when some observable goal is out of relaxed reach.
    pub fn h_ff(&mut self, plain: &FactSet) -> f64 {
        let rpg = self.build_rpg(plain);
        self.h_ff_from(&rpg)
    }

    fn h_ff_from(&self, rpg: &Rpg) -> f64 {
        if !self.goal_view.is_subset_of(&rpg.reached) {
            return f64::INFINITY;
        }
        extract_plan(rpg, &self.relaxed_own, &self.goal_view, self.n_facts).count() as f64
    }

    /// Observable goals false in the state.
    pub fn count_false_goals(&self, plain: &FactSet) -> f64 {
        (self.goal_view.len() - self.goal_view.intersection(plain).len()) as f64
    }

    /// Observable goals outside the relaxed fixpoint.
    pub fn count_unreachable_goals(&self, rpg: &Rpg) -> f64 {
        (self.goal_view.len() - self.goal_view.intersection(&rpg.reached).len()) as f64
    }

    /// Finite goal-distance estimate: plan count to the reachable goals
    /// plus, per unreachable goal, the deepest graph seen so far.
    pub fn h_ff_plus(&mut self, rpg: &Rpg) -> f64 {
        let reachable = self.goal_view.intersection(&rpg.reached);
        let unreachable = (self.goal_view.len() - reachable.len()) as f64;
        let count = extract_plan(rpg, &self.relaxed_own, &reachable, self.n_facts).count() as f64;
        count + unreachable * f64::from(self.max_levels_seen)
    }

    /// Achieved estimate for a state that arrived from another agent under
    /// the initial-state anchor: whatever a doubly relaxed own plan to the
    /// state's facts would have added, plus what already holds. Targets
    /// outside even the doubly relaxed reach are skipped.
    fn f6_incoming_achieved(&self, plain: &FactSet, relevant: &FactSet) -> FactSet {
        let graphs = self.f6.as_ref().expect("f6 graphs exist for the f6 variant");
        let targets = plain.intersection(&graphs.super_rpg.reached);
        let extraction =
            extract_plan(&graphs.super_rpg, &graphs.super_actions, &targets, self.n_facts);
        let mut achieved = extraction.add_union;
        achieved.union_with(plain);
        achieved.intersect_with(relevant);
        achieved
    }

    /// Full evaluation of a state entering the open list. `novelty_g` is
    /// the already-computed cost-novelty level of the state.
    pub fn evaluate(
        &mut self,
        state: &State,
        view: &[u32],
        g: f64,
        novelty_g: NoveltyLevel,
        ctx: EvalContext<'_>,
    ) -> NodeEval {
        let plain = &state.plain;
        match self.variant {
            FVariant::Hff => {
                let h = self.h_ff(plain);
                NodeEval { key: EvalKey(vec![h]), anchor: None, achieved: None }
            }
            FVariant::WidthProbe => NodeEval {
                key: EvalKey(vec![f64::from(novelty_g.rank()), g]),
                anchor: None,
                achieved: None,
            },
            FVariant::F1 => {
                let h = self.h_ff(plain);
                self.keyed(view, vec![h], None, None)
            }
            FVariant::F2 => {
                let rpg = self.build_rpg(plain);
                let h = self.h_ff_from(&rpg);
                self.keyed(view, vec![self.count_false_goals(plain), h], None, None)
            }
            FVariant::F3 => {
                let rpg = self.build_rpg(plain);
                let h = self.h_ff_from(&rpg);
                let comps =
                    vec![self.count_unreachable_goals(&rpg), self.count_false_goals(plain), h];
                self.keyed(view, comps, None, None)
            }
            FVariant::F4 => {
                let rpg = self.build_rpg(plain);
                let h = self.h_ff_plus(&rpg);
                let comps =
                    vec![self.count_unreachable_goals(&rpg), self.count_false_goals(plain), h];
                self.keyed(view, comps, None, None)
            }
            FVariant::F5 | FVariant::F6 => {
                let (anchor, achieved) = self.anchor_for(plain, ctx);
                let pending =
                    (anchor.relevant.len() - achieved.intersection(&anchor.relevant).len()) as f64;
                let comps = vec![self.count_false_goals(plain), pending];
                self.keyed(view, comps, Some(anchor), Some(achieved))
            }
        }
    }

    fn anchor_for(&mut self, plain: &FactSet, ctx: EvalContext<'_>) -> (Arc<Anchor>, FactSet) {
        let init = || self.init_anchor.clone().expect("anchor variants build an initial anchor");
        match ctx {
            EvalContext::Root => {
                let anchor = init();
                let achieved = anchor.relevant.intersection(plain);
                (anchor, achieved)
            }
            EvalContext::LocalChild { parent_anchor, parent_achieved } => {
                let anchor = parent_anchor.cloned().unwrap_or_else(init);
                let mut achieved = anchor.relevant.intersection(plain);
                if let Some(prev) = parent_achieved {
                    achieved.union_with(prev);
                }
                (anchor, achieved)
            }
            EvalContext::Received => match self.variant {
                FVariant::F5 => {
                    let anchor = self.build_anchor(plain);
                    let achieved = anchor.relevant.intersection(plain);
                    (anchor, achieved)
                }
                _ => {
                    let anchor = init();
                    let achieved = self.f6_incoming_achieved(plain, &anchor.relevant);
                    (anchor, achieved)
                }
            },
        }
    }

    fn keyed(
        &mut self,
        view: &[u32],
        comps: Vec<f64>,
        anchor: Option<Arc<Anchor>>,
        achieved: Option<FactSet>,
    ) -> NodeEval {
        let w = self.partition.evaluate_and_update(view, &PartitionKey::new(&comps));
        let mut key = Vec::with_capacity(comps.len() + 1);
        key.push(f64::from(w.rank()));
        key.extend(comps);
        NodeEval { key: EvalKey(key), anchor, achieved }
    }
}
