//! Full-visibility oracles for the integration suites.
//!
//! Everything here is name-keyed and recomputed from scratch so that it
//! shares no data structures with the library under test: joint-space
//! reachability with every agent's actions applied centrally, and an
//! independent relaxed-plan estimator with the planner's tie-breaking.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use widthplan::model::{FactSet, Problem};

struct NamedAction {
    name: String,
    prec: Vec<String>,
    add: Vec<String>,
    del: Vec<String>,
}

fn named_actions(problem: &Problem) -> Vec<NamedAction> {
    let name_of = |f| problem.fact_name(f).to_string();
    let mut out: Vec<NamedAction> = problem
        .all_actions()
        .map(|a| NamedAction {
            name: a.name.clone(),
            prec: a.prec.iter().map(name_of).collect(),
            add: a.add.iter().map(name_of).collect(),
            del: a.del.iter().map(name_of).collect(),
        })
        .collect();
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

pub fn state_names(problem: &Problem, state: &FactSet) -> BTreeSet<String> {
    state.iter().map(|f| problem.fact_name(f).to_string()).collect()
}

/// Every joint state reachable when one planner with full visibility
/// applies all agents' actions.
pub fn joint_reachable(problem: &Problem) -> Vec<BTreeSet<String>> {
    let actions = named_actions(problem);
    let root = state_names(problem, &problem.init);
    let mut seen: BTreeSet<BTreeSet<String>> = BTreeSet::new();
    seen.insert(root.clone());
    let mut queue = VecDeque::from([root]);
    while let Some(s) = queue.pop_front() {
        for a in &actions {
            if !a.prec.iter().all(|p| s.contains(p)) {
                continue;
            }
            let mut t = s.clone();
            for d in &a.del {
                t.remove(d);
            }
            for f in &a.add {
                t.insert(f.clone());
            }
            if seen.insert(t.clone()) {
                queue.push_back(t);
            }
        }
    }
    seen.into_iter().collect()
}

pub fn joint_plan_exists(problem: &Problem) -> bool {
    let goals = state_names(problem, &problem.goals);
    joint_reachable(problem).iter().any(|s| goals.iter().all(|g| s.contains(g)))
}

/// Centralized delete-relaxation estimate with the planner's tie-breaking:
/// targets are pulled out layer by layer, facts in name order, and the
/// achiever is the earliest-layer action with the alphabetically first
/// name. Infinite when some goal never enters the fixpoint.
pub fn ff_oracle(problem: &Problem, plain: &FactSet) -> f64 {
    let actions = named_actions(problem);
    let mut fact_layer: BTreeMap<String, usize> = BTreeMap::new();
    let mut act_layer: BTreeMap<String, usize> = BTreeMap::new();
    for name in state_names(problem, plain) {
        fact_layer.insert(name, 0);
    }
    let mut level = 0usize;
    loop {
        let mut fresh: Vec<String> = Vec::new();
        for a in &actions {
            if act_layer.contains_key(&a.name) {
                continue;
            }
            if a.prec.iter().all(|p| fact_layer.contains_key(p)) {
                act_layer.insert(a.name.clone(), level);
                for f in &a.add {
                    if !fact_layer.contains_key(f) && !fresh.contains(f) {
                        fresh.push(f.clone());
                    }
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        level += 1;
        for f in fresh {
            fact_layer.insert(f, level);
        }
    }

    let goals = state_names(problem, &problem.goals);
    if goals.iter().any(|g| !fact_layer.contains_key(g)) {
        return f64::INFINITY;
    }

    let mut per_layer: Vec<BTreeSet<String>> = vec![BTreeSet::new(); level + 1];
    for g in &goals {
        let l = fact_layer[g];
        if l > 0 {
            per_layer[l].insert(g.clone());
        }
    }
    let mut chosen: BTreeSet<String> = BTreeSet::new();
    for l in (1..=level).rev() {
        let queue: Vec<String> = per_layer[l].iter().cloned().collect();
        for f in queue {
            let achiever = actions
                .iter()
                .filter(|a| a.add.contains(&f) && act_layer[&a.name] == l - 1)
                .map(|a| a.name.clone())
                .min()
                .expect("a layered fact has an achiever one layer below");
            if chosen.insert(achiever.clone()) {
                let a = actions.iter().find(|a| a.name == achiever).unwrap();
                for p in &a.prec {
                    let pl = fact_layer[p];
                    if pl > 0 {
                        per_layer[pl].insert(p.clone());
                    }
                }
            }
        }
    }
    chosen.len() as f64
}
