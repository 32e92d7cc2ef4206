//! Problem loading: JSON documents to grounded [`Problem`] values.
//!
//! Identifier assignment is deterministic: agents, facts and actions are
//! sorted lexicographically by name before ids are handed out, so the same
//! document bytes always ground to the same structure.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{Action, ActionId, AgentId, Fact, FactId, FactSet, Owner, Problem};
use crate::privacy;

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    Parse(String),
    #[error("invalid problem: {0}")]
    Semantic(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    version: u32,
    agents: Vec<String>,
    facts: Vec<String>,
    init: Vec<String>,
    goals: Vec<String>,
    actions: Vec<ActionDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionDoc {
    name: String,
    agent: String,
    prec: Vec<String>,
    add: Vec<String>,
    del: Vec<String>,
    #[serde(default)]
    cost: Option<f64>,
}

pub fn load_problem(path: &Path) -> Result<Problem, IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    load_problem_from_str(&text)
}

pub fn load_problem_from_str(text: &str) -> Result<Problem, IngestError> {
    let doc: ProblemDoc =
        serde_json::from_str(text).map_err(|e| IngestError::Parse(e.to_string()))?;
    ground(doc)
}

fn semantic(msg: impl Into<String>) -> IngestError {
    IngestError::Semantic(msg.into())
}

fn ground(doc: ProblemDoc) -> Result<Problem, IngestError> {
    if doc.version != 1 {
        return Err(semantic(format!("unsupported version {}", doc.version)));
    }
    if doc.agents.is_empty() {
        return Err(semantic("agent list is empty"));
    }

    let mut agents = doc.agents.clone();
    agents.sort();
    if agents.windows(2).any(|w| w[0] == w[1]) {
        return Err(semantic("duplicate agent name"));
    }

    let mut fact_names = doc.facts.clone();
    fact_names.sort();
    if fact_names.windows(2).any(|w| w[0] == w[1]) {
        return Err(semantic("duplicate fact name"));
    }
    let n = fact_names.len();

    let resolve_fact = |name: &str, ctx: &str| -> Result<FactId, IngestError> {
        fact_names
            .binary_search_by(|f| f.as_str().cmp(name))
            .map(|i| FactId(i as u32))
            .map_err(|_| semantic(format!("{ctx} references unknown fact {name:?}")))
    };
    let resolve_set = |names: &[String], ctx: &str| -> Result<FactSet, IngestError> {
        let mut out = FactSet::new(n);
        for name in names {
            out.insert(resolve_fact(name, ctx)?);
        }
        Ok(out)
    };

    let init = resolve_set(&doc.init, "init")?;
    let goals = resolve_set(&doc.goals, "goals")?;

    let mut seen_actions: HashSet<&str> = HashSet::new();
    for a in &doc.actions {
        if !seen_actions.insert(a.name.as_str()) {
            return Err(semantic(format!("duplicate action name {:?}", a.name)));
        }
    }

    let mut sorted_actions: Vec<&ActionDoc> = doc.actions.iter().collect();
    sorted_actions.sort_by(|a, b| a.name.cmp(&b.name));

    let mut actions: Vec<Vec<Action>> = vec![Vec::new(); agents.len()];
    for (idx, a) in sorted_actions.iter().enumerate() {
        let agent = agents
            .iter()
            .position(|g| *g == a.agent)
            .map(|i| AgentId(i as u16))
            .ok_or_else(|| {
                semantic(format!("action {:?} names unknown agent {:?}", a.name, a.agent))
            })?;
        let cost = a.cost.unwrap_or(1.0);
        if !cost.is_finite() || cost < 0.0 {
            return Err(semantic(format!("action {:?} has invalid cost {cost}", a.name)));
        }
        let ctx = format!("action {:?}", a.name);
        let add = resolve_set(&a.add, &ctx)?;
        let del = resolve_set(&a.del, &ctx)?;
        if add.iter().any(|id| del.contains(id)) {
            return Err(semantic(format!("action {:?} adds and deletes the same fact", a.name)));
        }
        actions[agent.0 as usize].push(Action {
            id: ActionId(idx as u32),
            name: a.name.clone(),
            agent,
            prec: resolve_set(&a.prec, &ctx)?,
            add,
            del,
            cost,
            is_public: true,
        });
    }

    let facts = fact_names
        .into_iter()
        .enumerate()
        .map(|(i, name)| Fact { id: FactId(i as u32), name, owner: Owner::Public })
        .collect();

    let mut problem = Problem { agents, facts, actions, init, goals };
    privacy::label(&mut problem);
    Ok(problem)
}

/// One copy of the problem per goal fact, ordered by goal id; everything but
/// the goal set is carried over unchanged.
pub fn split_single_goal(problem: &Problem) -> Vec<Problem> {
    problem
        .goals
        .iter()
        .map(|goal| {
            let mut copy = problem.clone();
            copy.goals = FactSet::from_ids(problem.num_facts(), [goal]);
            copy
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "version": 1,
        "agents": ["beta", "alpha"],
        "facts": ["box_here", "box_there", "beta_arm_ready"],
        "init": ["box_here", "beta_arm_ready"],
        "goals": ["box_there"],
        "actions": [
            {"name": "push", "agent": "alpha",
             "prec": ["box_here"], "add": ["box_there"], "del": ["box_here"]},
            {"name": "flex", "agent": "beta",
             "prec": ["beta_arm_ready"], "add": [], "del": ["beta_arm_ready"], "cost": 2.5}
        ]
    }"#;

    #[test]
    fn loads_and_assigns_lexicographic_ids() {
        let p = load_problem_from_str(TOY).unwrap();
        assert_eq!(p.agents, vec!["alpha", "beta"]);
        let names: Vec<&str> = p.facts.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["beta_arm_ready", "box_here", "box_there"]);
        // "flex" < "push" lexicographically, so flex gets id 0.
        let flex = p.action_of(AgentId(1), "flex").unwrap();
        let push = p.action_of(AgentId(0), "push").unwrap();
        assert_eq!(flex.id, ActionId(0));
        assert_eq!(push.id, ActionId(1));
        assert_eq!(flex.cost, 2.5);
        assert_eq!(push.cost, 1.0);
        assert!(p.init.contains(p.fact_by_name("box_here").unwrap()));
        assert!(p.goals.contains(p.fact_by_name("box_there").unwrap()));
    }

    #[test]
    fn load_is_deterministic() {
        let a = load_problem_from_str(TOY).unwrap();
        let b = load_problem_from_str(TOY).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = load_problem_from_str("{not json").unwrap_err();
        assert!(matches!(err, IngestError::Parse(_)));
    }

    #[test]
    fn unknown_field_is_a_parse_error() {
        let err = load_problem_from_str(r#"{"version":1,"agents":[],"facts":[],"init":[],"goals":[],"actions":[],"extra":1}"#)
            .unwrap_err();
        assert!(matches!(err, IngestError::Parse(_)));
    }

    #[test]
    fn ghost_fact_is_a_semantic_error() {
        let text = TOY.replace("\"box_there\"],", "\"box_missing\"],");
        let err = load_problem_from_str(&text).unwrap_err();
        assert!(matches!(err, IngestError::Semantic(_)), "{err}");
    }

    #[test]
    fn negative_cost_rejected() {
        let text = TOY.replace("2.5", "-1.0");
        let err = load_problem_from_str(&text).unwrap_err();
        assert!(matches!(err, IngestError::Semantic(_)));
    }

    #[test]
    fn duplicate_names_rejected() {
        let dup_agent = TOY.replace(r#"["beta", "alpha"]"#, r#"["beta", "beta"]"#);
        assert!(matches!(load_problem_from_str(&dup_agent).unwrap_err(), IngestError::Semantic(_)));
        let dup_action = TOY.replace("\"flex\"", "\"push\"");
        assert!(matches!(load_problem_from_str(&dup_action).unwrap_err(), IngestError::Semantic(_)));
    }

    #[test]
    fn version_must_be_one() {
        let text = TOY.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(load_problem_from_str(&text).unwrap_err(), IngestError::Semantic(_)));
    }

    #[test]
    fn overlapping_add_delete_rejected() {
        let text = TOY.replace(
            r#""add": ["box_there"], "del": ["box_here"]"#,
            r#""add": ["box_there"], "del": ["box_there"]"#,
        );
        assert!(matches!(load_problem_from_str(&text).unwrap_err(), IngestError::Semantic(_)));
    }

    #[test]
    fn split_single_goal_clones_everything_else() {
        let text = TOY.replace(r#""goals": ["box_there"]"#, r#""goals": ["box_there", "box_here"]"#);
        let p = load_problem_from_str(&text).unwrap();
        let parts = split_single_goal(&p);
        assert_eq!(parts.len(), 2);
        // Ordered by goal fact id, i.e. lexicographic: box_here before box_there.
        assert!(parts[0].goals.contains(p.fact_by_name("box_here").unwrap()));
        assert!(parts[1].goals.contains(p.fact_by_name("box_there").unwrap()));
        for part in &parts {
            assert_eq!(part.goals.len(), 1);
            assert_eq!(format!("{:?}", part.init), format!("{:?}", p.init));
            assert_eq!(part.agents, p.agents);
            assert_eq!(part.actions.len(), p.actions.len());
        }
    }
}
