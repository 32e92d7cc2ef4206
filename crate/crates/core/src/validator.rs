//! Plan checking with full knowledge of every agent's facts.
//!
//! The planner itself never sees the joint state; this module does, so
//! test harnesses and the command line can confirm that a reconstructed
//! plan really executes from the initial state to the goals.

use crate::model::Problem;

#[derive(Debug)]
pub struct ValidationReport {
    pub valid: bool,
    pub reason: Option<String>,
    pub cost: f64,
    pub steps_applied: usize,
}

impl ValidationReport {
    fn fail(reason: String, cost: f64, steps_applied: usize) -> ValidationReport {
        ValidationReport { valid: false, reason: Some(reason), cost, steps_applied }
    }
}

/// Execute `(agent, action)` pairs in order against the joint state.
pub fn validate_plan(problem: &Problem, plan: &[(String, String)]) -> ValidationReport {
    let mut state = problem.init.clone();
    let mut cost = 0.0;
    for (i, (agent_name, action_name)) in plan.iter().enumerate() {
        let Some(agent) = problem.agent_by_name(agent_name) else {
            return ValidationReport::fail(format!("step {i}: unknown agent {agent_name}"), cost, i);
        };
        let Some(action) = problem.action_of(agent, action_name) else {
            return ValidationReport::fail(
                format!("step {i}: agent {agent_name} has no action {action_name}"),
                cost,
                i,
            );
        };
        if !action.prec.is_subset_of(&state) {
            let mut missing = action.prec.clone();
            missing.subtract(&state);
            let names: Vec<&str> = missing.iter().map(|f| problem.fact_name(f)).collect();
            return ValidationReport::fail(
                format!("step {i}: {action_name} requires {}", names.join(", ")),
                cost,
                i,
            );
        }
        state.subtract(&action.del);
        state.union_with(&action.add);
        cost += action.cost;
    }
    if !problem.goals.is_subset_of(&state) {
        let mut missing = problem.goals.clone();
        missing.subtract(&state);
        let names: Vec<&str> = missing.iter().map(|f| problem.fact_name(f)).collect();
        return ValidationReport::fail(
            format!("goals not reached: {}", names.join(", ")),
            cost,
            plan.len(),
        );
    }
    ValidationReport { valid: true, reason: None, cost, steps_applied: plan.len() }
}
