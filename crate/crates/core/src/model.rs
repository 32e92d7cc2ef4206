//! Grounded multi-agent planning task: facts, actions, states.
//!
//! Fact and action identifiers are dense indices assigned at load time, so
//! states are bit sets and every lookup is an array access. A state as seen
//! by one agent holds plaintext facts it may observe plus at most one opaque
//! token per foreign agent standing in for that agent's private facts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into [`Problem::facts`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct FactId(pub u32);

/// Index into [`Problem::agents`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct AgentId(pub u16);

/// Global action index; unique across agents.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ActionId(pub u32);

impl fmt::Display for FactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Visibility of a fact: shared with everyone or owned by a single agent.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Owner {
    Public,
    Agent(AgentId),
}

impl Owner {
    pub fn is_private_to(&self, agent: AgentId) -> bool {
        matches!(self, Owner::Agent(a) if *a == agent)
    }
}

/// Opaque stand-in a sender substitutes for the set of its private facts
/// that hold in a state. Receivers treat it as an indivisible extra fact.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Token(pub [u8; 16]);

impl Token {
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(32);
        for b in &self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str) -> Option<Token> {
        if hex.len() != 32 {
            return None;
        }
        let mut out = [0u8; 16];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).ok()?;
            out[i] = u8::from_str_radix(s, 16).ok()?;
        }
        Some(Token(out))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Fixed-universe bit set over fact ids.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct FactSet {
    blocks: Vec<u64>,
}

impl FactSet {
    pub fn new(universe: usize) -> FactSet {
        FactSet { blocks: vec![0; universe.div_ceil(64)] }
    }

    pub fn from_ids<I: IntoIterator<Item = FactId>>(universe: usize, ids: I) -> FactSet {
        let mut s = FactSet::new(universe);
        for id in ids {
            s.insert(id);
        }
        s
    }

    pub fn insert(&mut self, id: FactId) {
        let (b, o) = (id.0 as usize / 64, id.0 as usize % 64);
        assert!(b < self.blocks.len(), "fact id {} outside universe", id.0);
        self.blocks[b] |= 1 << o;
    }

    pub fn remove(&mut self, id: FactId) {
        let (b, o) = (id.0 as usize / 64, id.0 as usize % 64);
        if b < self.blocks.len() {
            self.blocks[b] &= !(1 << o);
        }
    }

    pub fn contains(&self, id: FactId) -> bool {
        let (b, o) = (id.0 as usize / 64, id.0 as usize % 64);
        b < self.blocks.len() && self.blocks[b] & (1 << o) != 0
    }

    pub fn is_subset_of(&self, other: &FactSet) -> bool {
        self.blocks.iter().zip(&other.blocks).all(|(a, b)| a & !b == 0)
            && self.blocks.iter().skip(other.blocks.len()).all(|&a| a == 0)
    }

    pub fn union_with(&mut self, other: &FactSet) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a |= b;
        }
    }

    pub fn subtract(&mut self, other: &FactSet) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a &= !b;
        }
    }

    pub fn intersect_with(&mut self, other: &FactSet) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a &= b;
        }
        for a in self.blocks.iter_mut().skip(other.blocks.len()) {
            *a = 0;
        }
    }

    pub fn intersection(&self, other: &FactSet) -> FactSet {
        let mut out = self.clone();
        out.intersect_with(other);
        out
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = FactId> + '_ {
        self.blocks.iter().enumerate().flat_map(|(i, &block)| {
            let mut bits = block;
            std::iter::from_fn(move || {
                if bits == 0 {
                    None
                } else {
                    let o = bits.trailing_zeros();
                    bits &= bits - 1;
                    Some(FactId(i as u32 * 64 + o))
                }
            })
        })
    }
}

impl fmt::Debug for FactSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|id| id.0)).finish()
    }
}

#[derive(Clone, Debug)]
pub struct Fact {
    pub id: FactId,
    pub name: String,
    pub owner: Owner,
}

#[derive(Clone, Debug)]
pub struct Action {
    pub id: ActionId,
    pub name: String,
    pub agent: AgentId,
    pub prec: FactSet,
    pub add: FactSet,
    pub del: FactSet,
    pub cost: f64,
    /// False when every precondition and effect is private to the owner.
    pub is_public: bool,
}

/// Immutable grounded task shared by every agent in a run.
#[derive(Clone, Debug)]
pub struct Problem {
    pub agents: Vec<String>,
    pub facts: Vec<Fact>,
    /// Actions grouped per agent, each group sorted by ascending id.
    pub actions: Vec<Vec<Action>>,
    pub init: FactSet,
    pub goals: FactSet,
}

impl Problem {
    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn owner(&self, id: FactId) -> Owner {
        self.facts[id.0 as usize].owner
    }

    pub fn fact_name(&self, id: FactId) -> &str {
        &self.facts[id.0 as usize].name
    }

    pub fn fact_by_name(&self, name: &str) -> Option<FactId> {
        self.facts
            .binary_search_by(|f| f.name.as_str().cmp(name))
            .ok()
            .map(|i| FactId(i as u32))
    }

    pub fn agent_by_name(&self, name: &str) -> Option<AgentId> {
        self.agents.iter().position(|a| a == name).map(|i| AgentId(i as u16))
    }

    pub fn all_actions(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter().flatten()
    }

    pub fn action_of(&self, agent: AgentId, name: &str) -> Option<&Action> {
        self.actions[agent.0 as usize].iter().find(|a| a.name == name)
    }

    /// Goals this agent can test on its own: public ones plus its own
    /// private ones. Foreign private goals can only be certified by their
    /// owner, so they are absent from the returned set.
    pub fn observable_goals(&self, agent: AgentId) -> FactSet {
        let mut out = FactSet::new(self.num_facts());
        for id in self.goals.iter() {
            match self.owner(id) {
                Owner::Public => out.insert(id),
                Owner::Agent(a) if a == agent => out.insert(id),
                Owner::Agent(_) => {}
            }
        }
        out
    }

    /// True when every goal is visible to this agent, i.e. the agent is
    /// entitled to declare a state a full solution.
    pub fn sees_every_goal(&self, agent: AgentId) -> bool {
        self.goals.iter().all(|id| match self.owner(id) {
            Owner::Public => true,
            Owner::Agent(a) => a == agent,
        })
    }

    /// Facts of the shared initial state visible to `agent`.
    pub fn init_view(&self, agent: AgentId) -> FactSet {
        let mut out = FactSet::new(self.num_facts());
        for id in self.init.iter() {
            match self.owner(id) {
                Owner::Public => out.insert(id),
                Owner::Agent(a) if a == agent => out.insert(id),
                Owner::Agent(_) => {}
            }
        }
        out
    }

    /// Private facts of `agent` that hold in the shared initial state.
    pub fn init_private_of(&self, agent: AgentId) -> FactSet {
        let mut out = FactSet::new(self.num_facts());
        for id in self.init.iter() {
            if self.owner(id).is_private_to(agent) {
                out.insert(id);
            }
        }
        out
    }
}

/// One agent's rendering of a search state: plaintext facts it may see and
/// one token per foreign agent covering that agent's private truths.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct State {
    pub plain: FactSet,
    pub tokens: BTreeMap<AgentId, Token>,
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum ApplyError {
    #[error("action {action} is not applicable: precondition {missing} unsatisfied")]
    NotApplicable { action: String, missing: String },
}

impl State {
    pub fn new(plain: FactSet) -> State {
        State { plain, tokens: BTreeMap::new() }
    }

    pub fn applicable(&self, action: &Action) -> bool {
        action.prec.is_subset_of(&self.plain)
    }

    /// Successor under `action`: delete effects removed, add effects added,
    /// tokens carried through untouched.
    pub fn apply(&self, action: &Action, problem: &Problem) -> Result<State, ApplyError> {
        if !self.applicable(action) {
            let missing = action
                .prec
                .iter()
                .find(|id| !self.plain.contains(*id))
                .map(|id| problem.fact_name(id).to_string())
                .unwrap_or_default();
            return Err(ApplyError::NotApplicable { action: action.name.clone(), missing });
        }
        let mut plain = self.plain.clone();
        plain.subtract(&action.del);
        plain.union_with(&action.add);
        Ok(State { plain, tokens: self.tokens.clone() })
    }

    /// True when every fact of `goals` holds in the plaintext part.
    pub fn satisfies(&self, goals: &FactSet) -> bool {
        goals.is_subset_of(&self.plain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(universe: usize, ids: &[u32]) -> FactSet {
        FactSet::from_ids(universe, ids.iter().map(|&i| FactId(i)))
    }

    fn action(id: u32, agent: u16, prec: &[u32], add: &[u32], del: &[u32]) -> Action {
        Action {
            id: ActionId(id),
            name: format!("act{id}"),
            agent: AgentId(agent),
            prec: set(8, prec),
            add: set(8, add),
            del: set(8, del),
            cost: 1.0,
            is_public: true,
        }
    }

    fn toy_problem() -> Problem {
        Problem {
            agents: vec!["one".into(), "two".into()],
            facts: (0..8)
                .map(|i| Fact { id: FactId(i), name: format!("fact{i}"), owner: Owner::Public })
                .collect(),
            actions: vec![vec![], vec![]],
            init: set(8, &[0]),
            goals: set(8, &[3]),
        }
    }

    #[test]
    fn factset_basic_ops() {
        let mut s = FactSet::new(130);
        assert!(s.is_empty());
        s.insert(FactId(0));
        s.insert(FactId(64));
        s.insert(FactId(129));
        assert_eq!(s.len(), 3);
        assert!(s.contains(FactId(64)));
        assert!(!s.contains(FactId(63)));
        let ids: Vec<u32> = s.iter().map(|f| f.0).collect();
        assert_eq!(ids, vec![0, 64, 129]);
        s.remove(FactId(64));
        assert!(!s.contains(FactId(64)));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn factset_subset_and_algebra() {
        let a = set(8, &[1, 2]);
        let b = set(8, &[1, 2, 5]);
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
        let mut c = b.clone();
        c.subtract(&a);
        assert_eq!(c, set(8, &[5]));
        c.union_with(&a);
        assert_eq!(c, b);
        assert_eq!(b.intersection(&set(8, &[2, 5, 7])), set(8, &[2, 5]));
    }

    #[test]
    fn applicable_iff_preconditions_hold() {
        let a = action(0, 0, &[0, 1], &[2], &[]);
        let s = State::new(set(8, &[0, 1, 5]));
        assert!(s.applicable(&a));
        let s2 = State::new(set(8, &[0]));
        assert!(!s2.applicable(&a));
    }

    #[test]
    fn apply_removes_deletes_then_adds() {
        let p = toy_problem();
        let a = action(0, 0, &[0], &[2, 3], &[0]);
        let s = State::new(set(8, &[0, 1]));
        let t = s.apply(&a, &p).unwrap();
        assert_eq!(t.plain, set(8, &[1, 2, 3]));
    }

    #[test]
    fn apply_rejects_inapplicable() {
        let p = toy_problem();
        let a = action(0, 0, &[4], &[5], &[]);
        let s = State::new(set(8, &[0]));
        let err = s.apply(&a, &p).unwrap_err();
        assert_eq!(
            err,
            ApplyError::NotApplicable { action: "act0".into(), missing: "fact4".into() }
        );
    }

    #[test]
    fn apply_preserves_tokens() {
        let p = toy_problem();
        let a = action(0, 0, &[0], &[1], &[]);
        let mut s = State::new(set(8, &[0]));
        s.tokens.insert(AgentId(1), Token([7; 16]));
        let t = s.apply(&a, &p).unwrap();
        assert_eq!(t.tokens, s.tokens);
    }

    #[test]
    fn reapplying_is_idempotent_when_preconditions_survive() {
        let p = toy_problem();
        let a = action(0, 0, &[0], &[2], &[1]);
        let s = State::new(set(8, &[0, 1]));
        let once = s.apply(&a, &p).unwrap();
        let twice = once.apply(&a, &p).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn goal_satisfaction_is_subset_test() {
        let s = State::new(set(8, &[1, 3, 4]));
        assert!(s.satisfies(&set(8, &[3])));
        assert!(s.satisfies(&set(8, &[1, 4])));
        assert!(!s.satisfies(&set(8, &[2])));
        assert!(s.satisfies(&FactSet::new(8)));
    }

    #[test]
    fn observable_goals_exclude_foreign_private() {
        let mut p = toy_problem();
        p.goals = set(8, &[3, 4]);
        p.facts[3].owner = Owner::Agent(AgentId(1));
        assert_eq!(p.observable_goals(AgentId(0)), set(8, &[4]));
        assert_eq!(p.observable_goals(AgentId(1)), set(8, &[3, 4]));
        assert!(!p.sees_every_goal(AgentId(0)));
        assert!(p.sees_every_goal(AgentId(1)));
    }

    #[test]
    fn init_views_split_by_owner() {
        let mut p = toy_problem();
        p.init = set(8, &[0, 1, 2]);
        p.facts[1].owner = Owner::Agent(AgentId(0));
        p.facts[2].owner = Owner::Agent(AgentId(1));
        assert_eq!(p.init_view(AgentId(0)), set(8, &[0, 1]));
        assert_eq!(p.init_view(AgentId(1)), set(8, &[0, 2]));
        assert_eq!(p.init_private_of(AgentId(1)), set(8, &[2]));
    }

    #[test]
    fn token_hex_round_trip() {
        let t = Token([0xab; 16]);
        assert_eq!(t.to_hex().len(), 32);
        assert_eq!(Token::from_hex(&t.to_hex()), Some(t));
        assert_eq!(Token::from_hex("zz"), None);
    }
}
