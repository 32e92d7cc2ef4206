//! Privacy classification and state encryption.
//!
//! A fact belongs to one agent when no other agent's actions achieve,
//! destroy or require it; everything else is public, including facts no
//! action touches at all. Before a state goes on the wire the sender
//! replaces the set of its private facts that hold in it with a single
//! opaque token, so receivers learn that "something private" distinguishes
//! two states without learning what.

use std::collections::HashMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{AgentId, FactId, FactSet, Owner, Problem, State, Token};

pub struct PrivacyLabels {
    pub fact_owner: Vec<Owner>,
    pub action_public: Vec<bool>,
}

/// Derive ownership labels from action usage alone.
pub fn classify(problem: &Problem) -> PrivacyLabels {
    let n = problem.num_facts();
    // users[f] = set of agents whose actions mention f, as a small bitmask.
    let mut users = vec![0u64; n];
    for action in problem.all_actions() {
        let bit = 1u64 << action.agent.0;
        for id in action.prec.iter().chain(action.add.iter()).chain(action.del.iter()) {
            users[id.0 as usize] |= bit;
        }
    }
    let fact_owner: Vec<Owner> = users
        .iter()
        .map(|&mask| {
            if mask.count_ones() == 1 {
                Owner::Agent(AgentId(mask.trailing_zeros() as u16))
            } else {
                Owner::Public
            }
        })
        .collect();

    let mut action_public = Vec::new();
    for action in problem.all_actions() {
        let all_private = action
            .prec
            .iter()
            .chain(action.add.iter())
            .chain(action.del.iter())
            .all(|id| fact_owner[id.0 as usize].is_private_to(action.agent));
        action_public.push(!all_private);
    }
    PrivacyLabels { fact_owner, action_public }
}

/// Classify and write the labels back into the problem. Action flags are
/// assigned in global id order, matching the iteration order of
/// [`Problem::all_actions`].
pub fn label(problem: &mut Problem) {
    let labels = classify(problem);
    for (fact, owner) in problem.facts.iter_mut().zip(labels.fact_owner) {
        fact.owner = owner;
    }
    let mut by_id: Vec<(usize, usize)> = Vec::new();
    for (gi, action) in problem.all_actions().enumerate() {
        by_id.push((action.agent.0 as usize, gi));
    }
    let mut cursor = vec![0usize; problem.num_agents()];
    for (agent_idx, gi) in by_id {
        let slot = cursor[agent_idx];
        problem.actions[agent_idx][slot].is_public = labels.action_public[gi];
        cursor[agent_idx] += 1;
    }
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum DecryptError {
    #[error("state carries token {token} attributed to this agent but the vault does not know it")]
    UnknownToken { token: Token },
}

/// Per-agent token mint. Tokens are a keyed digest of the sorted private
/// fact subset, so within one run equal subsets always produce equal
/// tokens, and the empty subset has a token of its own.
pub struct TokenVault {
    agent: AgentId,
    key: [u8; 32],
    forward: HashMap<Vec<u32>, Token>,
    backward: HashMap<Token, Vec<u32>>,
}

impl TokenVault {
    pub fn new(agent: AgentId, run_seed: u64) -> TokenVault {
        let mut h = Sha256::new();
        h.update(b"state-token-key");
        h.update(run_seed.to_le_bytes());
        h.update(agent.0.to_le_bytes());
        TokenVault { agent, key: h.finalize().into(), forward: HashMap::new(), backward: HashMap::new() }
    }

    pub fn agent(&self) -> AgentId {
        self.agent
    }

    fn mint(&self, subset: &[u32]) -> Token {
        let mut h = Sha256::new();
        h.update(self.key);
        for id in subset {
            h.update(id.to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        Token(out)
    }

    pub fn token_for(&mut self, subset: &FactSet) -> Token {
        let ids: Vec<u32> = subset.iter().map(|f| f.0).collect();
        if let Some(t) = self.forward.get(&ids) {
            return *t;
        }
        let token = self.mint(&ids);
        self.forward.insert(ids.clone(), token);
        self.backward.insert(token, ids);
        token
    }

    pub fn resolve(&self, token: Token) -> Option<Vec<FactId>> {
        self.backward.get(&token).map(|ids| ids.iter().map(|&i| FactId(i)).collect())
    }

    /// Deterministic short code for one of this agent's private actions,
    /// used in plans travelling to other agents.
    pub fn action_code(&self, action_id: u32) -> String {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"action-code");
        h.update(action_id.to_le_bytes());
        let digest = h.finalize();
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

/// Wire form of a state: the sender's private facts collapse into the
/// sender's token; tokens of third agents ride along untouched.
pub fn encrypt_outgoing(problem: &Problem, state: &State, vault: &mut TokenVault) -> State {
    let me = vault.agent;
    let mut own = FactSet::new(problem.num_facts());
    for id in state.plain.iter() {
        if problem.owner(id).is_private_to(me) {
            own.insert(id);
        }
    }
    let mut plain = state.plain.clone();
    plain.subtract(&own);
    let mut tokens = state.tokens.clone();
    tokens.insert(me, vault.token_for(&own));
    State { plain, tokens }
}

/// Receiver-side inverse: this agent's token, if present, is swapped back
/// for the plaintext facts it stands for.
pub fn decrypt_incoming(
    problem: &Problem,
    state: &State,
    vault: &TokenVault,
) -> Result<State, DecryptError> {
    let me = vault.agent;
    let mut out = state.clone();
    if let Some(token) = out.tokens.remove(&me) {
        let facts = vault.resolve(token).ok_or(DecryptError::UnknownToken { token })?;
        for id in facts {
            out.plain.insert(id);
        }
        debug_assert!(out.plain.iter().all(|id| {
            !matches!(problem.owner(id), Owner::Agent(a) if a != me)
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::load_problem_from_str;

    const TWO_AGENT: &str = r#"{
        "version": 1,
        "agents": ["left", "right"],
        "facts": ["shared_gate_open", "left_spring_wound", "left_tool_stowed",
                  "right_lamp_warm", "loose_marble_lost"],
        "init": ["left_spring_wound", "loose_marble_lost"],
        "goals": ["shared_gate_open"],
        "actions": [
            {"name": "wind_release", "agent": "left",
             "prec": ["left_spring_wound"], "add": ["shared_gate_open"], "del": ["left_spring_wound"]},
            {"name": "stow_tool", "agent": "left",
             "prec": [], "add": ["left_tool_stowed"], "del": []},
            {"name": "warm_lamp", "agent": "right",
             "prec": ["shared_gate_open"], "add": ["right_lamp_warm"], "del": []}
        ]
    }"#;

    fn problem() -> Problem {
        load_problem_from_str(TWO_AGENT).unwrap()
    }

    #[test]
    fn facts_touched_by_one_agent_are_private() {
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let right = p.agent_by_name("right").unwrap();
        assert_eq!(p.owner(p.fact_by_name("left_spring_wound").unwrap()), Owner::Agent(left));
        assert_eq!(p.owner(p.fact_by_name("left_tool_stowed").unwrap()), Owner::Agent(left));
        assert_eq!(p.owner(p.fact_by_name("right_lamp_warm").unwrap()), Owner::Agent(right));
        // Touched by both agents.
        assert_eq!(p.owner(p.fact_by_name("shared_gate_open").unwrap()), Owner::Public);
        // Touched by no action at all.
        assert_eq!(p.owner(p.fact_by_name("loose_marble_lost").unwrap()), Owner::Public);
    }

    #[test]
    fn action_is_private_iff_all_its_facts_are() {
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let right = p.agent_by_name("right").unwrap();
        // stow_tool touches only a left-private fact.
        assert!(!p.action_of(left, "stow_tool").unwrap().is_public);
        // wind_release adds the public gate fact, so it is public.
        assert!(p.action_of(left, "wind_release").unwrap().is_public);
        // warm_lamp requires the public gate fact, so it is public too.
        assert!(p.action_of(right, "warm_lamp").unwrap().is_public);
    }

    #[test]
    fn distinct_subsets_get_distinct_deterministic_tokens() {
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let mut vault = TokenVault::new(left, 7);
        let spring = p.fact_by_name("left_spring_wound").unwrap();
        let tool = p.fact_by_name("left_tool_stowed").unwrap();
        let n = p.num_facts();

        let t_spring = vault.token_for(&FactSet::from_ids(n, [spring]));
        let t_tool = vault.token_for(&FactSet::from_ids(n, [tool]));
        let t_both = vault.token_for(&FactSet::from_ids(n, [spring, tool]));
        let t_empty = vault.token_for(&FactSet::new(n));

        let all = [t_spring, t_tool, t_both, t_empty];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_eq!(vault.token_for(&FactSet::from_ids(n, [spring])), t_spring);
        assert_eq!(vault.resolve(t_both).unwrap(), vec![spring, tool]);
        assert_eq!(vault.resolve(t_empty).unwrap(), vec![]);
    }

    #[test]
    fn fresh_seed_changes_tokens() {
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let spring = p.fact_by_name("left_spring_wound").unwrap();
        let subset = FactSet::from_ids(p.num_facts(), [spring]);
        let a = TokenVault::new(left, 1).token_for(&subset);
        let b = TokenVault::new(left, 2).token_for(&subset);
        assert_ne!(a, b);
    }

    #[test]
    fn encrypt_strips_private_facts_and_adds_token() {
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let mut vault = TokenVault::new(left, 3);
        let gate = p.fact_by_name("shared_gate_open").unwrap();
        let spring = p.fact_by_name("left_spring_wound").unwrap();
        let state = State::new(FactSet::from_ids(p.num_facts(), [gate, spring]));

        let wire = encrypt_outgoing(&p, &state, &mut vault);
        assert!(wire.plain.contains(gate));
        assert!(!wire.plain.contains(spring));
        assert_eq!(wire.tokens.len(), 1);
        let token = wire.tokens[&left];
        assert_eq!(vault.resolve(token).unwrap(), vec![spring]);
    }

    #[test]
    fn round_trip_restores_the_sender_view() {
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let mut vault = TokenVault::new(left, 9);
        let n = p.num_facts();
        let gate = p.fact_by_name("shared_gate_open").unwrap();
        let spring = p.fact_by_name("left_spring_wound").unwrap();
        let tool = p.fact_by_name("left_tool_stowed").unwrap();

        for subset in [vec![], vec![spring], vec![tool], vec![spring, tool]] {
            let mut ids = vec![gate];
            ids.extend(subset);
            let state = State::new(FactSet::from_ids(n, ids));
            let wire = encrypt_outgoing(&p, &state, &mut vault);
            let back = decrypt_incoming(&p, &wire, &vault).unwrap();
            assert_eq!(back, state);
        }
    }

    #[test]
    fn unknown_token_is_rejected() {
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let vault = TokenVault::new(left, 4);
        let mut state = State::new(FactSet::new(p.num_facts()));
        state.tokens.insert(left, Token([0x5a; 16]));
        let err = decrypt_incoming(&p, &state, &vault).unwrap_err();
        assert!(matches!(err, DecryptError::UnknownToken { .. }));
    }

    #[test]
    fn three_states_three_distinct_tokens() {
        // An observer of {p}, {q}, {p, q} sees three unrelated opaque facts.
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let mut vault = TokenVault::new(left, 11);
        let n = p.num_facts();
        let spring = p.fact_by_name("left_spring_wound").unwrap();
        let tool = p.fact_by_name("left_tool_stowed").unwrap();

        let wires: Vec<State> = [vec![spring], vec![tool], vec![spring, tool]]
            .into_iter()
            .map(|ids| encrypt_outgoing(&p, &State::new(FactSet::from_ids(n, ids)), &mut vault))
            .collect();
        let tokens: Vec<Token> = wires.iter().map(|w| w.tokens[&left]).collect();
        assert_ne!(tokens[0], tokens[1]);
        assert_ne!(tokens[0], tokens[2]);
        assert_ne!(tokens[1], tokens[2]);
        for wire in &wires {
            assert!(wire.plain.is_empty());
        }
    }

    #[test]
    fn wire_hex_never_spells_fact_names() {
        // Tokens serialize as lowercase hex; any name with a letter outside
        // 'a'..='f' can therefore never appear inside one.
        let p = problem();
        let left = p.agent_by_name("left").unwrap();
        let mut vault = TokenVault::new(left, 13);
        let spring = p.fact_by_name("left_spring_wound").unwrap();
        let token = vault.token_for(&FactSet::from_ids(p.num_facts(), [spring]));
        let hex = token.to_hex();
        assert!(hex.chars().all(|c| c.is_ascii_hexdigit()));
        assert!(!hex.contains("left_spring_wound"));
    }
}
