//! Decentralized multi-agent planner in which every agent runs best-first
//! width search over its own projection of the problem and exchanges
//! encrypted public states with its peers.

pub mod comm;
pub mod harness;
pub mod heuristics;
pub mod ingest;
pub mod model;
pub mod novelty;
pub mod privacy;
pub mod search;
pub mod validator;
