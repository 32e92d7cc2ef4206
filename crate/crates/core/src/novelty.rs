//! Novelty measures over generated states.
//!
//! Two flavours are used by the search. Cost novelty asks whether a state
//! contains a small tuple of facts that is either brand new or present so
//! far only in strictly more expensive states; it drives width pruning.
//! Partition novelty asks for a new fact (or pair) among the states that
//! share the same heuristic values; it drives tie-breaking preferences.
//! Both are capped at tuple size two: anything beyond reports "more than
//! two". A state is rendered for these tables as the sorted id list the
//! evaluating agent sees, foreign tokens included as synthetic ids.

use std::collections::{HashMap, HashSet};

/// Capped novelty level.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum NoveltyLevel {
    New1,
    New2,
    MoreThanTwo,
}

impl NoveltyLevel {
    pub fn rank(self) -> u8 {
        match self {
            NoveltyLevel::New1 => 1,
            NoveltyLevel::New2 => 2,
            NoveltyLevel::MoreThanTwo => 3,
        }
    }

    pub fn within(self, cap: u8) -> bool {
        self.rank() <= cap
    }
}

fn pair_key(a: u32, b: u32) -> u64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (u64::from(hi) << 32) | u64::from(lo)
}

/// Cheapest accumulated cost at which each fact / fact pair has been seen.
/// Missing entries behave as infinity, so "unseen" and "only seen at higher
/// cost" collapse into one comparison.
#[derive(Default)]
pub struct CostNoveltyTable {
    best_single: HashMap<u32, f64>,
    best_pair: HashMap<u64, f64>,
}

impl CostNoveltyTable {
    pub fn new() -> CostNoveltyTable {
        CostNoveltyTable::default()
    }

    /// Level of the state and table update in one step, mirroring how every
    /// generated state is recorded whether or not it survives pruning.
    /// A tuple counts as novel only when every earlier occurrence was
    /// strictly more expensive; equal cost does not.
    pub fn evaluate_and_update(&mut self, ids: &[u32], g: f64) -> NoveltyLevel {
        let mut level = NoveltyLevel::MoreThanTwo;
        for &id in ids {
            if self.best_single.get(&id).is_none_or(|&best| best > g) {
                level = NoveltyLevel::New1;
                break;
            }
        }
        if level == NoveltyLevel::MoreThanTwo {
            'outer: for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    if self.best_pair.get(&pair_key(a, b)).is_none_or(|&best| best > g) {
                        level = NoveltyLevel::New2;
                        break 'outer;
                    }
                }
            }
        }
        for &id in ids {
            self.best_single
                .entry(id)
                .and_modify(|best| *best = best.min(g))
                .or_insert(g);
        }
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                self.best_pair
                    .entry(pair_key(a, b))
                    .and_modify(|best| *best = best.min(g))
                    .or_insert(g);
            }
        }
        level
    }

    pub fn best_cost_of(&self, id: u32) -> Option<f64> {
        self.best_single.get(&id).copied()
    }
}

/// Hashable rendering of a heuristic value tuple. Values are compared by
/// bit pattern; infinity is an ordinary key component.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct PartitionKey(Vec<u64>);

impl PartitionKey {
    pub fn new(components: &[f64]) -> PartitionKey {
        PartitionKey(components.iter().map(|c| c.to_bits()).collect())
    }
}

#[derive(Default)]
struct SeenTuples {
    singles: HashSet<u32>,
    pairs: HashSet<u64>,
}

/// Seen facts and pairs, bucketed by heuristic value tuple. A state is
/// novel in its bucket when it shows a fact (or, failing that, a pair)
/// never seen there before.
#[derive(Default)]
pub struct PartitionNoveltyTable {
    buckets: HashMap<PartitionKey, SeenTuples>,
}

impl PartitionNoveltyTable {
    pub fn new() -> PartitionNoveltyTable {
        PartitionNoveltyTable::default()
    }

    pub fn evaluate_and_update(&mut self, ids: &[u32], key: &PartitionKey) -> NoveltyLevel {
        let bucket = self.buckets.entry(key.clone()).or_default();
        let mut level = NoveltyLevel::MoreThanTwo;
        if ids.iter().any(|id| !bucket.singles.contains(id)) {
            level = NoveltyLevel::New1;
        } else {
            'outer: for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    if !bucket.pairs.contains(&pair_key(a, b)) {
                        level = NoveltyLevel::New2;
                        break 'outer;
                    }
                }
            }
        }
        bucket.singles.extend(ids.iter().copied());
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                bucket.pairs.insert(pair_key(a, b));
            }
        }
        level
    }
}

/// Reference implementations that re-derive novelty from a full history by
/// exhaustive enumeration. They share no state with the incremental tables
/// and exist to check them.
pub mod reference {
    use super::NoveltyLevel;

    fn contains(state: &[u32], id: u32) -> bool {
        state.binary_search(&id).is_ok()
    }

    /// Smallest tuple of `query` (size capped at two) that is new with
    /// respect to `history`, where "new" means never seen, or seen only in
    /// strictly more expensive states.
    pub fn brute_force_cost_novelty(
        history: &[(Vec<u32>, f64)],
        query: &[u32],
        g: f64,
    ) -> NoveltyLevel {
        let tuple_is_new = |tuple: &[u32]| {
            history
                .iter()
                .filter(|(s, _)| tuple.iter().all(|&id| contains(s, id)))
                .all(|(_, old_g)| *old_g > g)
        };
        if query.iter().any(|&id| tuple_is_new(&[id])) {
            return NoveltyLevel::New1;
        }
        for (i, &a) in query.iter().enumerate() {
            for &b in &query[i + 1..] {
                if tuple_is_new(&[a, b]) {
                    return NoveltyLevel::New2;
                }
            }
        }
        NoveltyLevel::MoreThanTwo
    }

    /// Partition novelty against the subset of `history` whose key equals
    /// `query_key`, ignoring costs.
    pub fn brute_force_partition_novelty(
        history: &[(Vec<u32>, Vec<u64>)],
        query: &[u32],
        query_key: &[u64],
    ) -> NoveltyLevel {
        let peers: Vec<&Vec<u32>> =
            history.iter().filter(|(_, k)| k == query_key).map(|(s, _)| s).collect();
        if query.iter().any(|&id| peers.iter().all(|s| !contains(s, id))) {
            return NoveltyLevel::New1;
        }
        for (i, &a) in query.iter().enumerate() {
            for &b in &query[i + 1..] {
                if peers.iter().all(|s| !(contains(s, a) && contains(s, b))) {
                    return NoveltyLevel::New2;
                }
            }
        }
        NoveltyLevel::MoreThanTwo
    }
}
