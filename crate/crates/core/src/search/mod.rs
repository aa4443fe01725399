//! The checker: decides each requested level by searching for an ordering
//! and reads-from map that satisfy the level's constraints.
//!
//! Serial levels are decided by a memoized depth-first search over per-client
//! progress; partial-order levels by a search over reads-from assignments
//! that grows the ordering only by edges the relationship forces. Levels are
//! visited strongest first so that a pass settles every level it implies and
//! a failure settles every level implying it.

mod chunk;
pub mod oracle;
mod partial;
mod serial;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::constraints::{check_relationship, Convergence};
use crate::history::{first_corrupted_read, OpId, Timeline};
use crate::levels::{constraints_of, implies, strongest_first, ConsistencyLevel};
use crate::ordering::{
    is_serial_order, validate_read_materialization, OrderingDag, ReadsFrom, Witness,
};

pub use chunk::drain_concurrent_chunk;
pub use oracle::{oracle_check, oracle_exists, posets, ORACLE_HARD_LIMIT};
pub use partial::check_partial_level;
pub use serial::{check_serial_level, RealTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// The budget ran out before the search finished.
    Unknown,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchBudget {
    /// Search states each level may explore.
    pub max_states: u64,
    /// Wall-clock limit for a whole `check` call.
    pub wall_timeout: Duration,
    pub max_oracle_ops: usize,
    /// Take-effect branches of indeterminate writes tried before giving up.
    pub max_branches: u64,
    /// Worker threads for the partial-order search.
    pub threads: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_states: 5_000_000,
            wall_timeout: Duration::from_secs(60),
            max_oracle_ops: 6,
            max_branches: 1 << 12,
            threads: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("history has {ops} operations; the exhaustive oracle handles at most {limit}")]
    OracleTooLarge { ops: usize, limit: usize },
}

/// Shared accounting of explored states and the wall-clock deadline.
#[derive(Debug)]
pub struct Meter {
    states: AtomicU64,
    deadline: Instant,
}

impl Meter {
    pub fn new(budget: &SearchBudget) -> Self {
        Meter {
            states: AtomicU64::new(0),
            deadline: Instant::now() + budget.wall_timeout,
        }
    }

    /// Counts one state against `local` (the calling search's own count) and
    /// reports whether the search may continue.
    pub fn tick(&self, local: &mut u64, limit: u64) -> bool {
        *local += 1;
        self.states.fetch_add(1, Ordering::Relaxed);
        !(*local > limit || (*local % 1024 == 0 && Instant::now() > self.deadline))
    }

    pub fn states(&self) -> u64 {
        self.states.load(Ordering::Relaxed)
    }
}

/// Result of one level's search.
#[derive(Clone, Debug)]
pub struct LevelOutcome {
    pub verdict: Verdict,
    pub witness: Option<(OrderingDag, ReadsFrom)>,
    pub states: u64,
    pub chunks: u64,
}

impl LevelOutcome {
    pub(crate) fn fail(states: u64) -> Self {
        LevelOutcome {
            verdict: Verdict::Fail,
            witness: None,
            states,
            chunks: 0,
        }
    }

    pub(crate) fn unknown(states: u64) -> Self {
        LevelOutcome {
            verdict: Verdict::Unknown,
            ..Self::fail(states)
        }
    }

    pub(crate) fn pass(dag: OrderingDag, rf: ReadsFrom, states: u64) -> Self {
        LevelOutcome {
            verdict: Verdict::Pass,
            witness: Some((dag, rf)),
            states,
            chunks: 0,
        }
    }
}

/// Whether `(dag, rf)` satisfies both of the level's constraints.
pub fn satisfies(
    level: ConsistencyLevel,
    dag: &OrderingDag,
    timeline: &Timeline,
    rf: &ReadsFrom,
) -> bool {
    if level == ConsistencyLevel::Weak {
        return true;
    }
    let (convergence, relationship) = constraints_of(level);
    if convergence == Convergence::So && !is_serial_order(dag, timeline) {
        return false;
    }
    validate_read_materialization(dag, timeline, rf, convergence)
        && check_relationship(&relationship, dag, timeline, rf)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    pub states_explored: u64,
    pub chunks_drained: u64,
    pub elapsed_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelResult {
    pub level: ConsistencyLevel,
    pub verdict: Verdict,
    /// The stronger level whose pass settled this one without a search.
    pub implied_by: Option<ConsistencyLevel>,
    pub witness: Option<Witness>,
}

/// Verdicts in the order the levels were requested.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConformityReport {
    pub results: Vec<LevelResult>,
    pub stats: SearchStats,
    /// A read whose value was never written, if any.
    pub corrupted_read: Option<OpId>,
}

impl ConformityReport {
    pub fn verdict(&self, level: ConsistencyLevel) -> Option<Verdict> {
        self.results
            .iter()
            .find(|r| r.level == level)
            .map(|r| r.verdict)
    }

    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.verdict == Verdict::Pass)
    }

    /// The first pair `(a, b)` with `a ⇒ b` where `a` passed but `b` did not.
    pub fn monotonicity_violation(&self) -> Option<(ConsistencyLevel, ConsistencyLevel)> {
        for a in &self.results {
            for b in &self.results {
                if implies(a.level, b.level)
                    && a.verdict == Verdict::Pass
                    && b.verdict == Verdict::Fail
                {
                    return Some((a.level, b.level));
                }
            }
        }
        None
    }

    /// Stable JSON document: one `"level": "verdict"` entry per level, then
    /// stats and witnesses.
    pub fn to_json(&self) -> serde_json::Value {
        let mut doc = serde_json::Map::new();
        for r in &self.results {
            doc.insert(r.level.name().into(), serde_json::to_value(r.verdict).unwrap());
        }
        doc.insert("stats".into(), serde_json::to_value(&self.stats).unwrap());
        let witnesses: BTreeMap<&str, &Witness> = self
            .results
            .iter()
            .filter_map(|r| r.witness.as_ref().map(|w| (r.level.name(), w)))
            .collect();
        doc.insert("witnesses".into(), serde_json::to_value(witnesses).unwrap());
        serde_json::Value::Object(doc)
    }
}

impl Serialize for ConformityReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

/// Decides one level on its own, keeping the raw witness.
pub fn decide(
    level: ConsistencyLevel,
    timeline: &Timeline,
    budget: &SearchBudget,
    meter: &Meter,
) -> LevelOutcome {
    use ConsistencyLevel::*;
    match level {
        Weak => LevelOutcome::pass(OrderingDag::edgeless(timeline), ReadsFrom::new(0), 0),
        Linearizability => serial::check_linearizable(timeline, budget, meter),
        RegularSequential => check_serial_level(timeline, RealTime::WritesOnly, budget, meter),
        Sequential => check_serial_level(timeline, RealTime::Ignore, budget, meter),
        PerKeySequential => serial::check_per_key(timeline, budget, meter),
        other => {
            let (convergence, relationship) = constraints_of(other);
            check_partial_level(timeline, convergence, &relationship, budget, meter)
        }
    }
}

/// Decides each requested level, strongest first, propagating passes down
/// and failures up the implication order.
pub fn check(
    timeline: &Timeline,
    levels: &[ConsistencyLevel],
    budget: &SearchBudget,
) -> ConformityReport {
    let started = Instant::now();
    let meter = Meter::new(budget);
    let mut decided: Vec<Option<LevelResult>> = vec![None; levels.len()];
    let mut stats = SearchStats::default();
    let corrupted_read = first_corrupted_read(timeline);

    let position = |l: ConsistencyLevel| levels.iter().position(|&m| m == l);
    for level in strongest_first(levels) {
        let slot = position(level).expect("requested");
        if decided[slot].is_some() {
            continue;
        }
        let outcome = if corrupted_read.is_some() && level != ConsistencyLevel::Weak {
            LevelOutcome::fail(0)
        } else {
            decide(level, timeline, budget, &meter)
        };
        stats.chunks_drained += outcome.chunks;
        let witness = match (&outcome.witness, level) {
            (Some((dag, rf)), l) if l != ConsistencyLevel::Weak => Some(Witness::new(dag, rf)),
            _ => None,
        };
        decided[slot] = Some(LevelResult {
            level,
            verdict: outcome.verdict,
            implied_by: None,
            witness,
        });
        match outcome.verdict {
            Verdict::Pass => {
                for (i, &other) in levels.iter().enumerate() {
                    if decided[i].is_none() && implies(level, other) {
                        decided[i] = Some(LevelResult {
                            level: other,
                            verdict: Verdict::Pass,
                            implied_by: Some(level),
                            witness: None,
                        });
                    }
                }
            }
            Verdict::Fail => {
                for (i, &other) in levels.iter().enumerate() {
                    if other != level && implies(other, level) {
                        match &mut decided[i] {
                            Some(r) if r.verdict == Verdict::Unknown => r.verdict = Verdict::Fail,
                            Some(_) => {}
                            slot @ None => {
                                *slot = Some(LevelResult {
                                    level: other,
                                    verdict: Verdict::Fail,
                                    implied_by: None,
                                    witness: None,
                                })
                            }
                        }
                    }
                }
            }
            Verdict::Unknown => {}
        }
    }
    stats.states_explored = meter.states();
    stats.elapsed_ns = started.elapsed().as_nanos() as u64;
    ConformityReport {
        results: decided.into_iter().map(|r| r.expect("every level decided")).collect(),
        stats,
        corrupted_read,
    }
}
