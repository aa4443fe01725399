//! Convergence modes, relationship constraints and session guarantees, each
//! decided for a fixed (timeline, ordering, reads-from) triple.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::history::{Nanos, OpId, Timeline};
use crate::ordering::{is_serial_among, OrderingDag, ReadsFrom, Source};

/// Shape of a valid ordering, strongest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Convergence {
    /// Serial order.
    So,
    /// Convergent partial order.
    Cpo,
    /// Non-convergent partial order.
    Npo,
}

impl Convergence {
    pub fn at_least(self, other: Convergence) -> bool {
        self <= other
    }
}

impl fmt::Display for Convergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convergence::So => "SO",
            Convergence::Cpo => "CPO",
            Convergence::Npo => "NPO",
        })
    }
}

/// Staleness limits after which a write must be visible to reads of its key.
/// Whichever enabled limit is reached first applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StalenessBound {
    /// `j`: later operations acknowledged to the writer's client.
    pub max_writer_ops: Option<u32>,
    /// `k`: later acknowledged updates to the same key.
    pub max_key_updates: Option<u32>,
    /// `t`: time since the write was acknowledged.
    pub max_delay: Option<Nanos>,
}

impl StalenessBound {
    pub fn is_valid(&self) -> bool {
        let any = self.max_writer_ops.is_some()
            || self.max_key_updates.is_some()
            || self.max_delay.is_some();
        any && self.max_writer_ops != Some(0)
            && self.max_key_updates != Some(0)
            && self.max_delay.is_none_or(|t| t > 0)
    }

    /// Forces at least every visibility obligation `other` forces.
    pub fn at_least(&self, other: &StalenessBound) -> bool {
        fn tighter<T: Ord>(a: Option<T>, b: Option<T>) -> bool {
            match (a, b) {
                (_, None) => true,
                (Some(a), Some(b)) => a <= b,
                (None, Some(_)) => false,
            }
        }
        tighter(self.max_writer_ops, other.max_writer_ops)
            && tighter(self.max_key_updates, other.max_key_updates)
            && tighter(self.max_delay, other.max_delay)
    }
}

impl fmt::Display for StalenessBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(t) = self.max_delay {
            parts.push(format!("t={t}"));
        }
        if let Some(j) = self.max_writer_ops {
            parts.push(format!("j={j}"));
        }
        if let Some(k) = self.max_key_updates {
            parts.push(format!("k={k}"));
        }
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relationship {
    Rt,
    RtPrime,
    /// Real-time among writes, causal otherwise.
    RtwCaslr,
    /// Causal, and no real-time pair inverted.
    RtPrimeCasl,
    BoundedCasl(StalenessBound),
    Casl,
    Fifo,
    CaslPerKey,
    None,
}

impl Relationship {
    /// Whether every ordering satisfying `self` satisfies `other`, given the
    /// surrounding convergence (per-key seriality only follows from a
    /// globally serial ordering).
    pub fn at_least(&self, other: &Relationship, convergence: Convergence) -> bool {
        use Relationship::*;
        match (self, other) {
            (_, None) => true,
            (a, b) if a == b => true,
            (Rt, _) => true,
            (BoundedCasl(a), BoundedCasl(b)) => a.at_least(b),
            (RtwCaslr | RtPrimeCasl | BoundedCasl(_), Casl | Fifo) => true,
            (RtPrimeCasl, RtPrime) => true,
            (Casl, Fifo) => true,
            (RtwCaslr | Casl | BoundedCasl(_), CaslPerKey) => convergence == Convergence::So,
            _ => false,
        }
    }
}

impl fmt::Display for Relationship {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relationship::Rt => f.write_str("RT"),
            Relationship::RtPrime => f.write_str("RT'"),
            Relationship::RtwCaslr => f.write_str("RT-W & CASL-R"),
            Relationship::RtPrimeCasl => f.write_str("RT' & CASL"),
            Relationship::BoundedCasl(b) => write!(f, "Bounded-CASL({b})"),
            Relationship::Casl => f.write_str("CASL"),
            Relationship::Fifo => f.write_str("FIFO"),
            Relationship::CaslPerKey => f.write_str("CASL-per-key"),
            Relationship::None => f.write_str("None"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SessionGuarantee {
    ReadMyWrites,
    MonotonicWrites,
    MonotonicReads,
    WritesFollowReads,
}

impl SessionGuarantee {
    pub const ALL: [SessionGuarantee; 4] = [
        SessionGuarantee::ReadMyWrites,
        SessionGuarantee::MonotonicWrites,
        SessionGuarantee::MonotonicReads,
        SessionGuarantee::WritesFollowReads,
    ];
    pub const FIFO: [SessionGuarantee; 3] = [
        SessionGuarantee::ReadMyWrites,
        SessionGuarantee::MonotonicWrites,
        SessionGuarantee::MonotonicReads,
    ];

    pub fn title(&self) -> &'static str {
        match self {
            SessionGuarantee::ReadMyWrites => "Read My Writes",
            SessionGuarantee::MonotonicWrites => "Monotonic Writes",
            SessionGuarantee::MonotonicReads => "Monotonic Reads",
            SessionGuarantee::WritesFollowReads => "Writes Follow Reads",
        }
    }
}

/// Each client's effective ops, in issue order.
fn sessions<'a>(dag: &'a OrderingDag, timeline: &'a Timeline) -> impl Iterator<Item = Vec<OpId>> + 'a {
    timeline.clients().iter().map(move |q| {
        q.ops
            .iter()
            .copied()
            .filter(|&op| dag.contains(op))
            .collect()
    })
}

/// Consecutive same-client pairs; their transitive closure is program order.
pub fn program_order_pairs(dag: &OrderingDag, timeline: &Timeline) -> Vec<(OpId, OpId)> {
    sessions(dag, timeline)
        .flat_map(|ops| ops.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>())
        .collect()
}

/// Every pair where the first op is acknowledged before the second starts.
pub fn realtime_pairs(timeline: &Timeline) -> Vec<(OpId, OpId)> {
    let spans = timeline.spans();
    let mut pairs = Vec::new();
    for a in spans {
        for b in spans {
            if a.precedes(b) {
                pairs.push((a.op_id, b.op_id));
            }
        }
    }
    pairs
}

fn present(dag: &OrderingDag, (a, b): (OpId, OpId)) -> bool {
    dag.contains(a) && dag.contains(b)
}

fn all_ordered(dag: &OrderingDag, pairs: impl IntoIterator<Item = (OpId, OpId)>) -> bool {
    pairs
        .into_iter()
        .filter(|&p| present(dag, p))
        .all(|(a, b)| dag.ordered_before(a, b))
}

/// Real-time pairs and program order are all reflected in the ordering.
pub fn check_rt(dag: &OrderingDag, timeline: &Timeline) -> bool {
    all_ordered(dag, realtime_pairs(timeline)) && all_ordered(dag, program_order_pairs(dag, timeline))
}

/// No real-time pair is inverted.
pub fn check_rt_prime(dag: &OrderingDag, timeline: &Timeline) -> bool {
    realtime_pairs(timeline)
        .into_iter()
        .filter(|&p| present(dag, p))
        .all(|(a, b)| !dag.ordered_before(b, a))
}

/// Program order plus reads-from: the pairs whose closure is causality.
pub fn causal_base_pairs(dag: &OrderingDag, timeline: &Timeline, rf: &ReadsFrom) -> Vec<(OpId, OpId)> {
    let mut pairs = program_order_pairs(dag, timeline);
    for (r, source) in rf.iter() {
        if let Source::Op(w) = source {
            if dag.contains(r) {
                pairs.push((w, r));
            }
        }
    }
    pairs
}

/// The transitive closure of program order and reads-from.
pub fn causal_pairs(dag: &OrderingDag, timeline: &Timeline, rf: &ReadsFrom) -> BTreeSet<(OpId, OpId)> {
    let n = timeline.len();
    let mut reach = vec![vec![false; n]; n];
    for (a, b) in causal_base_pairs(dag, timeline, rf) {
        reach[a.index()][b.index()] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut pairs = BTreeSet::new();
    for (i, row) in reach.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            if r {
                pairs.insert((OpId::from(i), OpId::from(j)));
            }
        }
    }
    pairs
}

/// Every causal pair is ordered. Checking the generating pairs suffices
/// because the ordering is transitive.
pub fn check_casl(dag: &OrderingDag, timeline: &Timeline, rf: &ReadsFrom) -> bool {
    all_ordered(dag, causal_base_pairs(dag, timeline, rf))
}

/// `a ⇝ b` where the initial value is below every write.
fn source_before(dag: &OrderingDag, a: Source, b: Source) -> bool {
    match (a, b) {
        (Source::Initial, Source::Op(_)) => true,
        (Source::Op(a), Source::Op(b)) => dag.ordered_before(a, b),
        (_, Source::Initial) => false,
    }
}

/// Read My Writes: a read is ordered after its client's latest earlier write
/// to the key, and does not take its value from something ordered before
/// that write.
fn read_my_writes(dag: &OrderingDag, timeline: &Timeline, rf: &ReadsFrom, session: &[OpId]) -> bool {
    for (i, &r) in session.iter().enumerate() {
        let span = timeline.span(r);
        if !span.is_reader() {
            continue;
        }
        let own = session[..i]
            .iter()
            .rev()
            .find(|&&w| timeline.span(w).is_writer() && timeline.span(w).key == span.key);
        let Some(&w) = own else { continue };
        let Some(source) = rf.get(r) else { return false };
        if !dag.ordered_before(w, r) || source_before(dag, source, Source::Op(w)) {
            return false;
        }
    }
    true
}

fn monotonic_writes(dag: &OrderingDag, timeline: &Timeline, session: &[OpId]) -> bool {
    let writes: Vec<OpId> = session
        .iter()
        .copied()
        .filter(|&op| timeline.span(op).is_writer())
        .collect();
    writes.windows(2).all(|w| dag.ordered_before(w[0], w[1]))
}

/// Monotonic Reads: whatever an earlier read saw is ordered before every
/// later read, and a later read of the same key does not go back to an older
/// value.
fn monotonic_reads(dag: &OrderingDag, timeline: &Timeline, rf: &ReadsFrom, session: &[OpId]) -> bool {
    let reads: Vec<OpId> = session
        .iter()
        .copied()
        .filter(|&op| timeline.span(op).is_reader())
        .collect();
    for (i, &r1) in reads.iter().enumerate() {
        let Some(s1) = rf.get(r1) else { return false };
        for &r2 in &reads[i + 1..] {
            let Some(s2) = rf.get(r2) else { return false };
            if let Source::Op(w1) = s1 {
                if !dag.ordered_before(w1, r2) {
                    return false;
                }
            }
            if timeline.span(r1).key == timeline.span(r2).key && source_before(dag, s2, s1) {
                return false;
            }
        }
    }
    true
}

fn writes_follow_reads(dag: &OrderingDag, timeline: &Timeline, session: &[OpId]) -> bool {
    for (i, &r) in session.iter().enumerate() {
        if !timeline.span(r).is_reader() {
            continue;
        }
        for &w in &session[i + 1..] {
            if timeline.span(w).is_writer() && !dag.ordered_before(r, w) {
                return false;
            }
        }
    }
    true
}

pub fn check_session_guarantees(
    dag: &OrderingDag,
    timeline: &Timeline,
    rf: &ReadsFrom,
    which: &[SessionGuarantee],
) -> bool {
    sessions(dag, timeline).all(|session| {
        which.iter().all(|g| match g {
            SessionGuarantee::ReadMyWrites => read_my_writes(dag, timeline, rf, &session),
            SessionGuarantee::MonotonicWrites => monotonic_writes(dag, timeline, &session),
            SessionGuarantee::MonotonicReads => monotonic_reads(dag, timeline, rf, &session),
            SessionGuarantee::WritesFollowReads => writes_follow_reads(dag, timeline, &session),
        })
    })
}

pub fn check_fifo(dag: &OrderingDag, timeline: &Timeline, rf: &ReadsFrom) -> bool {
    check_session_guarantees(dag, timeline, rf, &SessionGuarantee::FIFO)
}

/// Real-time pairs between two writes.
pub fn realtime_write_pairs(timeline: &Timeline) -> Vec<(OpId, OpId)> {
    realtime_pairs(timeline)
        .into_iter()
        .filter(|&(a, b)| timeline.span(a).is_writer() && timeline.span(b).is_writer())
        .collect()
}

pub fn check_rtw_caslr(dag: &OrderingDag, timeline: &Timeline, rf: &ReadsFrom) -> bool {
    check_casl(dag, timeline, rf) && all_ordered(dag, realtime_write_pairs(timeline))
}

/// `(w, r)` pairs where some enabled staleness limit has been exceeded by the
/// time `r` starts, so `w` must be visible to `r`. Only acknowledged writes
/// are considered.
pub fn bounded_pairs(timeline: &Timeline, bound: &StalenessBound) -> Vec<(OpId, OpId)> {
    let spans = timeline.spans();
    let mut pairs = Vec::new();
    for w in spans {
        let (Some(acked), true) = (w.end, w.is_writer() && !w.is_indeterminate()) else {
            continue;
        };
        let writer_session = &timeline.clients()[w.client].ops[w.seq + 1..];
        for r in spans {
            if r.key != w.key || !r.is_reader() || r.op_id == w.op_id {
                continue;
            }
            let by_time = bound.max_delay.is_some_and(|t| r.start > acked + t);
            let by_writer = bound.max_writer_ops.is_some_and(|j| {
                let later = writer_session
                    .iter()
                    .filter(|&&op| timeline.span(op).end.is_some_and(|e| e < r.start))
                    .count();
                later >= j as usize
            });
            let by_key = bound.max_key_updates.is_some_and(|k| {
                let later = spans
                    .iter()
                    .filter(|u| {
                        u.key == w.key
                            && u.is_writer()
                            && u.start > acked
                            && u.end.is_some_and(|e| e < r.start)
                    })
                    .count();
                later >= k as usize
            });
            if by_time || by_writer || by_key {
                pairs.push((w.op_id, r.op_id));
            }
        }
    }
    pairs
}

pub fn check_bounded_casl(
    dag: &OrderingDag,
    timeline: &Timeline,
    rf: &ReadsFrom,
    bound: &StalenessBound,
) -> bool {
    check_casl(dag, timeline, rf) && all_ordered(dag, bounded_pairs(timeline, bound))
}

/// Per key: the ordering restricted to that key's ops is serial and respects
/// the key's own program order and reads-from.
pub fn check_casl_per_key(dag: &OrderingDag, timeline: &Timeline, rf: &ReadsFrom) -> bool {
    (0..timeline.keys().len()).all(|key| {
        let on_key = |op: OpId| timeline.span(op).key == key;
        let ops: Vec<OpId> = dag.nodes().filter(|&op| on_key(op)).collect();
        if !is_serial_among(dag, timeline, &ops) {
            return false;
        }
        sessions(dag, timeline).all(|session| {
            let mine: Vec<OpId> = session.into_iter().filter(|&op| on_key(op)).collect();
            mine.windows(2).all(|w| dag.ordered_before(w[0], w[1]))
        }) && ops.iter().all(|&r| match rf.get(r) {
            Some(Source::Op(w)) => dag.ordered_before(w, r),
            _ => true,
        })
    })
}

pub fn check_relationship(
    relationship: &Relationship,
    dag: &OrderingDag,
    timeline: &Timeline,
    rf: &ReadsFrom,
) -> bool {
    match relationship {
        Relationship::Rt => check_rt(dag, timeline),
        Relationship::RtPrime => check_rt_prime(dag, timeline),
        Relationship::RtwCaslr => check_rtw_caslr(dag, timeline, rf),
        Relationship::RtPrimeCasl => check_rt_prime(dag, timeline) && check_casl(dag, timeline, rf),
        Relationship::BoundedCasl(bound) => check_bounded_casl(dag, timeline, rf, bound),
        Relationship::Casl => check_casl(dag, timeline, rf),
        Relationship::Fifo => check_fifo(dag, timeline, rf),
        Relationship::CaslPerKey => check_casl_per_key(dag, timeline, rf),
        Relationship::None => true,
    }
}
