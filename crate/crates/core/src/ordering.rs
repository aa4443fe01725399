//! Candidate orderings: DAGs over operations with cached reachability, the
//! reads-from map, and the read-materialization rules built on them.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::constraints::Convergence;
use crate::history::{OpId, Timeline, Value, INITIAL_VALUE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrderingError {
    #[error("edge {from} -> {to} would close a cycle")]
    Cycle { from: OpId, to: OpId },
    #[error("operation {0} is not a node of the ordering")]
    UnknownNode(OpId),
}

/// A square bit matrix stored row-major in one allocation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct BitMatrix {
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        BitMatrix {
            words,
            bits: vec![0; words * n],
        }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    fn or_row(&mut self, i: usize, src: &[u64]) {
        for (dst, s) in self.bits[i * self.words..(i + 1) * self.words]
            .iter_mut()
            .zip(src)
        {
            *dst |= s;
        }
    }
}

fn ones(row: &[u64]) -> impl Iterator<Item = usize> + '_ {
    row.iter().enumerate().flat_map(|(w, &word)| {
        let mut rest = word;
        std::iter::from_fn(move || {
            if rest == 0 {
                return None;
            }
            let bit = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(w * 64 + bit)
        })
    })
}

/// A DAG over a subset of a timeline's operations.
///
/// Ops that are not nodes (indeterminate writes on a branch where they did
/// not take effect) carry no edges. Reachability is kept closed under
/// transitivity as edges are added, so `ordered_before` is a bit lookup.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OrderingDag {
    n: usize,
    nodes: Vec<bool>,
    after: BitMatrix,
    before: BitMatrix,
}

impl OrderingDag {
    /// An edgeless ordering over `nodes`, for a timeline of `n` ops.
    pub fn new(n: usize, nodes: impl IntoIterator<Item = OpId>) -> Self {
        let mut present = vec![false; n];
        for op in nodes {
            present[op.index()] = true;
        }
        OrderingDag {
            n,
            nodes: present,
            after: BitMatrix::new(n),
            before: BitMatrix::new(n),
        }
    }

    /// An edgeless ordering containing every op of the timeline.
    pub fn edgeless(timeline: &Timeline) -> Self {
        Self::new(timeline.len(), timeline.op_ids())
    }

    pub fn from_edges(
        n: usize,
        nodes: impl IntoIterator<Item = OpId>,
        edges: impl IntoIterator<Item = (OpId, OpId)>,
    ) -> Result<Self, OrderingError> {
        let mut dag = Self::new(n, nodes);
        for (a, b) in edges {
            dag.add_edge(a, b)?;
        }
        Ok(dag)
    }

    /// A serial chain through `order`.
    pub fn chain(n: usize, order: &[OpId]) -> Self {
        let mut dag = Self::new(n, order.iter().copied());
        for pair in order.windows(2) {
            dag.add_edge(pair[0], pair[1]).expect("a chain is acyclic");
        }
        dag
    }

    pub fn op_count(&self) -> usize {
        self.n
    }

    pub fn contains(&self, op: OpId) -> bool {
        self.nodes.get(op.index()).copied().unwrap_or(false)
    }

    pub fn nodes(&self) -> impl Iterator<Item = OpId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| OpId::from(i))
    }

    /// `a ⇝ b`: `b` is reachable from `a`. Irreflexive.
    pub fn ordered_before(&self, a: OpId, b: OpId) -> bool {
        self.after.get(a.index(), b.index())
    }

    /// Neither `a ⇝ b` nor `b ⇝ a`.
    pub fn unordered(&self, a: OpId, b: OpId) -> bool {
        a != b && !self.ordered_before(a, b) && !self.ordered_before(b, a)
    }

    /// Everything `op` is ordered before.
    pub fn successors(&self, op: OpId) -> impl Iterator<Item = OpId> + '_ {
        ones(self.after.row(op.index())).map(OpId::from)
    }

    /// Everything ordered before `op`.
    pub fn predecessors(&self, op: OpId) -> impl Iterator<Item = OpId> + '_ {
        ones(self.before.row(op.index())).map(OpId::from)
    }

    /// Adds `a ⇝ b`. Returns whether the relation grew.
    pub fn add_edge(&mut self, a: OpId, b: OpId) -> Result<bool, OrderingError> {
        for op in [a, b] {
            if !self.contains(op) {
                return Err(OrderingError::UnknownNode(op));
            }
        }
        if a == b || self.ordered_before(b, a) {
            return Err(OrderingError::Cycle { from: a, to: b });
        }
        if self.ordered_before(a, b) {
            return Ok(false);
        }
        let (ai, bi) = (a.index(), b.index());
        let mut down: Vec<u64> = self.before.row(ai).to_vec();
        down[ai / 64] |= 1 << (ai % 64);
        let mut up: Vec<u64> = self.after.row(bi).to_vec();
        up[bi / 64] |= 1 << (bi % 64);
        for x in ones(&down).collect::<Vec<_>>() {
            self.after.or_row(x, &up);
        }
        for y in ones(&up).collect::<Vec<_>>() {
            self.before.or_row(y, &down);
        }
        Ok(true)
    }

    /// Builds an ordering directly from a transitively closed relation given
    /// as `after[i]` bitmasks over `nodes` (positions in `nodes`, not op ids).
    /// Used by the exhaustive enumerator, which produces closed relations.
    pub(crate) fn from_closed_masks(n: usize, nodes: &[OpId], after: &[u64]) -> Self {
        let mut dag = Self::new(n, nodes.iter().copied());
        for (i, &mask) in after.iter().enumerate() {
            for j in ones(std::slice::from_ref(&mask)) {
                let (a, b) = (nodes[i].index(), nodes[j].index());
                dag.after.set(a, b);
                dag.before.set(b, a);
            }
        }
        dag
    }

    /// A node order consistent with the DAG (ties by op id).
    pub fn topological_order(&self) -> Vec<OpId> {
        let mut order: Vec<OpId> = self.nodes().collect();
        // In a transitively closed DAG, sorting by the number of predecessors
        // is a valid topological order.
        order.sort_by_key(|&op| (ones(self.before.row(op.index())).count(), op));
        order
    }

    /// The transitive reduction: `a -> b` with no node strictly between.
    pub fn hasse_edges(&self) -> Vec<(OpId, OpId)> {
        let mut edges = Vec::new();
        for a in self.nodes() {
            for b in self.successors(a) {
                let covered = self
                    .successors(a)
                    .any(|m| m != b && self.ordered_before(m, b));
                if !covered {
                    edges.push((a, b));
                }
            }
        }
        edges
    }
}

/// Where a read-bearing operation takes its value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Initial,
    Op(OpId),
}

impl Source {
    pub fn value(self, timeline: &Timeline) -> Value {
        match self {
            Source::Initial => INITIAL_VALUE,
            Source::Op(w) => timeline
                .span(w)
                .written_value()
                .expect("reads-from source is a writer"),
        }
    }

    pub fn op(self) -> Option<OpId> {
        match self {
            Source::Initial => None,
            Source::Op(w) => Some(w),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Initial => f.write_str("initial"),
            Source::Op(op) => write!(f, "{op}"),
        }
    }
}

/// Reads-from assignment, indexed by reader op id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ReadsFrom {
    sources: Vec<Option<Source>>,
}

impl ReadsFrom {
    pub fn new(n: usize) -> Self {
        ReadsFrom {
            sources: vec![None; n],
        }
    }

    pub fn set(&mut self, reader: OpId, source: Source) {
        self.sources[reader.index()] = Some(source);
    }

    pub fn clear(&mut self, reader: OpId) {
        self.sources[reader.index()] = None;
    }

    pub fn get(&self, reader: OpId) -> Option<Source> {
        self.sources.get(reader.index()).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (OpId, Source)> + '_ {
        self.sources
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (OpId::from(i), s)))
    }
}

/// Writers on `r`'s key ordered before `r` with no other such writer in
/// between. Empty means `r` sees the initial value.
pub fn immediate_predecessors(dag: &OrderingDag, timeline: &Timeline, r: OpId) -> Vec<OpId> {
    let key = timeline.span(r).key;
    let writers: Vec<OpId> = dag
        .predecessors(r)
        .filter(|&w| {
            let span = timeline.span(w);
            span.key == key && span.is_writer()
        })
        .collect();
    writers
        .iter()
        .copied()
        .filter(|&w| !writers.iter().any(|&v| dag.ordered_before(w, v)))
        .collect()
}

/// Whether every reader's value is explained by the ordering under the given
/// convergence mode. See the crate docs for the single-value reading of CPO.
pub fn validate_read_materialization(
    dag: &OrderingDag,
    timeline: &Timeline,
    rf: &ReadsFrom,
    mode: Convergence,
) -> bool {
    // (key, predecessor set, selected value) for the CPO agreement rule.
    let mut selections: Vec<(usize, Vec<OpId>, Value)> = Vec::new();
    for r in dag.nodes() {
        let span = timeline.span(r);
        let Some(constraint) = span.read_constraint() else {
            continue;
        };
        let Some(source) = rf.get(r) else {
            return false;
        };
        let preds = immediate_predecessors(dag, timeline, r);
        let sourced = match source {
            Source::Initial => preds.is_empty(),
            Source::Op(w) => preds.contains(&w),
        };
        let value = source.value(timeline);
        if !sourced || !constraint.accepts(value) {
            return false;
        }
        match mode {
            Convergence::So if preds.len() > 1 => return false,
            Convergence::Cpo => {
                if selections
                    .iter()
                    .any(|(k, p, v)| *k == span.key && *p == preds && *v != value)
                {
                    return false;
                }
                selections.push((span.key, preds, value));
            }
            _ => {}
        }
    }
    true
}

/// Writers (on any key) ordered before `op`.
fn writers_before(dag: &OrderingDag, timeline: &Timeline, op: OpId) -> BTreeSet<OpId> {
    dag.predecessors(op)
        .filter(|&w| timeline.span(w).is_writer())
        .collect()
}

/// Total order, except that pure reads with the same writers before them may
/// be left unordered.
pub fn is_serial_order(dag: &OrderingDag, timeline: &Timeline) -> bool {
    is_serial_among(dag, timeline, &dag.nodes().collect::<Vec<_>>())
}

/// [`is_serial_order`] restricted to `ops`, with "writers before" also
/// restricted to `ops`.
pub(crate) fn is_serial_among(dag: &OrderingDag, timeline: &Timeline, ops: &[OpId]) -> bool {
    let members: BTreeSet<OpId> = ops.iter().copied().collect();
    for (i, &a) in ops.iter().enumerate() {
        for &b in &ops[i + 1..] {
            if !dag.unordered(a, b) {
                continue;
            }
            let (sa, sb) = (timeline.span(a), timeline.span(b));
            if !(sa.is_pure_read() && sb.is_pure_read()) {
                return false;
            }
            let wa: BTreeSet<OpId> = writers_before(dag, timeline, a)
                .intersection(&members)
                .copied()
                .collect();
            let wb: BTreeSet<OpId> = writers_before(dag, timeline, b)
                .intersection(&members)
                .copied()
                .collect();
            if wa != wb {
                return false;
            }
        }
    }
    true
}

/// A concrete ordering and reads-from map demonstrating a pass.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub edges: Vec<(OpId, OpId)>,
    pub reads_from: Vec<(OpId, Source)>,
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Source::Initial => serializer.serialize_str("initial"),
            Source::Op(op) => serializer.serialize_u32(op.0),
        }
    }
}

impl Witness {
    pub fn new(dag: &OrderingDag, rf: &ReadsFrom) -> Self {
        let mut edges = dag.hasse_edges();
        edges.sort();
        let reads_from = rf.iter().filter(|(r, _)| dag.contains(*r)).collect();
        Witness { edges, reads_from }
    }

    /// One `a -> b` line per Hasse edge, then one `r reads-from w` line per
    /// reader, each group sorted by op id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} -> {b}");
        }
        for (r, s) in &self.reads_from {
            let _ = writeln!(out, "{r} reads-from {s}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::HistoryBuilder;

    fn ids(v: &[u32]) -> Vec<OpId> {
        v.iter().map(|&i| OpId(i)).collect()
    }

    #[test]
    fn chain_reachability() {
        let dag = OrderingDag::chain(3, &ids(&[0, 1, 2]));
        assert!(dag.ordered_before(OpId(0), OpId(2)));
        assert!(!dag.ordered_before(OpId(2), OpId(0)));
        assert!(!dag.ordered_before(OpId(1), OpId(1)));
    }

    #[test]
    fn isolated_nodes_are_unordered() {
        let dag = OrderingDag::new(2, ids(&[0, 1]));
        assert!(dag.unordered(OpId(0), OpId(1)));
    }

    #[test]
    fn cycles_and_unknown_nodes_are_rejected() {
        let mut dag = OrderingDag::chain(3, &ids(&[0, 1, 2]));
        assert_eq!(
            dag.add_edge(OpId(2), OpId(0)),
            Err(OrderingError::Cycle {
                from: OpId(2),
                to: OpId(0)
            })
        );
        assert_eq!(dag.add_edge(OpId(0), OpId(2)), Ok(false));
        let mut partial = OrderingDag::new(3, ids(&[0, 1]));
        assert_eq!(
            partial.add_edge(OpId(0), OpId(2)),
            Err(OrderingError::UnknownNode(OpId(2)))
        );
    }

    #[test]
    fn hasse_and_topological_order() {
        let dag = OrderingDag::from_edges(
            4,
            ids(&[0, 1, 2, 3]),
            [(OpId(0), OpId(1)), (OpId(1), OpId(3)), (OpId(0), OpId(3)), (OpId(2), OpId(3))],
        )
        .unwrap();
        assert_eq!(
            dag.hasse_edges(),
            vec![(OpId(0), OpId(1)), (OpId(1), OpId(3)), (OpId(2), OpId(3))]
        );
        let order = dag.topological_order();
        assert_eq!(order.last(), Some(&OpId(3)));
    }

    // W(c,x,1) -> W(d,x,2) -> R(c,x)=2 -> W(d,y,2) -> R(c,y)=2
    fn so_example() -> (Timeline, OrderingDag, ReadsFrom) {
        let timeline = HistoryBuilder::new()
            .write("c", "x", 1, 0, 10)
            .write("d", "x", 2, 20, 30)
            .read("c", "x", 2, 40, 50)
            .write("d", "y", 2, 60, 70)
            .read("c", "y", 2, 80, 90)
            .timeline()
            .unwrap();
        let dag = OrderingDag::chain(5, &ids(&[0, 1, 2, 3, 4]));
        let mut rf = ReadsFrom::new(5);
        rf.set(OpId(2), Source::Op(OpId(1)));
        rf.set(OpId(4), Source::Op(OpId(3)));
        (timeline, dag, rf)
    }

    #[test]
    fn immediate_predecessor_on_a_chain() {
        let (timeline, dag, _) = so_example();
        assert_eq!(immediate_predecessors(&dag, &timeline, OpId(2)), ids(&[1]));
    }

    #[test]
    fn read_without_writers_sees_initial() {
        let timeline = HistoryBuilder::new().read("c", "z", 0, 0, 10).timeline().unwrap();
        let dag = OrderingDag::edgeless(&timeline);
        assert!(immediate_predecessors(&dag, &timeline, OpId(0)).is_empty());
        let mut rf = ReadsFrom::new(1);
        rf.set(OpId(0), Source::Initial);
        assert!(validate_read_materialization(&dag, &timeline, &rf, Convergence::So));
    }

    #[test]
    fn chain_materializes_in_every_mode() {
        let (timeline, dag, rf) = so_example();
        for mode in [Convergence::So, Convergence::Cpo, Convergence::Npo] {
            assert!(validate_read_materialization(&dag, &timeline, &rf, mode));
        }
        assert!(is_serial_order(&dag, &timeline));
    }

    #[test]
    fn missing_reads_from_fails() {
        let (timeline, dag, _) = so_example();
        let rf = ReadsFrom::new(5);
        assert!(!validate_read_materialization(&dag, &timeline, &rf, Convergence::Npo));
    }

    // The branching CPO example: W(c,x,1) -> R(d,x)=1 -> {W(c,y,2) -> W(c,y,3),
    // W(d,y,4)} -> {R(e,y), R(f,y)}.
    fn branching(e_value: Value, f_value: Value) -> (Timeline, OrderingDag) {
        let timeline = HistoryBuilder::new()
            .write("c", "x", 1, 0, 10)
            .read("d", "x", 1, 20, 30)
            .write("c", "y", 2, 40, 50)
            .write("c", "y", 3, 60, 70)
            .write("d", "y", 4, 65, 75)
            .read("e", "y", e_value, 80, 90)
            .read("f", "y", f_value, 80, 90)
            .timeline()
            .unwrap();
        let edges = [(0, 1), (1, 2), (2, 3), (1, 4), (3, 5), (4, 5), (3, 6), (4, 6)]
            .map(|(a, b)| (OpId(a), OpId(b)));
        let dag = OrderingDag::from_edges(7, timeline.op_ids(), edges).unwrap();
        (timeline, dag)
    }

    fn rf_by_value(timeline: &Timeline, dag: &OrderingDag) -> ReadsFrom {
        let mut rf = ReadsFrom::new(timeline.len());
        for span in timeline.spans() {
            if let Some(c) = span.read_constraint() {
                let preds = immediate_predecessors(dag, timeline, span.op_id);
                let source = preds
                    .into_iter()
                    .map(Source::Op)
                    .find(|s| c.accepts(s.value(timeline)))
                    .unwrap_or(Source::Initial);
                rf.set(span.op_id, source);
            }
        }
        rf
    }

    #[test]
    fn two_unordered_writers_both_precede() {
        let (timeline, dag) = branching(4, 4);
        assert_eq!(immediate_predecessors(&dag, &timeline, OpId(5)), ids(&[3, 4]));
        assert!(!is_serial_order(&dag, &timeline));
    }

    #[test]
    fn divergent_selections_are_npo_but_not_cpo() {
        let (timeline, dag) = branching(3, 4);
        let rf = rf_by_value(&timeline, &dag);
        assert!(validate_read_materialization(&dag, &timeline, &rf, Convergence::Npo));
        assert!(!validate_read_materialization(&dag, &timeline, &rf, Convergence::Cpo));
        let (timeline, dag) = branching(4, 4);
        let rf = rf_by_value(&timeline, &dag);
        assert!(validate_read_materialization(&dag, &timeline, &rf, Convergence::Cpo));
        assert!(!validate_read_materialization(&dag, &timeline, &rf, Convergence::So));
    }

    #[test]
    fn read_cluster_is_serial() {
        // W(c,x,1) -> W(c,y,2) -> {R(c,x)=1, R(d,y)=2, R(e,x)=1} -> W(c,x,3)
        let timeline = HistoryBuilder::new()
            .write("c", "x", 1, 0, 10)
            .write("c", "y", 2, 20, 30)
            .read("c", "x", 1, 40, 50)
            .read("d", "y", 2, 40, 50)
            .read("e", "x", 1, 40, 50)
            .write("c", "x", 3, 60, 70)
            .timeline()
            .unwrap();
        let x3 = timeline
            .op_ids()
            .find(|&op| timeline.span(op).kind == crate::history::OpKind::Write(3))
            .unwrap();
        let reads: Vec<OpId> = timeline
            .op_ids()
            .filter(|&op| timeline.span(op).is_pure_read())
            .collect();
        let mut dag = OrderingDag::edgeless(&timeline);
        dag.add_edge(OpId(0), OpId(1)).unwrap();
        for &r in &reads {
            dag.add_edge(OpId(1), r).unwrap();
            dag.add_edge(r, x3).unwrap();
        }
        assert!(is_serial_order(&dag, &timeline));
        let rf = rf_by_value(&timeline, &dag);
        assert!(validate_read_materialization(&dag, &timeline, &rf, Convergence::So));
    }

    #[test]
    fn witness_text_is_sorted() {
        let (_, dag, rf) = so_example();
        let text = Witness::new(&dag, &rf).to_text();
        assert_eq!(
            text,
            "0 -> 1\n1 -> 2\n2 -> 3\n3 -> 4\n2 reads-from 1\n4 reads-from 3\n"
        );
    }
}
