//! Partial-order levels: choose a reads-from source for every reader and
//! grow the ordering only by edges that the relationship forces.
//!
//! Every edge added is one that any satisfying ordering with the same
//! reads-from map must also contain, and every check applied is monotone in
//! the edge set, so a minimal ordering exists iff any ordering does. Strong
//! convergence is the one non-monotone requirement: when two readers of a key
//! end up with the same immediate predecessors but different values, the
//! search branches over the edges that could tell them apart.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::constraints::{
    bounded_pairs, program_order_pairs, realtime_pairs, realtime_write_pairs, Convergence,
    Relationship,
};
use crate::history::{OpId, Timeline};
use crate::ordering::{
    immediate_predecessors, validate_read_materialization, OrderingDag, ReadsFrom, Source,
};

use super::{LevelOutcome, Meter, SearchBudget};

#[derive(Clone)]
struct Node {
    dag: OrderingDag,
    rf: ReadsFrom,
    /// Pairs that must never become ordered.
    forbidden: Vec<(OpId, OpId)>,
}

/// One take-effect branch of the indeterminate writes.
struct Problem<'a> {
    timeline: &'a Timeline,
    convergence: Convergence,
    relationship: Relationship,
    /// Readers in the order sources are assigned.
    readers: Vec<OpId>,
    candidates: Vec<Vec<Source>>,
    /// Later same-session readers, for monotonic reads.
    later_readers: Vec<Vec<OpId>>,
    /// Effective writers per key.
    writers: Vec<Vec<OpId>>,
    root: Node,
}

enum Search {
    Found(Node),
    Exhausted,
    OutOfBudget,
}

struct Ctx<'m> {
    meter: &'m Meter,
    local: u64,
    limit: u64,
    abort: Option<&'m AtomicBool>,
}

impl Ctx<'_> {
    /// False once the search must stop, whether out of budget or because a
    /// sibling already succeeded.
    fn tick(&mut self) -> bool {
        if self.abort.is_some_and(|a| a.load(Ordering::Relaxed)) {
            return false;
        }
        self.meter.tick(&mut self.local, self.limit)
    }
}

impl<'a> Problem<'a> {
    fn new(
        timeline: &'a Timeline,
        nodes: &[OpId],
        convergence: Convergence,
        relationship: Relationship,
    ) -> Option<Self> {
        let mut dag = OrderingDag::new(timeline.len(), nodes.iter().copied());
        let present = |op: &OpId| dag.contains(*op);
        let mut writers = vec![Vec::new(); timeline.keys().len()];
        for &op in nodes {
            let span = timeline.span(op);
            if span.is_writer() {
                writers[span.key].push(op);
            }
        }

        let mut readers: Vec<OpId> = nodes
            .iter()
            .copied()
            .filter(|&op| timeline.span(op).is_reader())
            .collect();
        readers.sort_by_key(|&op| (timeline.span(op).start, op));

        let mut candidates = Vec::with_capacity(readers.len());
        for &r in &readers {
            let span = timeline.span(r);
            let constraint = span.read_constraint().expect("reader");
            let mut options: Vec<Source> = writers[span.key]
                .iter()
                .copied()
                .filter(|&w| w != r)
                .map(Source::Op)
                .filter(|s| constraint.accepts(s.value(timeline)))
                .collect();
            options.sort_by_key(|s| {
                let w = timeline.span(s.op().expect("writer"));
                (w.client != span.client, w.end.unwrap_or(i64::MAX), w.op_id)
            });
            if constraint.accepts(Source::Initial.value(timeline)) {
                options.push(Source::Initial);
            }
            candidates.push(options);
        }

        let later_readers = readers
            .iter()
            .map(|&r| {
                let span = timeline.span(r);
                timeline.clients()[span.client].ops[span.seq + 1..]
                    .iter()
                    .copied()
                    .filter(present)
                    .filter(|&op| timeline.span(op).is_reader())
                    .collect()
            })
            .collect();

        let mut forced = Vec::new();
        let mut forbidden = Vec::new();
        let causal = matches!(
            relationship,
            Relationship::Casl
                | Relationship::RtPrimeCasl
                | Relationship::RtwCaslr
                | Relationship::BoundedCasl(_)
                | Relationship::Rt
        );
        if causal {
            forced.extend(program_order_pairs(&dag, timeline));
        }
        match relationship {
            Relationship::Rt => forced.extend(realtime_pairs(timeline)),
            Relationship::RtwCaslr => forced.extend(realtime_write_pairs(timeline)),
            Relationship::BoundedCasl(bound) => forced.extend(bounded_pairs(timeline, &bound)),
            Relationship::RtPrime | Relationship::RtPrimeCasl => {
                forbidden.extend(realtime_pairs(timeline).into_iter().map(|(a, b)| (b, a)))
            }
            Relationship::Fifo => {
                for q in timeline.clients() {
                    let session: Vec<OpId> = q.ops.iter().copied().filter(present).collect();
                    let mut last_write = None;
                    let mut own: Vec<Option<OpId>> = vec![None; timeline.keys().len()];
                    for &op in &session {
                        let span = timeline.span(op);
                        if span.is_reader() {
                            if let Some(w) = own[span.key] {
                                forced.push((w, op));
                            }
                        }
                        if span.is_writer() {
                            if let Some(prev) = last_write {
                                forced.push((prev, op));
                            }
                            last_write = Some(op);
                            own[span.key] = Some(op);
                        }
                    }
                }
            }
            _ => {}
        }
        for (a, b) in forced {
            if dag.contains(a) && dag.contains(b) && dag.add_edge(a, b).is_err() {
                return None;
            }
        }
        forbidden.retain(|&(a, b)| dag.contains(a) && dag.contains(b));
        let root = Node {
            dag,
            rf: ReadsFrom::new(timeline.len()),
            forbidden,
        };
        let problem = Problem {
            timeline,
            convergence,
            relationship,
            readers,
            candidates,
            later_readers,
            writers,
            root,
        };
        (!problem.violated(&problem.root)).then_some(problem)
    }

    /// Whether a monotone requirement is already broken: an assigned source
    /// hidden behind another write, or a forbidden pair ordered.
    fn violated(&self, node: &Node) -> bool {
        if node
            .forbidden
            .iter()
            .any(|&(a, b)| node.dag.ordered_before(a, b))
        {
            return true;
        }
        node.rf.iter().any(|(r, source)| {
            let key = self.timeline.span(r).key;
            let mut others = self.writers[key].iter().filter(|&&w| w != r);
            match source {
                Source::Initial => others.any(|&w| node.dag.ordered_before(w, r)),
                Source::Op(w) => others.any(|&v| {
                    v != w && node.dag.ordered_before(w, v) && node.dag.ordered_before(v, r)
                }),
            }
        })
    }

    fn add(&self, node: &mut Node, a: OpId, b: OpId) -> bool {
        node.dag.add_edge(a, b).is_ok()
    }

    /// Assigns `source` to the `i`-th reader along with the edges it forces.
    fn assign(&self, node: &Node, i: usize, source: Source) -> Option<Node> {
        let r = self.readers[i];
        let mut next = node.clone();
        next.rf.set(r, source);
        if let Source::Op(w) = source {
            if !self.add(&mut next, w, r) {
                return None;
            }
            if self.relationship == Relationship::Fifo {
                for &later in &self.later_readers[i] {
                    if !self.add(&mut next, w, later) {
                        return None;
                    }
                }
            }
        }
        (!self.violated(&next)).then_some(next)
    }

    fn search(&self, node: Node, i: usize, ctx: &mut Ctx) -> Search {
        if !ctx.tick() {
            return Search::OutOfBudget;
        }
        if i == self.readers.len() {
            return self.converge(node, ctx);
        }
        let mut out_of_budget = false;
        for &source in &self.candidates[i] {
            let Some(next) = self.assign(&node, i, source) else {
                continue;
            };
            match self.search(next, i + 1, ctx) {
                Search::Found(n) => return Search::Found(n),
                Search::Exhausted => {}
                Search::OutOfBudget => {
                    out_of_budget = true;
                    break;
                }
            }
        }
        if out_of_budget {
            Search::OutOfBudget
        } else {
            Search::Exhausted
        }
    }

    /// The first pair of same-key readers that see the same predecessors but
    /// return different values.
    fn conflict(&self, node: &Node) -> Option<(OpId, OpId)> {
        let mut seen: Vec<(OpId, Vec<OpId>, i64)> = Vec::new();
        for &r in &self.readers {
            let key = self.timeline.span(r).key;
            let preds = immediate_predecessors(&node.dag, self.timeline, r);
            let value = node.rf.get(r).expect("assigned").value(self.timeline);
            if let Some((other, ..)) = seen.iter().find(|(o, p, v)| {
                self.timeline.span(*o).key == key && *p == preds && *v != value
            }) {
                return Some((*other, r));
            }
            seen.push((r, preds, value));
        }
        None
    }

    fn accept(&self, node: &Node) -> bool {
        validate_read_materialization(&node.dag, self.timeline, &node.rf, self.convergence)
    }

    fn converge(&self, node: Node, ctx: &mut Ctx) -> Search {
        if self.convergence != Convergence::Cpo {
            return if self.accept(&node) {
                Search::Found(node)
            } else {
                Search::Exhausted
            };
        }
        let Some((r1, r2)) = self.conflict(&node) else {
            return if self.accept(&node) {
                Search::Found(node)
            } else {
                Search::Exhausted
            };
        };
        // Any ordering that separates r1 from r2 must make some new writer
        // visible to one of them, or order two writers already visible.
        let key = self.timeline.span(r1).key;
        let dag = &node.dag;
        let mut options = Vec::new();
        let mut visible = Vec::new();
        for &r in &[r1, r2] {
            for &w in &self.writers[key] {
                if w == r || dag.ordered_before(w, r) {
                    if w != r && !visible.contains(&w) {
                        visible.push(w);
                    }
                    continue;
                }
                if !dag.ordered_before(r, w) {
                    options.push((w, r));
                }
            }
        }
        for (i, &a) in visible.iter().enumerate() {
            for &b in &visible[i + 1..] {
                if dag.unordered(a, b) {
                    options.push((a, b));
                    options.push((b, a));
                }
            }
        }
        let mut out_of_budget = false;
        for (i, &(a, b)) in options.iter().enumerate() {
            if !ctx.tick() {
                return Search::OutOfBudget;
            }
            let mut next = node.clone();
            next.forbidden.extend_from_slice(&options[..i]);
            if !self.add(&mut next, a, b) || self.violated(&next) {
                continue;
            }
            match self.converge(next, ctx) {
                Search::Found(n) => return Search::Found(n),
                Search::Exhausted => {}
                Search::OutOfBudget => {
                    out_of_budget = true;
                    break;
                }
            }
        }
        if out_of_budget {
            Search::OutOfBudget
        } else {
            Search::Exhausted
        }
    }
}

/// Decides a level with partial-order convergence by searching reads-from
/// maps, across every take-effect branch of the indeterminate writes.
pub fn check_partial_level(
    timeline: &Timeline,
    convergence: Convergence,
    relationship: &Relationship,
    budget: &SearchBudget,
    meter: &Meter,
) -> LevelOutcome {
    if *relationship == Relationship::CaslPerKey {
        // Per-key seriality leaves at most one predecessor per read, so the
        // convergence mode makes no difference.
        return super::serial::check_per_key(timeline, budget, meter);
    }
    if convergence == Convergence::So {
        return LevelOutcome::unknown(0);
    }
    let indeterminate: Vec<OpId> = timeline
        .op_ids()
        .filter(|&op| timeline.span(op).is_indeterminate())
        .collect();
    let total: u64 = 1u64.checked_shl(indeterminate.len() as u32).unwrap_or(u64::MAX);
    let tried = total.min(budget.max_branches);
    // Most effective branches first: a timed-out write usually did land.
    let problems: Vec<Problem> = (0..tried)
        .filter_map(|n| {
            let mask = total - 1 - n;
            let nodes: Vec<OpId> = timeline
                .op_ids()
                .filter(|op| match indeterminate.iter().position(|i| i == op) {
                    Some(bit) => mask >> bit & 1 == 1,
                    None => true,
                })
                .collect();
            Problem::new(timeline, &nodes, convergence, *relationship)
        })
        .collect();

    // Top-level tasks: one per (branch, source of the first reader).
    let tasks: Vec<(usize, Option<Source>)> = problems
        .iter()
        .enumerate()
        .flat_map(|(p, problem)| -> Vec<(usize, Option<Source>)> {
            match problem.candidates.first() {
                None => vec![(p, None)],
                Some(c) => c.iter().map(|&s| (p, Some(s))).collect(),
            }
        })
        .collect();

    let run = |&(p, first): &(usize, Option<Source>), ctx: &mut Ctx| -> Search {
        let problem = &problems[p];
        match first {
            None => problem.search(problem.root.clone(), 0, ctx),
            Some(source) => match problem.assign(&problem.root, 0, source) {
                Some(node) => problem.search(node, 1, ctx),
                None => Search::Exhausted,
            },
        }
    };

    let mut unknown = tried < total;
    let mut states = 0;
    let mut found: Option<(usize, Node)> = None;
    if budget.threads <= 1 {
        let mut ctx = Ctx {
            meter,
            local: 0,
            limit: budget.max_states,
            abort: None,
        };
        for task in &tasks {
            match run(task, &mut ctx) {
                Search::Found(node) => {
                    found = Some((task.0, node));
                    break;
                }
                Search::Exhausted => {}
                Search::OutOfBudget => {
                    unknown = true;
                    break;
                }
            }
        }
        states = ctx.local;
    } else {
        let done = AtomicBool::new(false);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(budget.threads)
            .build()
            .expect("thread pool");
        let results: Vec<(Search, u64, bool)> = pool.install(|| {
            tasks
                .par_iter()
                .map(|task| {
                    let mut ctx = Ctx {
                        meter,
                        local: 0,
                        limit: budget.max_states,
                        abort: Some(&done),
                    };
                    let aborted_before = done.load(Ordering::Relaxed);
                    let result = run(task, &mut ctx);
                    if let Search::Found(_) = result {
                        done.store(true, Ordering::Relaxed);
                    }
                    (result, ctx.local, aborted_before)
                })
                .collect()
        });
        for ((result, local, _), task) in results.into_iter().zip(&tasks) {
            states += local;
            match result {
                Search::Found(node) if found.is_none() => found = Some((task.0, node)),
                Search::OutOfBudget => unknown = true,
                _ => {}
            }
        }
    }
    match found {
        Some((_, node)) => LevelOutcome::pass(node.dag, node.rf, states),
        None if unknown => LevelOutcome::unknown(states),
        None => LevelOutcome::fail(states),
    }
}
