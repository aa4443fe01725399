//! Serial levels: a memoized depth-first search for a total order that
//! respects program order, the requested real-time obligations, and register
//! semantics at every step.
//!
//! A search state is the per-client progress vector plus the current value of
//! every key that some remaining operation still reads. Along a total order
//! every reader takes its value from an earlier op, so program order plus the
//! order itself already gives causality; no separate check is needed.

use std::collections::{HashMap, HashSet};

use crate::history::{Nanos, OpId, Outcome, Timeline, Value, INITIAL_VALUE};
use crate::ordering::{OrderingDag, ReadsFrom, Source};

use super::chunk::chunks;
use super::{LevelOutcome, Meter, SearchBudget, Verdict};

/// Which real-time pairs the total order must respect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RealTime {
    Ignore,
    /// Only pairs of two writes.
    WritesOnly,
    All,
}

/// Stands in for the value of a key nobody reads any more.
const DONT_CARE: Value = Value::MIN;

/// Chunks larger than this are searched without the frontier decomposition.
const FRONTIER_CHUNK_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug)]
struct Step {
    client: usize,
    op: OpId,
    applied: bool,
    previous: Value,
}

enum Explore {
    Stopped,
    Exhausted,
    OutOfBudget,
}

struct Engine<'a> {
    timeline: &'a Timeline,
    rt: RealTime,
    /// End of the first writer at or after each queue position.
    next_writer_end: Vec<Vec<Nanos>>,
}

impl<'a> Engine<'a> {
    fn new(timeline: &'a Timeline, rt: RealTime) -> Self {
        let next_writer_end = timeline
            .clients()
            .iter()
            .map(|q| {
                let mut ends = vec![Nanos::MAX; q.ops.len() + 1];
                for (i, &op) in q.ops.iter().enumerate().rev() {
                    let span = timeline.span(op);
                    ends[i] = if span.is_writer() {
                        span.end.unwrap_or(Nanos::MAX)
                    } else {
                        ends[i + 1]
                    };
                }
                ends
            })
            .collect();
        Engine {
            timeline,
            rt,
            next_writer_end,
        }
    }

    fn queue(&self, c: usize) -> &[OpId] {
        &self.timeline.clients()[c].ops
    }

    fn real_time_allows(&self, c: usize, op: OpId, progress: &[usize], to: &[usize]) -> bool {
        let span = self.timeline.span(op);
        match self.rt {
            RealTime::Ignore => true,
            RealTime::All => (0..progress.len()).all(|d| {
                d == c
                    || progress[d] >= to[d]
                    || self
                        .timeline
                        .span(self.queue(d)[progress[d]])
                        .end
                        .is_none_or(|e| e >= span.start)
            }),
            RealTime::WritesOnly => {
                !span.is_writer()
                    || (0..progress.len())
                        .all(|d| d == c || self.next_writer_end[d][progress[d]] >= span.start)
            }
        }
    }

    /// Valid moves from this state, most urgent (earliest acknowledged) first.
    fn moves(
        &self,
        progress: &[usize],
        to: &[usize],
        values: &[Value],
    ) -> Vec<(usize, OpId, bool)> {
        let mut out = Vec::new();
        for c in 0..progress.len() {
            if progress[c] >= to[c] {
                continue;
            }
            let op = self.queue(c)[progress[c]];
            if !self.real_time_allows(c, op, progress, to) {
                continue;
            }
            let span = self.timeline.span(op);
            let readable = span
                .read_constraint()
                .is_none_or(|rc| rc.accepts(values[span.key]));
            if readable {
                out.push((c, op, true));
            }
            if span.outcome == Outcome::Indeterminate {
                out.push((c, op, false));
            }
        }
        out.sort_by_key(|&(c, op, applied)| {
            (self.timeline.span(op).end.unwrap_or(Nanos::MAX), !applied, c)
        });
        out
    }

    /// Depth-first search from `from` to `to`. `on_goal` sees the steps taken
    /// and the final values, and returns whether to stop.
    #[allow(clippy::too_many_arguments)]
    fn explore(
        &self,
        from: &[usize],
        to: &[usize],
        mut values: Vec<Value>,
        meter: &Meter,
        local: &mut u64,
        limit: u64,
        mut on_goal: impl FnMut(&[Step], &[Value]) -> bool,
    ) -> Explore {
        let mut progress = from.to_vec();
        let mut readers_left = vec![0u32; self.timeline.keys().len()];
        for (c, q) in self.timeline.clients().iter().enumerate() {
            for &op in &q.ops[from[c]..] {
                let span = self.timeline.span(op);
                if span.is_reader() {
                    readers_left[span.key] += 1;
                }
            }
        }
        let memo_key = |progress: &[usize], values: &[Value], readers_left: &[u32]| {
            let mut key: Vec<Value> = progress.iter().map(|&p| p as Value).collect();
            key.extend(
                values
                    .iter()
                    .zip(readers_left)
                    .map(|(&v, &r)| if r > 0 { v } else { DONT_CARE }),
            );
            key
        };
        let at_goal = |progress: &[usize]| progress.iter().zip(to).all(|(p, t)| p >= t);

        let mut memo: HashSet<Vec<Value>> = HashSet::new();
        memo.insert(memo_key(&progress, &values, &readers_left));
        if at_goal(&progress) && on_goal(&[], &values) {
            return Explore::Stopped;
        }
        let mut path: Vec<Step> = Vec::new();
        let mut stack = vec![(self.moves(&progress, to, &values), 0usize)];
        loop {
            let Some((moves, next)) = stack.last_mut() else {
                return Explore::Exhausted;
            };
            if *next == moves.len() {
                stack.pop();
                if let Some(step) = path.pop() {
                    self.undo(step, &mut progress, &mut values, &mut readers_left);
                }
                continue;
            }
            let (client, op, applied) = moves[*next];
            *next += 1;
            if !meter.tick(local, limit) {
                return Explore::OutOfBudget;
            }
            let span = self.timeline.span(op);
            let step = Step {
                client,
                op,
                applied,
                previous: values[span.key],
            };
            progress[client] += 1;
            if span.is_reader() {
                readers_left[span.key] -= 1;
            }
            if applied {
                if let Some(v) = span.written_value() {
                    values[span.key] = v;
                }
            }
            path.push(step);
            if !memo.insert(memo_key(&progress, &values, &readers_left)) {
                let step = path.pop().expect("just pushed");
                self.undo(step, &mut progress, &mut values, &mut readers_left);
                continue;
            }
            if at_goal(&progress) {
                if on_goal(&path, &values) {
                    return Explore::Stopped;
                }
                let step = path.pop().expect("just pushed");
                self.undo(step, &mut progress, &mut values, &mut readers_left);
                continue;
            }
            stack.push((self.moves(&progress, to, &values), 0));
        }
    }

    fn undo(&self, step: Step, progress: &mut [usize], values: &mut [Value], readers_left: &mut [u32]) {
        let span = self.timeline.span(step.op);
        progress[step.client] -= 1;
        if span.is_reader() {
            readers_left[span.key] += 1;
        }
        values[span.key] = step.previous;
    }
}

/// The chain through `order`, with reads-from replayed along it.
fn witness(timeline: &Timeline, order: &[OpId]) -> (OrderingDag, ReadsFrom) {
    let dag = OrderingDag::chain(timeline.len(), order);
    let mut rf = ReadsFrom::new(timeline.len());
    let mut last: HashMap<usize, OpId> = HashMap::new();
    for &op in order {
        let span = timeline.span(op);
        if span.is_reader() {
            rf.set(op, last.get(&span.key).map_or(Source::Initial, |&w| Source::Op(w)));
        }
        if span.is_writer() {
            last.insert(span.key, op);
        }
    }
    (dag, rf)
}

fn applied_ops(steps: &[Step]) -> Vec<OpId> {
    steps.iter().filter(|s| s.applied).map(|s| s.op).collect()
}

/// Decides whether some total order of the timeline respects program order,
/// the given real-time pairs, and register semantics.
pub fn check_serial_level(
    timeline: &Timeline,
    rt: RealTime,
    budget: &SearchBudget,
    meter: &Meter,
) -> LevelOutcome {
    if rt == RealTime::All {
        return search(timeline, rt, budget.max_states, meter);
    }
    // Real histories are usually close to linearizable, and a serial order
    // that honours every real-time pair is a witness here too. Trying that
    // much narrower search first avoids wandering through orders that
    // diverge from the timeline early on.
    let hint = search(timeline, RealTime::All, budget.max_states / 8, meter);
    if hint.verdict == Verdict::Pass {
        return hint;
    }
    let mut outcome = search(timeline, rt, budget.max_states, meter);
    outcome.states += hint.states;
    outcome
}

fn search(timeline: &Timeline, rt: RealTime, limit: u64, meter: &Meter) -> LevelOutcome {
    let engine = Engine::new(timeline, rt);
    let clients = timeline.clients().len();
    let to: Vec<usize> = timeline.clients().iter().map(|q| q.ops.len()).collect();
    let mut local = 0;
    let mut found = None;
    let result = engine.explore(
        &vec![0; clients],
        &to,
        vec![INITIAL_VALUE; timeline.keys().len()],
        meter,
        &mut local,
        limit,
        |steps, _| {
            found = Some(applied_ops(steps));
            true
        },
    );
    match result {
        Explore::Stopped => {
            let (dag, rf) = witness(timeline, &found.expect("goal recorded"));
            LevelOutcome::pass(dag, rf, local)
        }
        Explore::Exhausted => LevelOutcome::fail(local),
        Explore::OutOfBudget => LevelOutcome::unknown(local),
    }
}

/// Linearizability. When the timeline splits into small chunks of
/// concurrent spans, each chunk is searched exhaustively from every distinct
/// register state left by the previous chunk; otherwise this is the plain
/// search with every real-time pair enforced.
pub(crate) fn check_linearizable(timeline: &Timeline, budget: &SearchBudget, meter: &Meter) -> LevelOutcome {
    let parts = chunks(timeline);
    if parts.iter().any(|c| c.len() > FRONTIER_CHUNK_LIMIT) {
        return check_serial_level(timeline, RealTime::All, budget, meter);
    }
    check_chunked(timeline, &parts, budget, meter)
}

struct FrontierState {
    values: Vec<Value>,
    parent: usize,
    ops: Vec<OpId>,
}

pub(crate) fn check_chunked(
    timeline: &Timeline,
    parts: &[Vec<OpId>],
    budget: &SearchBudget,
    meter: &Meter,
) -> LevelOutcome {
    let engine = Engine::new(timeline, RealTime::All);
    let keys = timeline.keys().len();
    let mut local = 0;
    let mut from = vec![0usize; timeline.clients().len()];
    let mut layers: Vec<Vec<FrontierState>> = vec![vec![FrontierState {
        values: vec![INITIAL_VALUE; keys],
        parent: 0,
        ops: Vec::new(),
    }]];
    for (i, part) in parts.iter().enumerate() {
        let mut to = from.clone();
        for &op in part {
            to[timeline.span(op).client] += 1;
        }
        // Keys still read after this chunk; other values are irrelevant.
        let mut read_later = vec![false; keys];
        for (c, q) in timeline.clients().iter().enumerate() {
            for &op in &q.ops[to[c]..] {
                let span = timeline.span(op);
                if span.is_reader() {
                    read_later[span.key] = true;
                }
            }
        }
        let mut next: Vec<FrontierState> = Vec::new();
        let mut seen: HashMap<Vec<Value>, usize> = HashMap::new();
        for (parent, state) in layers[i].iter().enumerate() {
            let result = engine.explore(
                &from,
                &to,
                state.values.clone(),
                meter,
                &mut local,
                budget.max_states,
                |steps, values| {
                    let normalized: Vec<Value> = values
                        .iter()
                        .zip(&read_later)
                        .map(|(&v, &r)| if r { v } else { DONT_CARE })
                        .collect();
                    if !seen.contains_key(&normalized) {
                        seen.insert(normalized.clone(), next.len());
                        next.push(FrontierState {
                            values: normalized,
                            parent,
                            ops: applied_ops(steps),
                        });
                    }
                    false
                },
            );
            if let Explore::OutOfBudget = result {
                return LevelOutcome::unknown(local);
            }
        }
        if next.is_empty() {
            let mut outcome = LevelOutcome::fail(local);
            outcome.chunks = i as u64 + 1;
            return outcome;
        }
        layers.push(next);
        from = to;
    }
    // Walk the backpointers from any final state.
    let mut order = Vec::new();
    let mut index = 0;
    for layer in layers.iter().skip(1).rev() {
        let state = &layer[index];
        order.push(state.ops.clone());
        index = state.parent;
    }
    order.reverse();
    let order: Vec<OpId> = order.into_iter().flatten().collect();
    let (dag, rf) = witness(timeline, &order);
    let mut outcome = LevelOutcome::pass(dag, rf, local);
    outcome.chunks = parts.len() as u64;
    outcome
}

/// Per-key sequential: each key's projection must be sequential on its own.
/// The witness is the union of the per-key chains.
pub(crate) fn check_per_key(timeline: &Timeline, budget: &SearchBudget, meter: &Meter) -> LevelOutcome {
    let mut states = 0;
    let mut edges = Vec::new();
    let mut nodes = Vec::new();
    let mut reads = Vec::new();
    for key in 0..timeline.keys().len() {
        let (projected, origin) = timeline.project_key(key);
        let outcome = check_serial_level(&projected, RealTime::Ignore, budget, meter);
        states += outcome.states;
        match outcome.verdict {
            super::Verdict::Pass => {
                let (dag, rf) = outcome.witness.expect("pass carries a witness");
                nodes.extend(dag.nodes().map(|op| origin[op.index()]));
                edges.extend(
                    dag.hasse_edges()
                        .into_iter()
                        .map(|(a, b)| (origin[a.index()], origin[b.index()])),
                );
                reads.extend(rf.iter().map(|(r, s)| {
                    let s = match s {
                        Source::Op(w) => Source::Op(origin[w.index()]),
                        Source::Initial => Source::Initial,
                    };
                    (origin[r.index()], s)
                }));
            }
            super::Verdict::Fail => return LevelOutcome::fail(states),
            super::Verdict::Unknown => return LevelOutcome::unknown(states),
        }
    }
    let dag = OrderingDag::from_edges(timeline.len(), nodes, edges)
        .expect("disjoint per-key chains are acyclic");
    let mut rf = ReadsFrom::new(timeline.len());
    for (r, s) in reads {
        rf.set(r, s);
    }
    LevelOutcome::pass(dag, rf, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{HistoryBuilder, OpKind};
    use crate::levels::ConsistencyLevel;
    use crate::scenarios;
    use crate::search::{satisfies, Verdict};

    fn run(timeline: &Timeline, rt: RealTime) -> LevelOutcome {
        let budget = SearchBudget::default();
        check_serial_level(timeline, rt, &budget, &Meter::new(&budget))
    }

    #[test]
    fn three_clients_with_real_time() {
        let t = scenarios::three_clients(2, 3);
        let outcome = run(&t, RealTime::All);
        assert_eq!(outcome.verdict, Verdict::Pass);
        let (dag, rf) = outcome.witness.unwrap();
        assert!(satisfies(ConsistencyLevel::Linearizability, &dag, &t, &rf));
        let stale = scenarios::three_clients(1, 3);
        assert_eq!(run(&stale, RealTime::All).verdict, Verdict::Fail);
    }

    #[test]
    fn non_local_history_is_not_sequential() {
        let t = scenarios::non_local(2, 1);
        assert_eq!(run(&t, RealTime::Ignore).verdict, Verdict::Fail);
        let budget = SearchBudget::default();
        let per_key = check_per_key(&t, &budget, &Meter::new(&budget));
        assert_eq!(per_key.verdict, Verdict::Pass);
        let (dag, rf) = per_key.witness.unwrap();
        assert!(satisfies(ConsistencyLevel::PerKeySequential, &dag, &t, &rf));
    }

    #[test]
    fn empty_timeline_passes() {
        assert_eq!(run(&Timeline::default(), RealTime::All).verdict, Verdict::Pass);
    }

    #[test]
    fn read_travels_back_only_under_write_real_time() {
        let t = scenarios::read_travels_back();
        assert_eq!(run(&t, RealTime::All).verdict, Verdict::Fail);
        assert_eq!(run(&t, RealTime::WritesOnly).verdict, Verdict::Pass);
    }

    #[test]
    fn indeterminate_write_may_or_may_not_apply() {
        let seen = HistoryBuilder::new()
            .timed_out("c", "x", OpKind::Write(5), 0, 10)
            .read("d", "x", 5, 100, 110)
            .timeline()
            .unwrap();
        assert_eq!(run(&seen, RealTime::All).verdict, Verdict::Pass);
        let unseen = HistoryBuilder::new()
            .timed_out("c", "x", OpKind::Write(5), 0, 10)
            .read("d", "x", 0, 100, 110)
            .read("d", "x", 5, 120, 130)
            .timeline()
            .unwrap();
        assert_eq!(run(&unseen, RealTime::All).verdict, Verdict::Pass);
        let flip = HistoryBuilder::new()
            .timed_out("c", "x", OpKind::Write(5), 0, 10)
            .read("d", "x", 5, 100, 110)
            .read("d", "x", 0, 120, 130)
            .timeline()
            .unwrap();
        assert_eq!(run(&flip, RealTime::Ignore).verdict, Verdict::Fail);
    }

    #[test]
    fn compare_and_swap_semantics() {
        let t = HistoryBuilder::new()
            .cas("c", "x", 0, 1, true, 0, 10)
            .cas("d", "x", 0, 2, false, 20, 30)
            .read("d", "x", 1, 40, 50)
            .timeline()
            .unwrap();
        assert_eq!(run(&t, RealTime::All).verdict, Verdict::Pass);
        let both = HistoryBuilder::new()
            .cas("c", "x", 0, 1, true, 0, 10)
            .cas("d", "x", 0, 2, true, 20, 30)
            .timeline()
            .unwrap();
        assert_eq!(run(&both, RealTime::Ignore).verdict, Verdict::Fail);
    }

    #[test]
    fn chunked_and_plain_agree_on_scenarios() {
        let budget = SearchBudget::default();
        for t in [
            scenarios::three_clients(2, 3),
            scenarios::three_clients(1, 3),
            scenarios::stale_after_own_write(1),
            scenarios::stale_after_own_write(2),
            scenarios::read_travels_back(),
            scenarios::own_write_reorder(),
        ] {
            let meter = Meter::new(&budget);
            let chunked = check_chunked(&t, &chunks(&t), &budget, &meter);
            let plain = check_serial_level(&t, RealTime::All, &budget, &meter);
            assert_eq!(chunked.verdict, plain.verdict);
            if let Some((dag, rf)) = chunked.witness {
                assert!(satisfies(ConsistencyLevel::Linearizability, &dag, &t, &rf));
            }
        }
    }

    #[test]
    fn budget_exhaustion_is_unknown() {
        let t = scenarios::non_local(2, 1);
        let budget = SearchBudget {
            max_states: 2,
            ..SearchBudget::default()
        };
        let outcome = check_serial_level(&t, RealTime::Ignore, &budget, &Meter::new(&budget));
        assert_eq!(outcome.verdict, Verdict::Unknown);
    }
}
