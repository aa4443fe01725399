//! Seeded histories: simulated clusters that conform to a target level by
//! construction, arbitrary fuzz histories, and targeted violations.
//!
//! Everything here is a single-threaded discrete-event simulation driven by
//! one ChaCha stream, so the same parameters always produce the same file.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::history::{
    build_timeline, HistoryBuilder, HistoryEvent, Nanos, OpKind, Phase, Value, INITIAL_VALUE,
};
use crate::levels::ConsistencyLevel;
use crate::search::{check, SearchBudget};

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub level: ConsistencyLevel,
    pub clients: usize,
    pub keys: usize,
    pub ops: usize,
    pub read_fraction: f64,
    pub cas_fraction: f64,
    pub seed: u64,
    pub mean_replication_delay: Nanos,
    /// Largest constant offset added to one client's recorded timestamps.
    pub clock_skew: Nanos,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            level: ConsistencyLevel::Linearizability,
            clients: 3,
            keys: 2,
            ops: 20,
            read_fraction: 0.5,
            cas_fraction: 0.1,
            seed: 0,
            mean_replication_delay: 500,
            clock_skew: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no generator for level {0}; choose linearizable, sequential, causal+, pram or eventual")]
    UnsupportedLevel(String),
    #[error("history has no place to inject a {0} violation")]
    TooSmall(Violation),
}

/// Levels with a dedicated simulator.
pub const GENERATED_LEVELS: [ConsistencyLevel; 5] = [
    ConsistencyLevel::Linearizability,
    ConsistencyLevel::Sequential,
    ConsistencyLevel::CausalPlus,
    ConsistencyLevel::Pram,
    ConsistencyLevel::Eventual,
];

const MEAN_THINK: f64 = 40.0;
const MEAN_LATENCY: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Action {
    Read,
    Write,
    Cas,
}

/// One planned client operation; the outcome is filled in by a simulator.
#[derive(Clone, Debug)]
struct Planned {
    client: usize,
    key: usize,
    action: Action,
    start: Nanos,
    end: Nanos,
}

struct Recorder {
    builder: HistoryBuilder,
    next_value: Value,
    written: Vec<Vec<Value>>,
    skew: Vec<Nanos>,
}

impl Recorder {
    fn new(keys: usize, skew: Vec<Nanos>) -> Self {
        Recorder {
            builder: HistoryBuilder::new(),
            next_value: 1,
            written: vec![vec![INITIAL_VALUE]; keys],
            skew,
        }
    }

    fn fresh(&mut self, key: usize) -> Value {
        let v = self.next_value;
        self.next_value += 1;
        self.written[key].push(v);
        v
    }

    /// An expected value for a CAS: something once written to the key, the
    /// current value half the time.
    fn expected(&self, rng: &mut ChaCha8Rng, key: usize, current: Value) -> Value {
        if rng.random_bool(0.5) {
            current
        } else {
            let seen = &self.written[key];
            seen[rng.random_range(0..seen.len())]
        }
    }

    fn times(&self, op: &Planned) -> (Nanos, Nanos) {
        (op.start + self.skew[op.client], op.end + self.skew[op.client])
    }

    fn read(&mut self, op: &Planned, value: Value) {
        let (s, e) = self.times(op);
        let b = std::mem::take(&mut self.builder);
        self.builder = b.read(&client_name(op.client), &key_name(op.key), value, s, e);
    }

    fn write(&mut self, op: &Planned, value: Value) {
        let (s, e) = self.times(op);
        let b = std::mem::take(&mut self.builder);
        self.builder = b.write(&client_name(op.client), &key_name(op.key), value, s, e);
    }

    fn cas(&mut self, op: &Planned, expected: Value, new: Value, succeeded: bool) {
        let (s, e) = self.times(op);
        let b = std::mem::take(&mut self.builder);
        self.builder = b.cas(
            &client_name(op.client),
            &key_name(op.key),
            expected,
            new,
            succeeded,
            s,
            e,
        );
    }
}

fn client_name(c: usize) -> String {
    format!("c{c}")
}

fn key_name(k: usize) -> String {
    format!("k{k}")
}

fn validate(p: &GenParams) -> Result<(), GenError> {
    let bad = |m: &str| Err(GenError::InvalidParams(m.to_string()));
    if p.clients == 0 || p.keys == 0 {
        return bad("clients and keys must be positive");
    }
    if !(0.0..=1.0).contains(&p.read_fraction) || !(0.0..=1.0).contains(&p.cas_fraction) {
        return bad("fractions must lie in 0..1");
    }
    if p.read_fraction + p.cas_fraction > 1.0 {
        return bad("read and cas fractions must sum to at most 1");
    }
    if p.mean_replication_delay <= 0 || p.clock_skew < 0 {
        return bad("replication delay must be positive and clock skew non-negative");
    }
    Ok(())
}

/// Closed-loop client schedules: each client waits a random think time
/// after each acknowledgement, and the next operation overall goes to the
/// client that is ready first.
fn plan(p: &GenParams, rng: &mut ChaCha8Rng) -> Vec<Planned> {
    let think = Exp::new(1.0 / MEAN_THINK).expect("positive rate");
    let latency = Exp::new(1.0 / MEAN_LATENCY).expect("positive rate");
    let mut ready: Vec<Nanos> = (0..p.clients)
        .map(|_| think.sample(rng) as Nanos)
        .collect();
    let mut out = Vec::with_capacity(p.ops);
    for _ in 0..p.ops {
        let (client, &start) = ready
            .iter()
            .enumerate()
            .min_by_key(|&(c, &t)| (t, c))
            .expect("at least one client");
        let end = start + 1 + latency.sample(rng) as Nanos;
        let roll: f64 = rng.random();
        let action = if roll < p.read_fraction {
            Action::Read
        } else if roll < p.read_fraction + p.cas_fraction {
            Action::Cas
        } else {
            Action::Write
        };
        out.push(Planned {
            client,
            key: rng.random_range(0..p.keys),
            action,
            start,
            end,
        });
        ready[client] = end + think.sample(rng) as Nanos;
    }
    out
}

/// Simulates a cluster that conforms to `params.level`.
pub fn generate(params: &GenParams) -> Result<Vec<HistoryEvent>, GenError> {
    validate(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let ops = plan(params, &mut rng);
    let skew: Vec<Nanos> = (0..params.clients)
        .map(|_| match params.level {
            // Real-time order is part of the contract; skew would break it.
            ConsistencyLevel::Linearizability => 0,
            _ => rng.random_range(0..=params.clock_skew),
        })
        .collect();
    let mut rec = Recorder::new(params.keys, skew);
    match params.level {
        ConsistencyLevel::Linearizability => linearizable(params, &ops, &mut rng, &mut rec),
        ConsistencyLevel::Sequential => sequential(params, &ops, &mut rng, &mut rec),
        ConsistencyLevel::CausalPlus => replicated(params, &ops, &mut rng, &mut rec, Delivery::Causal),
        ConsistencyLevel::Pram => replicated(params, &ops, &mut rng, &mut rec, Delivery::Fifo),
        ConsistencyLevel::Eventual => replicated(params, &ops, &mut rng, &mut rec, Delivery::Any),
        other => return Err(GenError::UnsupportedLevel(other.name().to_string())),
    }
    Ok(rec.builder.events())
}

/// One atomic map; each operation takes effect at a random instant inside
/// its span.
fn linearizable(p: &GenParams, ops: &[Planned], rng: &mut ChaCha8Rng, rec: &mut Recorder) {
    let mut points: Vec<(f64, usize)> = ops
        .iter()
        .enumerate()
        .map(|(i, op)| {
            let u: f64 = rng.random();
            (op.start as f64 + u * (op.end - op.start) as f64, i)
        })
        .collect();
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut state = vec![INITIAL_VALUE; p.keys];
    for (_, i) in points {
        let op = &ops[i];
        apply_atomic(op, &mut state, rng, rec);
    }
}

fn apply_atomic(op: &Planned, state: &mut [Value], rng: &mut ChaCha8Rng, rec: &mut Recorder) {
    match op.action {
        Action::Read => rec.read(op, state[op.key]),
        Action::Write => {
            let v = rec.fresh(op.key);
            state[op.key] = v;
            rec.write(op, v);
        }
        Action::Cas => {
            let expected = rec.expected(rng, op.key, state[op.key]);
            let ok = state[op.key] == expected;
            let new = if ok {
                let v = rec.fresh(op.key);
                state[op.key] = v;
                v
            } else {
                rec.next_value
            };
            rec.cas(op, expected, new, ok);
        }
    }
}

/// A single global log. Updates append at the tail; a read observes some
/// prefix no older than the last one its own session touched.
fn sequential(p: &GenParams, ops: &[Planned], rng: &mut ChaCha8Rng, rec: &mut Recorder) {
    // Snapshot of the map after each log entry; entry 0 is the initial state.
    let mut log: Vec<Vec<Value>> = vec![vec![INITIAL_VALUE; p.keys]];
    let mut frontier = vec![0usize; p.clients];
    let mut order: Vec<&Planned> = ops.iter().collect();
    order.sort_by_key(|op| (op.start, op.client));
    for op in order {
        match op.action {
            Action::Read => {
                let at = rng.random_range(frontier[op.client]..log.len());
                frontier[op.client] = at;
                rec.read(op, log[at][op.key]);
            }
            Action::Write | Action::Cas => {
                let mut state = log.last().expect("initial entry").clone();
                let before = state[op.key];
                apply_atomic(op, &mut state, rng, rec);
                if state[op.key] != before {
                    log.push(state);
                }
                frontier[op.client] = log.len() - 1;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Delivery {
    /// Vector-clock causal delivery.
    Causal,
    /// Each sender's updates arrive in the order they were issued.
    Fifo,
    /// Updates arrive whenever their delay elapses.
    Any,
}

#[derive(Clone, Debug)]
struct Update {
    sender: usize,
    key: usize,
    value: Value,
    /// Last-writer-wins stamp: (logical time, sender).
    stamp: (u64, usize),
    /// Sender's vector clock including this update.
    clock: Vec<u64>,
}

struct Replica {
    state: Vec<(Value, (u64, usize))>,
    clock: Vec<u64>,
    lamport: u64,
    pending: Vec<Update>,
}

impl Replica {
    /// Applies an update, keeping the larger stamp unless the update order
    /// itself is the arbiter.
    fn apply(&mut self, u: &Update, last_writer_wins: bool) {
        let slot = &mut self.state[u.key];
        if !last_writer_wins || u.stamp > slot.1 {
            *slot = (u.value, u.stamp);
        }
        self.clock[u.sender] = self.clock[u.sender].max(u.clock[u.sender]);
        self.lamport = self.lamport.max(u.stamp.0);
    }

    fn deliverable(&self, u: &Update) -> bool {
        u.clock.iter().enumerate().all(|(s, &t)| {
            if s == u.sender {
                t == self.clock[s] + 1
            } else {
                t <= self.clock[s]
            }
        })
    }
}

/// Per-client replicas exchanging updates with random delays. Reads and
/// compare-and-sets act on the client's own replica.
fn replicated(
    p: &GenParams,
    ops: &[Planned],
    rng: &mut ChaCha8Rng,
    rec: &mut Recorder,
    delivery: Delivery,
) {
    let delay = Exp::new(1.0 / p.mean_replication_delay as f64).expect("positive rate");
    let n = p.clients;
    let mut replicas: Vec<Replica> = (0..n)
        .map(|_| Replica {
            state: vec![(INITIAL_VALUE, (0, 0)); p.keys],
            clock: vec![0; n],
            lamport: 0,
            pending: Vec::new(),
        })
        .collect();
    // FIFO channels never deliver before the previous update on the link.
    let mut link_free = vec![vec![0 as Nanos; n]; n];
    // (arrival, sequence number, receiver, update)
    let mut inflight: BinaryHeap<Reverse<(Nanos, u64, usize)>> = BinaryHeap::new();
    let mut payloads: BTreeMap<u64, Update> = BTreeMap::new();
    let mut seq = 0u64;
    // Under FIFO delivery the local copy is overwritten in arrival order.
    let lww = delivery != Delivery::Fifo;

    let mut order: Vec<&Planned> = ops.iter().collect();
    order.sort_by_key(|op| (op.start, op.client));
    for op in order {
        while let Some(&Reverse((at, id, to))) = inflight.peek() {
            if at > op.start {
                break;
            }
            inflight.pop();
            let u = payloads.remove(&id).expect("payload for message");
            let r = &mut replicas[to];
            match delivery {
                Delivery::Causal => {
                    r.pending.push(u);
                    while let Some(i) = r.pending.iter().position(|u| r.deliverable(u)) {
                        let u = r.pending.remove(i);
                        r.apply(&u, lww);
                    }
                }
                Delivery::Fifo | Delivery::Any => r.apply(&u, lww),
            }
        }

        let c = op.client;
        let current = replicas[c].state[op.key].0;
        let write = match op.action {
            Action::Read => {
                rec.read(op, current);
                None
            }
            Action::Write => {
                let v = rec.fresh(op.key);
                rec.write(op, v);
                Some(v)
            }
            Action::Cas => {
                let expected = rec.expected(rng, op.key, current);
                if current == expected {
                    let v = rec.fresh(op.key);
                    rec.cas(op, expected, v, true);
                    Some(v)
                } else {
                    let next = rec.next_value;
                    rec.cas(op, expected, next, false);
                    None
                }
            }
        };
        let Some(value) = write else { continue };
        let r = &mut replicas[c];
        r.lamport += 1;
        r.clock[c] += 1;
        let update = Update {
            sender: c,
            key: op.key,
            value,
            stamp: (r.lamport, c),
            clock: r.clock.clone(),
        };
        r.state[op.key] = (value, update.stamp);
        for to in (0..n).filter(|&to| to != c) {
            let mut at = op.start + 1 + delay.sample(rng) as Nanos;
            if delivery == Delivery::Fifo {
                at = at.max(link_free[c][to]);
                link_free[c][to] = at;
            }
            payloads.insert(seq, update.clone());
            inflight.push(Reverse((at, seq, to)));
            seq += 1;
        }
    }
}

/// Shape of arbitrary (not necessarily conforming) histories.
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzParams {
    pub clients: usize,
    pub keys: usize,
    pub max_ops: usize,
    /// Written and observed values are drawn from `0..=max_value`.
    pub max_value: Value,
    pub cas_fraction: f64,
    /// Chance that an operation ends without a definite outcome.
    pub indeterminate_fraction: f64,
}

impl Default for FuzzParams {
    fn default() -> Self {
        FuzzParams {
            clients: 2,
            keys: 2,
            max_ops: 6,
            max_value: 2,
            cas_fraction: 0.15,
            indeterminate_fraction: 0.05,
        }
    }
}

/// A random history with small overlapping spans and values from a tiny
/// domain, so that most interesting anomalies show up within a few ops.
pub fn random_history(params: &FuzzParams, seed: u64) -> Vec<HistoryEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = rng.random_range(1..=params.max_ops.max(1));
    let mut ready = vec![0 as Nanos; params.clients.max(1)];
    let mut done = vec![false; ready.len()];
    let mut b = HistoryBuilder::new();
    for _ in 0..ops {
        let open: Vec<usize> = (0..ready.len()).filter(|&c| !done[c]).collect();
        if open.is_empty() {
            break;
        }
        let c = open[rng.random_range(0..open.len())];
        let start = ready[c] + 10 * rng.random_range(0..3);
        let end = start + 10 * rng.random_range(1..4);
        ready[c] = end;
        let client = client_name(c);
        let key = key_name(rng.random_range(0..params.keys.max(1)));
        let value = |rng: &mut ChaCha8Rng| rng.random_range(0..=params.max_value);
        let kind = match rng.random::<f64>() {
            x if x < params.cas_fraction => OpKind::Cas {
                expected: value(&mut rng),
                new: value(&mut rng),
            },
            x if x < params.cas_fraction + (1.0 - params.cas_fraction) / 2.0 => OpKind::Read,
            _ => OpKind::Write(value(&mut rng)),
        };
        if rng.random_bool(params.indeterminate_fraction) {
            done[c] = true;
            b = if rng.random_bool(0.5) {
                b.pending(&client, &key, kind, start)
            } else {
                b.timed_out(&client, &key, kind, start, end)
            };
            continue;
        }
        b = match kind {
            OpKind::Read => b.read(&client, &key, value(&mut rng), start, end),
            OpKind::Write(v) => b.write(&client, &key, v, start, end),
            OpKind::Cas { expected, new } => {
                b.cas(&client, &key, expected, new, rng.random_bool(0.5), start, end)
            }
        };
    }
    b.events()
}

/// A constraint that `inject_violation` can break.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Violation {
    Rt,
    Casl,
    Wfr,
    Mw,
    Mr,
    Rmw,
    WellFormedness,
}

impl Violation {
    pub const ALL: [Violation; 7] = [
        Violation::Rt,
        Violation::Casl,
        Violation::Wfr,
        Violation::Mw,
        Violation::Mr,
        Violation::Rmw,
        Violation::WellFormedness,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        Violation::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(name))
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Violation::Rt => "RT",
            Violation::Casl => "CASL",
            Violation::Wfr => "WFR",
            Violation::Mw => "MW",
            Violation::Mr => "MR",
            Violation::Rmw => "RMW",
            Violation::WellFormedness => "well-formedness",
        })
    }
}

/// An operation located in an event list.
#[derive(Clone, Debug)]
struct Located {
    client: String,
    key: String,
    kind: OpKind,
    start: Nanos,
    end: Option<Nanos>,
    phase: Option<Phase>,
    /// Position of the completion event.
    completion: Option<usize>,
}

impl Located {
    fn ok_read(&self) -> bool {
        self.kind == OpKind::Read && self.phase == Some(Phase::Ok)
    }

    /// Value this op definitely wrote.
    fn wrote(&self) -> Option<Value> {
        match (self.kind, self.phase) {
            (OpKind::Write(v), Some(Phase::Ok)) => Some(v),
            (OpKind::Cas { new, .. }, Some(Phase::Ok)) => Some(new),
            _ => None,
        }
    }

    fn writes_at_all(&self) -> bool {
        !matches!(self.kind, OpKind::Read) && self.phase != Some(Phase::Fail)
    }
}

fn locate(events: &[HistoryEvent]) -> Vec<Located> {
    let mut ops: Vec<Located> = Vec::new();
    let mut open: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        if e.phase == Phase::Invoke {
            open.insert(&e.client, ops.len());
            ops.push(Located {
                client: e.client.clone(),
                key: e.key.clone(),
                kind: e.kind,
                start: e.time,
                end: None,
                phase: None,
                completion: None,
            });
        } else if let Some(j) = open.remove(e.client.as_str()) {
            ops[j].end = Some(e.time);
            ops[j].phase = Some(e.phase);
            ops[j].completion = Some(i);
        }
    }
    ops
}

/// Perturbs observed read values so that the history breaks `violation`
/// while keeping every weaker guarantee intact where the history allows.
///
/// `CASL` uses the writes-follow-reads pattern, the one causal anomaly that
/// no FIFO guarantee already rules out.
pub fn inject_violation(
    events: &[HistoryEvent],
    violation: Violation,
) -> Result<Vec<HistoryEvent>, GenError> {
    let ops = locate(events);
    let edits = match violation {
        Violation::WellFormedness => corrupt(&ops),
        Violation::Rt => stale_after_completed_write(&ops),
        Violation::Rmw => forget_own_write(&ops),
        Violation::Mr => read_goes_back(&ops),
        Violation::Mw => writes_seen_out_of_order(&ops),
        Violation::Wfr | Violation::Casl => {
            // Prefer a spot where the FIFO guarantees survive the edit.
            let candidates = dependency_missing(&ops);
            let keeps_fifo = |edits: &&Edits| {
                let Ok(t) = build_timeline(&apply(events, &ops, edits)) else {
                    return false;
                };
                let budget = SearchBudget {
                    max_states: 20_000,
                    ..SearchBudget::default()
                };
                check(&t, &[ConsistencyLevel::Pram], &budget).all_pass()
            };
            candidates
                .iter()
                .find(keeps_fifo)
                .or(candidates.first())
                .cloned()
        }
    }
    .ok_or(GenError::TooSmall(violation))?;
    Ok(apply(events, &ops, &edits))
}

fn apply(events: &[HistoryEvent], ops: &[Located], edits: &Edits) -> Vec<HistoryEvent> {
    let mut out = events.to_vec();
    for &(op, value) in edits {
        let at = ops[op].completion.expect("edited reads are complete");
        out[at].value = Some(value);
    }
    out
}

type Edits = Vec<(usize, Value)>;

fn corrupt(ops: &[Located]) -> Option<Edits> {
    let max = ops
        .iter()
        .filter_map(|o| match o.kind {
            OpKind::Write(v) => Some(v),
            OpKind::Cas { expected, new } => Some(expected.max(new)),
            OpKind::Read => None,
        })
        .chain(ops.iter().filter_map(|o| o.ok_read().then_some(0)))
        .max()?;
    let r = ops.iter().position(Located::ok_read)?;
    Some(vec![(r, max.saturating_add(1000))])
}

fn session_before<'a>(ops: &'a [Located], i: usize) -> impl Iterator<Item = (usize, &'a Located)> {
    ops[..i]
        .iter()
        .enumerate()
        .filter(move |(_, o)| o.client == ops[i].client)
}

/// A read returning the value overwritten by a write that finished before
/// the read began.
fn stale_after_completed_write(ops: &[Located]) -> Option<Edits> {
    for (r, read) in ops.iter().enumerate().filter(|(_, o)| o.ok_read()) {
        for newer in ops.iter().filter(|w| w.key == read.key && w.wrote().is_some()) {
            if !newer.end.is_some_and(|e| e < read.start) {
                continue;
            }
            // The value before `newer`: a write finished before it started,
            // or the initial value.
            let older = ops
                .iter()
                .filter(|w| w.key == read.key && w.end.is_some_and(|e| e < newer.start))
                .filter_map(Located::wrote)
                .last()
                .unwrap_or(INITIAL_VALUE);
            if Some(older) != newer.wrote() {
                return Some(vec![(r, older)]);
            }
        }
    }
    None
}

/// A read that misses its own session's earlier write.
fn forget_own_write(ops: &[Located]) -> Option<Edits> {
    ops.iter().enumerate().find_map(|(r, read)| {
        if !read.ok_read() {
            return None;
        }
        let own = session_before(ops, r)
            .filter(|(_, o)| o.key == read.key && o.writes_at_all())
            .last()?;
        (own.1.wrote()? != INITIAL_VALUE).then(|| vec![(r, INITIAL_VALUE)])
    })
}

/// Two reads of one key by a session that never writes it: the first sees
/// another client's write, the second the initial value.
fn read_goes_back(ops: &[Located]) -> Option<Edits> {
    for (r2, second) in ops.iter().enumerate().filter(|(_, o)| o.ok_read()) {
        if session_before(ops, r2).any(|(_, o)| o.key == second.key && o.writes_at_all()) {
            continue;
        }
        let Some((r1, _)) = session_before(ops, r2)
            .filter(|(_, o)| o.ok_read() && o.key == second.key)
            .last()
        else {
            continue;
        };
        let source = ops.iter().find_map(|w| {
            (w.client != second.client && w.key == second.key)
                .then(|| w.wrote())
                .flatten()
                .filter(|&v| v != INITIAL_VALUE)
        });
        if let Some(v) = source {
            let mut edits = vec![(r1, v), (r2, INITIAL_VALUE)];
            // Earlier reads of the key would otherwise already regress.
            for (i, _) in session_before(ops, r1).filter(|(_, o)| o.ok_read() && o.key == second.key) {
                edits.push((i, INITIAL_VALUE));
            }
            return Some(edits);
        }
    }
    None
}

/// A session sees another client's second write but then misses its first.
fn writes_seen_out_of_order(ops: &[Located]) -> Option<Edits> {
    for (w1, first) in ops.iter().enumerate() {
        let Some(_) = first.wrote().filter(|&v| v != INITIAL_VALUE) else {
            continue;
        };
        for (w2, second) in ops.iter().enumerate().skip(w1 + 1) {
            if second.client != first.client || second.key == first.key {
                continue;
            }
            let Some(v2) = second.wrote() else { continue };
            // A reader session without writes that reads the second key and
            // then the first.
            for (r2, late) in ops.iter().enumerate() {
                if !late.ok_read() || late.key != first.key || late.client == first.client {
                    continue;
                }
                if session_before(ops, r2).any(|(_, o)| o.writes_at_all()) {
                    continue;
                }
                let Some((r1, _)) = session_before(ops, r2)
                    .filter(|(_, o)| o.ok_read() && o.key == second.key)
                    .last()
                else {
                    continue;
                };
                let _ = w2;
                let mut edits = vec![(r1, v2), (r2, INITIAL_VALUE)];
                for (i, _) in session_before(ops, r2)
                    .filter(|&(i, o)| i != r1 && o.ok_read() && o.key == first.key)
                {
                    edits.push((i, INITIAL_VALUE));
                }
                return Some(edits);
            }
        }
    }
    None
}

/// A writer that read some value before writing, and a reader session that
/// sees the dependent write but not the value it depended on.
fn dependency_missing(ops: &[Located]) -> Vec<Edits> {
    const MAX_CANDIDATES: usize = 32;
    let mut found = Vec::new();
    for (wd, dependent) in ops.iter().enumerate() {
        let Some(u) = dependent.wrote() else { continue };
        // The writer's last read of another key before writing.
        let Some((rd, cause_read)) = session_before(ops, wd)
            .filter(|(_, o)| o.ok_read() && o.key != dependent.key)
            .last()
        else {
            continue;
        };
        let x = &cause_read.key;
        if session_before(ops, wd).any(|(_, o)| &o.key == x && o.writes_at_all()) {
            continue;
        }
        let Some(v) = ops.iter().find_map(|w| {
            (w.client != dependent.client && &w.key == x)
                .then(|| w.wrote())
                .flatten()
                .filter(|&v| v != INITIAL_VALUE)
        }) else {
            continue;
        };
        let origin = ops
            .iter()
            .find(|w| &w.key == x && w.wrote() == Some(v))
            .map(|w| w.client.clone());
        for (r2, late) in ops.iter().enumerate() {
            if !late.ok_read()
                || &late.key != x
                || late.client == dependent.client
                || Some(&late.client) == origin.as_ref()
            {
                continue;
            }
            if session_before(ops, r2).any(|(_, o)| o.writes_at_all()) {
                continue;
            }
            let Some((r1, _)) = session_before(ops, r2)
                .filter(|(_, o)| o.ok_read() && o.key == dependent.key)
                .last()
            else {
                continue;
            };
            let mut edits = vec![(rd, v), (r1, u), (r2, INITIAL_VALUE)];
            for (i, _) in session_before(ops, r2).filter(|&(i, o)| i != r1 && o.ok_read() && &o.key == x) {
                edits.push((i, INITIAL_VALUE));
            }
            found.push(edits);
            if found.len() == MAX_CANDIDATES {
                return found;
            }
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::write_history;

    #[test]
    fn same_params_same_bytes() {
        for level in GENERATED_LEVELS {
            let p = GenParams {
                level,
                seed: 7,
                ops: 40,
                ..GenParams::default()
            };
            assert_eq!(
                write_history(&generate(&p).unwrap()),
                write_history(&generate(&p).unwrap())
            );
        }
    }

    #[test]
    fn zero_ops_is_empty() {
        let p = GenParams {
            ops: 0,
            ..GenParams::default()
        };
        assert!(generate(&p).unwrap().is_empty());
    }

    #[test]
    fn output_is_well_formed() {
        for level in GENERATED_LEVELS {
            for seed in 0..20 {
                let p = GenParams {
                    level,
                    seed,
                    clock_skew: 50,
                    ..GenParams::default()
                };
                let t = build_timeline(&generate(&p).unwrap()).unwrap();
                assert_eq!(t.len(), p.ops);
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let p = GenParams {
            read_fraction: 0.8,
            cas_fraction: 0.3,
            ..GenParams::default()
        };
        assert!(matches!(generate(&p), Err(GenError::InvalidParams(_))));
        let p = GenParams {
            level: ConsistencyLevel::Causal,
            ..GenParams::default()
        };
        assert_eq!(
            generate(&p),
            Err(GenError::UnsupportedLevel("causal".to_string()))
        );
    }

    #[test]
    fn fuzz_histories_parse() {
        for seed in 0..200 {
            let events = random_history(&FuzzParams::default(), seed);
            let t = build_timeline(&events).unwrap();
            assert!(t.len() <= 6);
        }
    }

    #[test]
    fn too_small_to_inject() {
        let events = HistoryBuilder::new().write("c", "x", 1, 0, 10).events();
        assert_eq!(
            inject_violation(&events, Violation::WellFormedness),
            Err(GenError::TooSmall(Violation::WellFormedness))
        );
    }

    #[test]
    fn violation_names_round_trip() {
        for v in Violation::ALL {
            assert_eq!(Violation::parse(&v.to_string()), Some(v));
        }
    }
}
