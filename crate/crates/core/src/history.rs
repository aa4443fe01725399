//! Operation histories and the per-client physical timeline derived from them.
//!
//! A history file is line-delimited JSON, one event per line:
//!
//! ```text
//! {"index":0,"client":"c","phase":"invoke","f":"write","key":"x","value":1,"time":0}
//! {"index":1,"client":"c","phase":"ok","f":"write","key":"x","value":1,"time":10}
//! ```
//!
//! Each invocation is paired with its completion into an [`OperationSpan`].
//! Spans are grouped into per-client queues, which together form a
//! [`Timeline`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Register values. Every object starts out holding [`INITIAL_VALUE`].
pub type Value = i64;

/// Nanoseconds since the start of a run.
pub type Nanos = i64;

/// The value every object holds before it is first written.
pub const INITIAL_VALUE: Value = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Read,
    Write(Value),
    Cas { expected: Value, new: Value },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Write(_) => "write",
            OpKind::Cas { .. } => "cas",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Invoke,
    Ok,
    Fail,
    Info,
}

/// One line of a history file: the invocation or completion of an operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryEvent {
    pub index: u64,
    pub client: String,
    pub phase: Phase,
    pub kind: OpKind,
    pub key: String,
    /// Observed value, only meaningful on the `ok` completion of a read.
    pub value: Option<Value>,
    pub time: Nanos,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate event index {index}")]
    DuplicateIndex { line: usize, index: u64 },
    #[error("line {line}: event index {index} does not increase")]
    IndexRegression { line: usize, index: u64 },
    #[error("line {line}: time {time} is earlier than the previous event")]
    TimeRegression { line: usize, time: Nanos },
    #[error("event {index}: client {client:?} invoked an operation while another is in flight")]
    ClosedLoopViolation { client: String, index: u64 },
    #[error("event {index}: completion for client {client:?} has no matching invocation")]
    UnmatchedCompletion { client: String, index: u64 },
    #[error("event {index}: completion does not match the invoked operation")]
    CompletionMismatch { index: u64 },
    #[error("event {index}: successful read carries no observed value")]
    MissingReadValue { index: u64 },
    #[error("event {index}: operation completes at or before its invocation time")]
    EmptySpan { index: u64 },
}

// ---------------------------------------------------------------------------
// Wire format

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(untagged)]
enum WireValue {
    Int(Value),
    Pair([Value; 2]),
    Null,
}

impl Default for WireValue {
    fn default() -> Self {
        WireValue::Null
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct WireEvent {
    index: u64,
    client: String,
    phase: Phase,
    f: String,
    key: String,
    #[serde(default)]
    value: WireValue,
    time: Nanos,
}

impl HistoryEvent {
    fn to_wire(&self) -> WireEvent {
        let value = match self.kind {
            OpKind::Read => match self.value {
                Some(v) => WireValue::Int(v),
                None => WireValue::Null,
            },
            OpKind::Write(v) => WireValue::Int(v),
            OpKind::Cas { expected, new } => WireValue::Pair([expected, new]),
        };
        WireEvent {
            index: self.index,
            client: self.client.clone(),
            phase: self.phase,
            f: self.kind.name().to_string(),
            key: self.key.clone(),
            value,
            time: self.time,
        }
    }

    fn from_wire(wire: WireEvent, line: usize) -> Result<Self, HistoryError> {
        let syntax = |message: String| HistoryError::Syntax { line, message };
        let (kind, value) = match (wire.f.as_str(), &wire.value) {
            ("read", WireValue::Int(v)) => (OpKind::Read, Some(*v)),
            ("read", WireValue::Null) => (OpKind::Read, None),
            ("read", WireValue::Pair(_)) => return Err(syntax("read value must be an integer".into())),
            ("write", WireValue::Int(v)) => (OpKind::Write(*v), None),
            ("write", _) => return Err(syntax("write value must be an integer".into())),
            ("cas", WireValue::Pair([expected, new])) => (
                OpKind::Cas {
                    expected: *expected,
                    new: *new,
                },
                None,
            ),
            ("cas", _) => return Err(syntax("cas value must be [expected, new]".into())),
            (other, _) => return Err(syntax(format!("unknown operation {other:?}"))),
        };
        if value.is_some() && wire.phase != Phase::Ok {
            return Err(syntax("only a successful read may carry an observed value".into()));
        }
        Ok(HistoryEvent {
            index: wire.index,
            client: wire.client,
            phase: wire.phase,
            kind,
            key: wire.key,
            value,
            time: wire.time,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("history events always serialize")
    }
}

/// Parses a line-delimited history. Blank lines are ignored.
pub fn parse_history(text: &str) -> Result<Vec<HistoryEvent>, HistoryError> {
    let mut events = Vec::new();
    let mut seen = HashSet::new();
    let mut last: Option<(u64, Nanos)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let wire: WireEvent = serde_json::from_str(raw).map_err(|e| HistoryError::Syntax {
            line,
            message: e.to_string(),
        })?;
        let event = HistoryEvent::from_wire(wire, line)?;
        if !seen.insert(event.index) {
            return Err(HistoryError::DuplicateIndex {
                line,
                index: event.index,
            });
        }
        if let Some((prev_index, prev_time)) = last {
            if event.index < prev_index {
                return Err(HistoryError::IndexRegression {
                    line,
                    index: event.index,
                });
            }
            if event.time < prev_time {
                return Err(HistoryError::TimeRegression {
                    line,
                    time: event.time,
                });
            }
        }
        last = Some((event.index, event.time));
        events.push(event);
    }
    Ok(events)
}

/// Serializes events in the history file format, one line per event.
pub fn write_history(events: &[HistoryEvent]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&event.to_json_line());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Timeline

/// Dense identifier of a span within one [`Timeline`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OpId(pub u32);

impl OpId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for OpId {
    fn from(i: usize) -> Self {
        OpId(i as u32)
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Ok,
    CasFailed,
    /// Never acknowledged; the operation may or may not have taken effect.
    Indeterminate,
}

/// What a read-bearing operation tells us about the value it saw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadConstraint {
    Exact(Value),
    /// A failed compare-and-swap saw something other than its expected value.
    NotEqual(Value),
}

impl ReadConstraint {
    pub fn accepts(self, value: Value) -> bool {
        match self {
            ReadConstraint::Exact(v) => v == value,
            ReadConstraint::NotEqual(v) => v != value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperationSpan {
    pub op_id: OpId,
    /// Index into [`Timeline::clients`].
    pub client: usize,
    /// Position within the client's queue.
    pub seq: usize,
    pub kind: OpKind,
    /// Index into [`Timeline::keys`].
    pub key: usize,
    pub start: Nanos,
    pub end: Option<Nanos>,
    pub outcome: Outcome,
    pub observed: Option<Value>,
}

impl OperationSpan {
    /// True for operations that may install a new value.
    pub fn is_writer(&self) -> bool {
        match self.kind {
            OpKind::Read => false,
            OpKind::Write(_) => true,
            OpKind::Cas { .. } => self.outcome != Outcome::CasFailed,
        }
    }

    /// True for operations whose result depends on the value they observe.
    pub fn is_reader(&self) -> bool {
        matches!(self.kind, OpKind::Read | OpKind::Cas { .. })
    }

    pub fn is_pure_read(&self) -> bool {
        self.is_reader() && !self.is_writer()
    }

    pub fn is_indeterminate(&self) -> bool {
        self.outcome == Outcome::Indeterminate
    }

    pub fn written_value(&self) -> Option<Value> {
        if !self.is_writer() {
            return None;
        }
        match self.kind {
            OpKind::Write(v) => Some(v),
            OpKind::Cas { new, .. } => Some(new),
            OpKind::Read => None,
        }
    }

    /// The constraint on the observed value. An indeterminate CAS is only
    /// ever considered on the branch where it took effect, and there it
    /// succeeded.
    pub fn read_constraint(&self) -> Option<ReadConstraint> {
        match (self.kind, self.outcome) {
            (OpKind::Read, _) => self.observed.map(ReadConstraint::Exact),
            (OpKind::Cas { expected, .. }, Outcome::CasFailed) => {
                Some(ReadConstraint::NotEqual(expected))
            }
            (OpKind::Cas { expected, .. }, _) => Some(ReadConstraint::Exact(expected)),
            (OpKind::Write(_), _) => None,
        }
    }

    /// Strictly ends before `other` begins in physical time.
    pub fn precedes(&self, other: &OperationSpan) -> bool {
        matches!(self.end, Some(end) if end < other.start)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientQueue {
    pub name: String,
    pub ops: Vec<OpId>,
}

/// Per-client queues of spans over a shared pool of named objects.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Timeline {
    spans: Vec<OperationSpan>,
    clients: Vec<ClientQueue>,
    keys: Vec<String>,
}

impl Timeline {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn spans(&self) -> &[OperationSpan] {
        &self.spans
    }

    pub fn span(&self, op: OpId) -> &OperationSpan {
        &self.spans[op.index()]
    }

    pub fn clients(&self) -> &[ClientQueue] {
        &self.clients
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn key_name(&self, op: OpId) -> &str {
        &self.keys[self.span(op).key]
    }

    pub fn client_name(&self, op: OpId) -> &str {
        &self.clients[self.span(op).client].name
    }

    pub fn key_index(&self, key: &str) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    pub fn op_ids(&self) -> impl Iterator<Item = OpId> + '_ {
        (0..self.spans.len()).map(OpId::from)
    }

    /// Ops of the same client that precede `op` in issue order.
    pub fn earlier_in_session(&self, op: OpId) -> &[OpId] {
        let span = self.span(op);
        &self.clients[span.client].ops[..span.seq]
    }

    /// Keeps only the spans on `key`. Returns the projected timeline and, for
    /// each projected op id, the id it had in `self`.
    pub fn project_key(&self, key: usize) -> (Timeline, Vec<OpId>) {
        let mut origin = Vec::new();
        let mut spans = Vec::new();
        let mut clients: Vec<ClientQueue> = Vec::new();
        let mut client_map = HashMap::new();
        for queue in &self.clients {
            for &op in &queue.ops {
                let span = self.span(op);
                if span.key != key {
                    continue;
                }
                let client = *client_map.entry(span.client).or_insert_with(|| {
                    clients.push(ClientQueue {
                        name: queue.name.clone(),
                        ops: Vec::new(),
                    });
                    clients.len() - 1
                });
                let id = OpId::from(spans.len());
                let seq = clients[client].ops.len();
                clients[client].ops.push(id);
                spans.push(OperationSpan {
                    op_id: id,
                    client,
                    seq,
                    key: 0,
                    ..span.clone()
                });
                origin.push(op);
            }
        }
        let timeline = Timeline {
            spans,
            clients,
            keys: vec![self.keys[key].clone()],
        };
        (timeline, origin)
    }
}

/// Pairs invocations with completions and groups the resulting spans by
/// client.
///
/// Failed reads and writes never happened and are dropped, as are reads
/// whose result was never delivered. After an indeterminate operation the
/// client's later operations go to a fresh session named `<client>~<n>`, so
/// an indeterminate span is always the last one in its queue.
pub fn build_timeline(events: &[HistoryEvent]) -> Result<Timeline, HistoryError> {
    struct Pending<'a> {
        invoke: &'a HistoryEvent,
    }
    struct Proto {
        session: String,
        kind: OpKind,
        key: String,
        start: Nanos,
        end: Option<Nanos>,
        outcome: Outcome,
        observed: Option<Value>,
        order: u64,
    }

    let mut pending: HashMap<&str, Pending> = HashMap::new();
    let mut generation: HashMap<&str, usize> = HashMap::new();
    let mut protos: Vec<Proto> = Vec::new();

    let session_name = |client: &str, generation: &HashMap<&str, usize>| match generation
        .get(client)
        .copied()
        .unwrap_or(0)
    {
        0 => client.to_string(),
        n => format!("{client}~{n}"),
    };

    for event in events {
        let client = event.client.as_str();
        match event.phase {
            Phase::Invoke => {
                if pending.contains_key(client) {
                    return Err(HistoryError::ClosedLoopViolation {
                        client: event.client.clone(),
                        index: event.index,
                    });
                }
                pending.insert(client, Pending { invoke: event });
            }
            phase => {
                let Some(Pending { invoke }) = pending.remove(client) else {
                    return Err(HistoryError::UnmatchedCompletion {
                        client: event.client.clone(),
                        index: event.index,
                    });
                };
                if invoke.kind != event.kind || invoke.key != event.key {
                    return Err(HistoryError::CompletionMismatch { index: event.index });
                }
                if event.time <= invoke.time && phase != Phase::Info {
                    return Err(HistoryError::EmptySpan { index: event.index });
                }
                let session = session_name(client, &generation);
                let completed = |outcome, observed| Proto {
                    session: session.clone(),
                    kind: invoke.kind,
                    key: invoke.key.clone(),
                    start: invoke.time,
                    end: Some(event.time),
                    outcome,
                    observed,
                    order: invoke.index,
                };
                match (invoke.kind, phase) {
                    (OpKind::Read, Phase::Ok) => {
                        let observed = event
                            .value
                            .ok_or(HistoryError::MissingReadValue { index: event.index })?;
                        protos.push(completed(Outcome::Ok, Some(observed)));
                    }
                    (OpKind::Read, _) => {}
                    (OpKind::Write(_), Phase::Ok) => protos.push(completed(Outcome::Ok, None)),
                    (OpKind::Write(_), Phase::Fail) => {}
                    (OpKind::Cas { expected, .. }, Phase::Ok) => {
                        protos.push(completed(Outcome::Ok, Some(expected)))
                    }
                    (OpKind::Cas { .. }, Phase::Fail) => {
                        protos.push(completed(Outcome::CasFailed, None))
                    }
                    (_, Phase::Info) => {
                        protos.push(Proto {
                            end: None,
                            outcome: Outcome::Indeterminate,
                            ..completed(Outcome::Indeterminate, None)
                        });
                        *generation.entry(client).or_insert(0) += 1;
                    }
                    (_, Phase::Invoke) => unreachable!(),
                }
            }
        }
    }

    // Invocations that never completed.
    let mut dangling: Vec<&HistoryEvent> = pending.into_values().map(|p| p.invoke).collect();
    dangling.sort_by_key(|e| e.index);
    for invoke in dangling {
        if invoke.kind == OpKind::Read {
            continue;
        }
        protos.push(Proto {
            session: session_name(&invoke.client, &generation),
            kind: invoke.kind,
            key: invoke.key.clone(),
            start: invoke.time,
            end: None,
            outcome: Outcome::Indeterminate,
            observed: None,
            order: invoke.index,
        });
    }

    protos.sort_by_key(|p| p.order);
    let mut timeline = Timeline::default();
    let mut client_ix: HashMap<String, usize> = HashMap::new();
    let mut key_ix: HashMap<String, usize> = HashMap::new();
    for proto in protos {
        let client = *client_ix.entry(proto.session.clone()).or_insert_with(|| {
            timeline.clients.push(ClientQueue {
                name: proto.session.clone(),
                ops: Vec::new(),
            });
            timeline.clients.len() - 1
        });
        let key = *key_ix.entry(proto.key.clone()).or_insert_with(|| {
            timeline.keys.push(proto.key.clone());
            timeline.keys.len() - 1
        });
        let op_id = OpId::from(timeline.spans.len());
        let seq = timeline.clients[client].ops.len();
        timeline.clients[client].ops.push(op_id);
        timeline.spans.push(OperationSpan {
            op_id,
            client,
            seq,
            kind: proto.kind,
            key,
            start: proto.start,
            end: proto.end,
            outcome: proto.outcome,
            observed: proto.observed,
        });
    }
    Ok(timeline)
}

/// Values a read of `key` could legitimately return: the initial value plus
/// everything any operation (acknowledged or indeterminate) wrote to it.
pub fn written_values(timeline: &Timeline, key: &str) -> BTreeSet<Value> {
    let mut values = BTreeSet::from([INITIAL_VALUE]);
    if let Some(k) = timeline.key_index(key) {
        values.extend(
            timeline
                .spans()
                .iter()
                .filter(|s| s.key == k)
                .filter_map(|s| s.written_value()),
        );
    }
    values
}

/// A definite read whose exact observed value was never written to its key.
pub fn first_corrupted_read(timeline: &Timeline) -> Option<OpId> {
    let mut per_key: Vec<Option<BTreeSet<Value>>> = vec![None; timeline.keys().len()];
    timeline.spans().iter().find_map(|span| {
        // An indeterminate CAS may simply not have happened.
        if span.is_indeterminate() {
            return None;
        }
        let Some(ReadConstraint::Exact(v)) = span.read_constraint() else {
            return None;
        };
        let allowed = per_key[span.key]
            .get_or_insert_with(|| written_values(timeline, &timeline.keys()[span.key]));
        (!allowed.contains(&v)).then_some(span.op_id)
    })
}

// ---------------------------------------------------------------------------
// Building histories programmatically

#[derive(Clone, Debug)]
struct PlannedOp {
    client: String,
    key: String,
    kind: OpKind,
    start: Nanos,
    completion: Option<(Phase, Nanos)>,
    observed: Option<Value>,
}

/// Assembles a well-formed event sequence from whole operations.
///
/// ```
/// use sop_core::history::HistoryBuilder;
/// let timeline = HistoryBuilder::new()
///     .write("c", "x", 1, 0, 10)
///     .read("d", "x", 1, 20, 30)
///     .timeline()
///     .unwrap();
/// assert_eq!(timeline.len(), 2);
/// ```
#[derive(Clone, Debug, Default)]
pub struct HistoryBuilder {
    ops: Vec<PlannedOp>,
}

impl HistoryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(
        mut self,
        client: &str,
        key: &str,
        kind: OpKind,
        start: Nanos,
        completion: Option<(Phase, Nanos)>,
        observed: Option<Value>,
    ) -> Self {
        self.ops.push(PlannedOp {
            client: client.to_string(),
            key: key.to_string(),
            kind,
            start,
            completion,
            observed,
        });
        self
    }

    pub fn write(self, client: &str, key: &str, value: Value, start: Nanos, end: Nanos) -> Self {
        self.push(client, key, OpKind::Write(value), start, Some((Phase::Ok, end)), None)
    }

    pub fn read(self, client: &str, key: &str, observed: Value, start: Nanos, end: Nanos) -> Self {
        self.push(client, key, OpKind::Read, start, Some((Phase::Ok, end)), Some(observed))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn cas(
        self,
        client: &str,
        key: &str,
        expected: Value,
        new: Value,
        succeeded: bool,
        start: Nanos,
        end: Nanos,
    ) -> Self {
        let phase = if succeeded { Phase::Ok } else { Phase::Fail };
        self.push(client, key, OpKind::Cas { expected, new }, start, Some((phase, end)), None)
    }

    /// An operation that was invoked but never acknowledged.
    pub fn pending(self, client: &str, key: &str, kind: OpKind, start: Nanos) -> Self {
        self.push(client, key, kind, start, None, None)
    }

    /// An operation whose completion reported an indeterminate result.
    pub fn timed_out(self, client: &str, key: &str, kind: OpKind, start: Nanos, at: Nanos) -> Self {
        self.push(client, key, kind, start, Some((Phase::Info, at)), None)
    }

    pub fn events(&self) -> Vec<HistoryEvent> {
        // (time, completions before invocations, insertion order)
        let mut staged: Vec<(Nanos, u8, usize, HistoryEvent)> = Vec::new();
        for (n, op) in self.ops.iter().enumerate() {
            staged.push((
                op.start,
                1,
                n,
                HistoryEvent {
                    index: 0,
                    client: op.client.clone(),
                    phase: Phase::Invoke,
                    kind: op.kind,
                    key: op.key.clone(),
                    value: None,
                    time: op.start,
                },
            ));
            if let Some((phase, time)) = op.completion {
                staged.push((
                    time,
                    0,
                    n,
                    HistoryEvent {
                        index: 0,
                        client: op.client.clone(),
                        phase,
                        kind: op.kind,
                        key: op.key.clone(),
                        value: if phase == Phase::Ok { op.observed } else { None },
                        time,
                    },
                ));
            }
        }
        staged.sort_by_key(|(time, rank, n, _)| (*time, *rank, *n));
        staged
            .into_iter()
            .enumerate()
            .map(|(i, (.., mut event))| {
                event.index = i as u64;
                event
            })
            .collect()
    }

    pub fn timeline(&self) -> Result<Timeline, HistoryError> {
        build_timeline(&self.events())
    }
}
