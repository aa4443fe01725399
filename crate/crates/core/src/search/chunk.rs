//! Splitting the remaining timeline into bulks of mutually concurrent spans.

use crate::history::{Nanos, OpId, Timeline};

/// Takes the next connected component of the interval-overlap graph over
/// the spans not yet consumed by `cursor` (per-client positions).
///
/// Spans are swept in start order; a span joins the chunk while it starts no
/// later than the latest end seen so far. Unacknowledged spans never end, so
/// they absorb everything after them. Every span of a later chunk starts
/// strictly after every span of this chunk ends, so under real-time
/// constraints no operation can be ordered across a chunk boundary.
pub fn drain_concurrent_chunk(timeline: &Timeline, cursor: &[usize]) -> (Vec<OpId>, Vec<usize>) {
    let mut next = cursor.to_vec();
    let mut chunk = Vec::new();
    let mut horizon: Option<Nanos> = None;
    loop {
        let earliest = timeline
            .clients()
            .iter()
            .enumerate()
            .filter_map(|(c, q)| q.ops.get(next[c]).map(|&op| (timeline.span(op).start, c, op)))
            .min();
        let Some((start, c, op)) = earliest else { break };
        match horizon {
            Some(h) if start > h => break,
            _ => {}
        }
        let end = timeline.span(op).end.unwrap_or(Nanos::MAX);
        horizon = Some(horizon.map_or(end, |h| h.max(end)));
        chunk.push(op);
        next[c] += 1;
    }
    (chunk, next)
}

/// All chunks of the timeline, in order.
pub(crate) fn chunks(timeline: &Timeline) -> Vec<Vec<OpId>> {
    let mut cursor = vec![0; timeline.clients().len()];
    let mut out = Vec::new();
    loop {
        let (chunk, next) = drain_concurrent_chunk(timeline, &cursor);
        if chunk.is_empty() {
            return out;
        }
        out.push(chunk);
        cursor = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{HistoryBuilder, OpKind};
    use crate::scenarios;

    #[test]
    fn sequential_history_gives_singletons() {
        let t = HistoryBuilder::new()
            .write("c", "x", 1, 0, 10)
            .read("d", "x", 1, 20, 30)
            .write("c", "x", 2, 40, 50)
            .timeline()
            .unwrap();
        let sizes: Vec<usize> = chunks(&t).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 1, 1]);
    }

    #[test]
    fn concurrent_history_is_one_chunk() {
        let t = HistoryBuilder::new()
            .write("c", "x", 1, 0, 100)
            .write("d", "x", 2, 0, 100)
            .read("e", "x", 1, 0, 100)
            .timeline()
            .unwrap();
        let (chunk, cursor) = drain_concurrent_chunk(&t, &[0, 0, 0]);
        assert_eq!(chunk.len(), 3);
        assert_eq!(cursor, vec![1, 1, 1]);
    }

    #[test]
    fn overlap_is_transitive() {
        // c's second write overlaps e's write, which overlaps c's first.
        let t = scenarios::three_clients(2, 3);
        let (first, _) = drain_concurrent_chunk(&t, &vec![0; t.clients().len()]);
        let kinds: Vec<(String, OpKind)> = first
            .iter()
            .map(|&op| (t.client_name(op).to_string(), t.span(op).kind))
            .collect();
        assert_eq!(
            kinds,
            vec![
                ("c".to_string(), OpKind::Write(1)),
                ("e".to_string(), OpKind::Write(3)),
                ("c".to_string(), OpKind::Write(2)),
            ]
        );
        assert_eq!(chunks(&t).len(), 4);
    }

    #[test]
    fn unacknowledged_span_absorbs_the_rest() {
        let t = HistoryBuilder::new()
            .pending("c", "x", OpKind::Write(1), 0)
            .write("d", "x", 2, 10, 20)
            .read("d", "x", 2, 30, 40)
            .timeline()
            .unwrap();
        assert_eq!(chunks(&t).len(), 1);
    }

    #[test]
    fn touching_spans_share_a_chunk() {
        let t = HistoryBuilder::new()
            .write("c", "x", 1, 0, 10)
            .write("d", "x", 2, 10, 20)
            .timeline()
            .unwrap();
        assert_eq!(chunks(&t).len(), 1);
    }
}
