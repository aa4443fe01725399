//! Exhaustive ground truth for tiny histories: every take-effect branch,
//! every partial order on the effective ops, every reads-from map.

use std::sync::OnceLock;

use crate::history::{OpId, Timeline};
use crate::levels::ConsistencyLevel;
use crate::ordering::{OrderingDag, ReadsFrom, Source};

use super::{satisfies, SearchError, Verdict};

/// Largest history the enumerator accepts at all; seven ops already means
/// six million partial orders per branch.
pub const ORACLE_HARD_LIMIT: usize = 7;

static POSETS: [OnceLock<Vec<u8>>; ORACLE_HARD_LIMIT + 1] = [const { OnceLock::new() }; ORACLE_HARD_LIMIT + 1];

/// Every labeled partial order on `n` elements, flattened: each poset is `n`
/// bytes, byte `i` being the set of elements strictly above `i`.
///
/// Built incrementally: element `k` joins a poset on `0..k` with a down-set
/// `D` below it and an up-set `U` above it, where everything in `D` is
/// already below everything in `U`. Each labeled poset arises exactly once.
pub fn posets(n: usize) -> &'static [u8] {
    assert!(n <= ORACLE_HARD_LIMIT);
    POSETS[n].get_or_init(|| {
        if n == 0 {
            return Vec::new();
        }
        if n == 1 {
            return vec![0];
        }
        let k = n - 1;
        let smaller = posets(k);
        let mut out = Vec::new();
        for above in smaller.chunks(k) {
            let below = |x: usize, y: usize| above[x] >> y & 1 == 1;
            let subsets = 0u32..(1 << k);
            let members = |s: u32| (0..k).filter(move |&i| s >> i & 1 == 1);
            let downs: Vec<u32> = subsets
                .clone()
                .filter(|&s| members(s).all(|d| (0..k).all(|x| !below(x, d) || s >> x & 1 == 1)))
                .collect();
            let ups: Vec<u32> = subsets
                .filter(|&s| members(s).all(|u| (0..k).all(|y| !below(u, y) || s >> y & 1 == 1)))
                .collect();
            for &d in &downs {
                for &u in &ups {
                    if d & u != 0 || !members(d).all(|x| above[x] as u32 & u == u) {
                        continue;
                    }
                    out.extend(above.iter().enumerate().map(|(i, &m)| {
                        if d >> i & 1 == 1 {
                            m | 1 << k
                        } else {
                            m
                        }
                    }));
                    out.push(u as u8);
                }
            }
        }
        out
    })
}

/// Decides each level by brute force. Weak always passes.
pub fn oracle_check(
    timeline: &Timeline,
    levels: &[ConsistencyLevel],
    max_ops: usize,
) -> Result<Vec<(ConsistencyLevel, Verdict)>, SearchError> {
    let tests: Vec<Box<dyn Fn(&OrderingDag, &ReadsFrom) -> bool>> = levels
        .iter()
        .map(|&level| -> Box<dyn Fn(&OrderingDag, &ReadsFrom) -> bool> {
            Box::new(move |dag, rf| satisfies(level, dag, timeline, rf))
        })
        .collect();
    let tests: Vec<Test> = tests.iter().map(|t| t.as_ref()).collect();
    let weak: Vec<bool> = levels.iter().map(|&l| l == ConsistencyLevel::Weak).collect();
    let found = search(timeline, &tests, weak, max_ops)?;
    Ok(levels
        .iter()
        .zip(found)
        .map(|(&l, p)| (l, if p { Verdict::Pass } else { Verdict::Fail }))
        .collect())
}

/// For each predicate, whether some take-effect branch, partial order and
/// reads-from map satisfies it. Reads-from candidates are limited to the
/// immediate predecessors each read could materialize from, so a predicate
/// is effectively conjoined with non-strict convergence.
pub fn oracle_exists(
    timeline: &Timeline,
    tests: &[Test],
    max_ops: usize,
) -> Result<Vec<bool>, SearchError> {
    search(timeline, tests, vec![false; tests.len()], max_ops)
}

type Test<'a> = &'a dyn Fn(&OrderingDag, &ReadsFrom) -> bool;

fn search(
    timeline: &Timeline,
    tests: &[Test],
    mut passed: Vec<bool>,
    max_ops: usize,
) -> Result<Vec<bool>, SearchError> {
    let limit = max_ops.min(ORACLE_HARD_LIMIT);
    if timeline.len() > limit {
        return Err(SearchError::OracleTooLarge {
            ops: timeline.len(),
            limit,
        });
    }
    let indeterminate: Vec<OpId> = timeline
        .op_ids()
        .filter(|&op| timeline.span(op).is_indeterminate())
        .collect();
    for branch in 0u32..(1 << indeterminate.len()) {
        if passed.iter().all(|&p| p) {
            break;
        }
        let nodes: Vec<OpId> = timeline
            .op_ids()
            .filter(|op| match indeterminate.iter().position(|i| i == op) {
                Some(bit) => branch >> bit & 1 == 1,
                None => true,
            })
            .collect();
        explore_branch(timeline, &nodes, tests, &mut passed);
    }
    Ok(passed)
}

fn explore_branch(
    timeline: &Timeline,
    nodes: &[OpId],
    tests: &[Test],
    passed: &mut [bool],
) {
    let m = nodes.len();
    let spans: Vec<_> = nodes.iter().map(|&op| timeline.span(op)).collect();
    let readers: Vec<usize> = (0..m).filter(|&i| spans[i].is_reader()).collect();
    // Writers on the same key as each position.
    let same_key_writers: Vec<u8> = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| spans[j].is_writer() && spans[j].key == spans[i].key)
                .fold(0u8, |acc, j| acc | 1 << j)
        })
        .collect();

    let orders: Box<dyn Iterator<Item = &[u8]>> = if m == 0 {
        Box::new(std::iter::once(&[][..]))
    } else {
        Box::new(posets(m).chunks(m))
    };
    for above in orders {
        if passed.iter().all(|&p| p) {
            return;
        }
        // Reads-from candidates allowed by materialization, which every level
        // short of Weak requires.
        let mut choices: Vec<Vec<Source>> = Vec::with_capacity(readers.len());
        for &r in &readers {
            let below: u8 = (0..m)
                .filter(|&j| above[j] >> r & 1 == 1)
                .fold(0, |acc, j| acc | 1 << j);
            let writers = below & same_key_writers[r];
            let immediate: Vec<usize> = (0..m)
                .filter(|&w| writers >> w & 1 == 1 && above[w] & writers == 0)
                .collect();
            let constraint = spans[r].read_constraint().expect("reader");
            let options: Vec<Source> = if immediate.is_empty() {
                vec![Source::Initial]
            } else {
                immediate.into_iter().map(|w| Source::Op(nodes[w])).collect()
            }
            .into_iter()
            .filter(|s| constraint.accepts(s.value(timeline)))
            .collect();
            if options.is_empty() {
                break;
            }
            choices.push(options);
        }
        if choices.len() < readers.len() {
            continue;
        }

        let masks: Vec<u64> = above.iter().map(|&b| b as u64).collect();
        let dag = OrderingDag::from_closed_masks(timeline.len(), nodes, &masks);
        let mut pick = vec![0usize; readers.len()];
        loop {
            let mut rf = ReadsFrom::new(timeline.len());
            for (i, &r) in readers.iter().enumerate() {
                rf.set(nodes[r], choices[i][pick[i]]);
            }
            for (test, done) in tests.iter().zip(passed.iter_mut()) {
                if !*done && test(&dag, &rf) {
                    *done = true;
                }
            }
            // Odometer over the candidate lists.
            let mut i = 0;
            while i < pick.len() {
                pick[i] += 1;
                if pick[i] < choices[i].len() {
                    break;
                }
                pick[i] = 0;
                i += 1;
            }
            if i == pick.len() {
                break;
            }
        }
    }
}
