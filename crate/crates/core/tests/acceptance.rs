//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that each criterion reports exactly
//! once, with its timing, whatever the verbosity flags.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use sop_core::constraints::{
    check_casl, check_fifo, check_session_guarantees, Convergence, SessionGuarantee,
};
use sop_core::generate::{generate, random_history, FuzzParams, GenParams};
use sop_core::history::{build_timeline, Timeline};
use sop_core::levels::{
    availability_upper_bound, constraints_of, implies, session_availability, ConsistencyLevel,
    DEFAULT_STALENESS,
};
use sop_core::ordering::validate_read_materialization;
use sop_core::scenarios;
use sop_core::search::{check, oracle_check, oracle_exists, SearchBudget, Verdict};

use ConsistencyLevel::*;

const CORPUS_SIZE: u64 = 1000;

type Outcome = Result<String, String>;

fn levels() -> [ConsistencyLevel; 11] {
    ConsistencyLevel::all(DEFAULT_STALENESS)
}

/// Each level decided on its own, without propagation between levels.
fn independent(t: &Timeline, levels: &[ConsistencyLevel]) -> Vec<(ConsistencyLevel, Verdict)> {
    let budget = SearchBudget::default();
    levels
        .iter()
        .map(|&l| (l, check(t, &[l], &budget).verdict(l).expect("requested")))
        .collect()
}

fn verdict(t: &Timeline, level: ConsistencyLevel) -> Verdict {
    independent(t, &[level])[0].1
}

fn corpus() -> &'static [Timeline] {
    static CORPUS: OnceLock<Vec<Timeline>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        (0..CORPUS_SIZE)
            .map(|seed| build_timeline(&random_history(&FuzzParams::default(), seed)).unwrap())
            .collect()
    })
}

struct CorpusVerdicts {
    checker: Vec<Vec<(ConsistencyLevel, Verdict)>>,
    oracle: Vec<Vec<(ConsistencyLevel, Verdict)>>,
}

fn corpus_verdicts() -> &'static CorpusVerdicts {
    static VERDICTS: OnceLock<CorpusVerdicts> = OnceLock::new();
    VERDICTS.get_or_init(|| {
        let pairs: Vec<_> = corpus()
            .par_iter()
            .map(|t| (independent(t, &levels()), oracle_check(t, &levels(), 6).unwrap()))
            .collect();
        let (checker, oracle) = pairs.into_iter().unzip();
        CorpusVerdicts { checker, oracle }
    })
}

fn golden() -> Outcome {
    let cases: Vec<(&str, Timeline, Vec<(ConsistencyLevel, Verdict)>)> = vec![
        (
            "a: fresh read",
            scenarios::stale_after_own_write(2),
            vec![(Linearizability, Verdict::Pass)],
        ),
        (
            "a: stale read",
            scenarios::stale_after_own_write(1),
            vec![(Linearizability, Verdict::Fail), (Sequential, Verdict::Pass)],
        ),
        (
            "b: non-locality",
            scenarios::non_local(2, 1),
            vec![(Sequential, Verdict::Fail), (PerKeySequential, Verdict::Pass)],
        ),
        (
            "c: photo album",
            scenarios::photo_album(0),
            vec![(CausalPlus, Verdict::Fail), (Eventual, Verdict::Pass)],
        ),
        (
            "d: own-write reorder",
            scenarios::own_write_reorder(),
            vec![(Eventual, Verdict::Pass), (Pram, Verdict::Fail)],
        ),
        (
            "e: read travels back",
            scenarios::read_travels_back(),
            vec![(RegularSequential, Verdict::Pass), (Linearizability, Verdict::Fail)],
        ),
        (
            "f: never written",
            scenarios::never_written(),
            levels()
                .into_iter()
                .map(|l| (l, if l == Weak { Verdict::Pass } else { Verdict::Fail }))
                .collect(),
        ),
    ];
    let mut slowest = Duration::ZERO;
    for (name, t, expected) in &cases {
        let started = Instant::now();
        for &(level, want) in expected {
            let got = verdict(t, level);
            if got != want {
                return Err(format!("{name}: {level} expected {want}, got {got}"));
            }
        }
        let took = started.elapsed();
        if took > Duration::from_secs(1) {
            return Err(format!("{name} took {took:?}"));
        }
        slowest = slowest.max(took);
    }
    Ok(format!("{} examples, slowest {slowest:?}", cases.len()))
}

fn oracle_equivalence() -> Outcome {
    let v = corpus_verdicts();
    let mut mismatches = Vec::new();
    for (seed, (got, want)) in v.checker.iter().zip(&v.oracle).enumerate() {
        for ((level, g), (_, w)) in got.iter().zip(want) {
            if g != w {
                mismatches.push(format!("seed {seed} {level}: checker {g}, oracle {w}"));
            }
        }
    }
    if mismatches.is_empty() {
        let passes: usize = v.oracle.iter().flatten().filter(|(_, w)| *w == Verdict::Pass).count();
        Ok(format!(
            "{CORPUS_SIZE} histories x 11 levels agree ({passes} pass, {} fail)",
            CORPUS_SIZE as usize * 11 - passes
        ))
    } else {
        Err(format!("{} mismatches, first: {}", mismatches.len(), mismatches[0]))
    }
}

fn violations(vector: &[(ConsistencyLevel, Verdict)]) -> Vec<String> {
    let mut out = Vec::new();
    for &(a, va) in vector {
        for &(b, vb) in vector {
            if implies(a, b) && va == Verdict::Pass && vb == Verdict::Fail {
                out.push(format!("{a} passes but implied {b} fails"));
            }
        }
    }
    out
}

fn monotonicity() -> Outcome {
    let golden = [
        scenarios::stale_after_own_write(1),
        scenarios::stale_after_own_write(2),
        scenarios::non_local(2, 1),
        scenarios::photo_album(0),
        scenarios::photo_album(1),
        scenarios::own_write_reorder(),
        scenarios::read_travels_back(),
        scenarios::never_written(),
        scenarios::three_clients(2, 3),
    ];
    let v = corpus_verdicts();
    let mut vectors: Vec<Vec<(ConsistencyLevel, Verdict)>> =
        golden.iter().map(|t| independent(t, &levels())).collect();
    vectors.extend(v.checker.iter().cloned());
    vectors.extend(v.oracle.iter().cloned());
    let bad: Vec<String> = vectors.iter().flat_map(|vec| violations(vec)).collect();
    if bad.is_empty() {
        Ok(format!("{} verdict vectors, 0 violations", vectors.len()))
    } else {
        Err(format!("{} violations, first: {}", bad.len(), bad[0]))
    }
}

fn generated(level: ConsistencyLevel, seed: u64, ops: usize, clients: usize) -> Timeline {
    let params = GenParams {
        level,
        seed,
        ops,
        clients,
        ..GenParams::default()
    };
    build_timeline(&generate(&params).unwrap()).unwrap()
}

fn generator_conformance() -> Outcome {
    let targets = [Linearizability, Sequential, CausalPlus, Pram, Eventual];
    for level in targets {
        for seed in 0..50 {
            let small = generated(level, seed, 6, 2);
            let oracle = oracle_check(&small, &[level], 6).unwrap()[0].1;
            if oracle != Verdict::Pass {
                return Err(format!("{level} seed {seed} (6 ops): oracle says {oracle}"));
            }
            let t = generated(level, seed, 30, 3);
            let got = verdict(&t, level);
            if got != Verdict::Pass {
                return Err(format!("{level} seed {seed} (30 ops): {got}"));
            }
        }
    }

    // Adjacent pairs of the common chain, each separated by the weaker
    // level's own generator.
    let separating = |stronger, weaker, params: GenParams| {
        (0..100).find(|&seed| {
            let p = GenParams { seed, ..params.clone() };
            let t = build_timeline(&generate(&p).unwrap()).unwrap();
            verdict(&t, weaker) == Verdict::Pass && verdict(&t, stronger) == Verdict::Fail
        })
    };
    let pairs = [
        (Linearizability, Sequential, GenParams {
            level: Sequential,
            ..GenParams::default()
        }),
        (Sequential, CausalPlus, GenParams {
            level: CausalPlus,
            ..GenParams::default()
        }),
        (CausalPlus, Eventual, GenParams {
            level: Eventual,
            clients: 4,
            keys: 3,
            ops: 40,
            read_fraction: 0.6,
            mean_replication_delay: 2000,
            ..GenParams::default()
        }),
    ];
    let mut found = Vec::new();
    for (stronger, weaker, params) in pairs {
        match separating(stronger, weaker, params) {
            Some(seed) => found.push(format!("{stronger}>{weaker} at seed {seed}")),
            None => return Err(format!("no seed below 100 separates {stronger} from {weaker}")),
        }
    }
    Ok(format!("5 levels x 50 seeds pass; {}", found.join(", ")))
}

fn serial_performance() -> Outcome {
    let params = GenParams {
        level: Linearizability,
        clients: 10,
        keys: 5,
        ops: 1000,
        seed: 0,
        ..GenParams::default()
    };
    let t = build_timeline(&generate(&params).unwrap()).unwrap();
    let started = Instant::now();
    let got = verdict(&t, Linearizability);
    let took = started.elapsed();
    if got != Verdict::Pass {
        return Err(format!("linearizable history reported {got}"));
    }
    if took > Duration::from_secs(5) {
        return Err(format!("took {took:?}"));
    }
    Ok(format!("10 clients, 1000 ops, linearizable in {took:?}"))
}

fn session_decomposition() -> Outcome {
    // Exhaustive over every (order, reads-from) candidate of the first part
    // of the corpus, existential over all of it.
    const PER_TRIPLE: usize = 200;
    let all = SessionGuarantee::ALL;
    let fifo = SessionGuarantee::FIFO;
    let results: Vec<Result<(), String>> = corpus()
        .par_iter()
        .enumerate()
        .map(|(seed, t)| {
            let npo = |dag: &_, rf: &_| validate_read_materialization(dag, t, rf, Convergence::Npo);
            if seed < PER_TRIPLE {
                let broken = std::cell::Cell::new(None);
                let visit = |dag: &_, rf: &_| {
                    if broken.get().is_none() {
                        if check_fifo(dag, t, rf) != check_session_guarantees(dag, t, rf, &fifo) {
                            broken.set(Some("FIFO differs from RMW+MW+MR"));
                        } else if npo(dag, rf)
                            && check_casl(dag, t, rf)
                            && !check_session_guarantees(dag, t, rf, &all)
                        {
                            broken.set(Some("CASL ordering violates a session guarantee"));
                        }
                    }
                    false
                };
                oracle_exists(t, &[&visit], 6).unwrap();
                if let Some(why) = broken.get() {
                    return Err(format!("seed {seed}: {why}"));
                }
            }
            let casl = |dag: &_, rf: &_| npo(dag, rf) && check_casl(dag, t, rf);
            let sessions = |dag: &_, rf: &_| npo(dag, rf) && check_session_guarantees(dag, t, rf, &all);
            let exists = oracle_exists(t, &[&casl, &sessions], 6).unwrap();
            if exists[0] != exists[1] {
                return Err(format!(
                    "seed {seed}: CASL ordering exists: {}, session-guarantee ordering exists: {}",
                    exists[0], exists[1]
                ));
            }
            Ok(())
        })
        .collect();
    let bad: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if bad.is_empty() {
        Ok(format!(
            "{CORPUS_SIZE} histories equivalent; every candidate ordering checked on {PER_TRIPLE}"
        ))
    } else {
        Err(format!("{} violations, first: {}", bad.len(), bad[0]))
    }
}

fn registry_fidelity() -> Outcome {
    let table1 = [
        ("Linearizability", "SO", "RT"),
        ("Regular Sequential", "SO", "RT-W & CASL-R"),
        ("Sequential", "SO", "CASL"),
        ("Bounded Staleness", "NPO", "Bounded-CASL(k=1)"),
        ("Real-time Causal", "CPO", "RT' & CASL"),
        ("Causal+", "CPO", "CASL"),
        ("Causal", "NPO", "CASL"),
        ("PRAM", "NPO", "FIFO"),
        ("Per-key Sequential", "CPO", "CASL-per-key"),
        ("Eventual", "CPO", "None"),
        ("Weak", "NPO", "None"),
    ];
    let table2 = [
        ("Linearizability", "Weakly available"),
        ("Regular Sequential", "Weakly available"),
        ("Sequential", "Weakly available"),
        ("Bounded Staleness", "Weakly available"),
        ("Real-time Causal", "Sticky available"),
        ("Causal+", "Sticky available"),
        ("Causal", "Sticky available"),
        ("PRAM", "Sticky available"),
        ("Per-key Sequential", "Sticky available"),
        ("Read My Writes", "Sticky available"),
        ("Writes Follow Reads", "Totally available"),
        ("Monotonic Reads", "Totally available"),
        ("Monotonic Writes", "Totally available"),
        ("Eventual", "Totally available"),
        ("Weak", "Totally available"),
    ];
    let by_title = |title: &str| levels().into_iter().find(|l| l.title() == title);
    for (title, conv, rel) in table1 {
        let level = by_title(title).ok_or(format!("no level titled {title}"))?;
        let (c, r) = constraints_of(level);
        if (c.to_string().as_str(), r.to_string().as_str()) != (conv, rel) {
            return Err(format!("{title}: expected {conv} & {rel}, got {c} & {r}"));
        }
    }
    for (title, bound) in table2 {
        let got = match by_title(title) {
            Some(level) => availability_upper_bound(level),
            None => session_availability(
                SessionGuarantee::ALL
                    .into_iter()
                    .find(|g| g.title() == title)
                    .ok_or(format!("no level or guarantee titled {title}"))?,
            ),
        };
        if got.to_string() != bound {
            return Err(format!("{title}: expected {bound}, got {got}"));
        }
    }
    Ok(format!("{} constraint rows, {} availability rows", table1.len(), table2.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("golden examples", golden),
        ("oracle equivalence", oracle_equivalence),
        ("hierarchy monotonicity", monotonicity),
        ("generator conformance", generator_conformance),
        ("serial-search performance", serial_performance),
        ("session-guarantee decomposition", session_decomposition),
        ("registry fidelity", registry_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let took = started.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {took:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}; {took:.2?})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
