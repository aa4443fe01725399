//! The optimized searches against the brute-force enumerator.

use sop_core::generate::{random_history, FuzzParams};
use sop_core::history::build_timeline;
use sop_core::levels::{ConsistencyLevel, DEFAULT_STALENESS};
use sop_core::search::{check, oracle_check, SearchBudget, Verdict};

fn disagreements(seeds: std::ops::Range<u64>, params: &FuzzParams) -> Vec<String> {
    let levels = ConsistencyLevel::all(DEFAULT_STALENESS);
    let budget = SearchBudget::default();
    let mut out = Vec::new();
    for seed in seeds {
        let t = build_timeline(&random_history(params, seed)).unwrap();
        let truth = oracle_check(&t, &levels, 6).unwrap();
        for (level, expected) in truth {
            let got = check(&t, &[level], &budget).verdict(level).unwrap();
            if got != expected {
                out.push(format!("seed {seed}: {level} checker {got}, oracle {expected}"));
            }
        }
    }
    out
}

#[test]
fn agrees_on_plain_histories() {
    let params = FuzzParams {
        cas_fraction: 0.0,
        indeterminate_fraction: 0.0,
        ..FuzzParams::default()
    };
    let bad = disagreements(0..300, &params);
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn agrees_with_cas_and_indeterminate_ops() {
    let bad = disagreements(10000..10300, &FuzzParams::default());
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn agrees_with_three_clients() {
    let params = FuzzParams {
        clients: 3,
        ..FuzzParams::default()
    };
    let bad = disagreements(20000..20200, &params);
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn every_verdict_is_definite() {
    let levels = ConsistencyLevel::all(DEFAULT_STALENESS);
    for seed in 0..100 {
        let t = build_timeline(&random_history(&FuzzParams::default(), seed)).unwrap();
        let report = check(&t, &levels, &SearchBudget::default());
        assert!(report.results.iter().all(|r| r.verdict != Verdict::Unknown));
    }
}

#[test]
fn checker_reproduces_frozen_scenario_verdicts() {
    use sop_core::scenarios::*;
    let levels = ConsistencyLevel::all(DEFAULT_STALENESS);
    let cases = [
        (stale_after_own_write(1), "FFPPPPPPPPP"),
        (stale_after_own_write(2), "PPPPPPPPPPP"),
        (non_local(2, 1), "FFFPPPPPPPP"),
        (photo_album(0), "FFFFFFFFPPP"),
        (photo_album(1), "PPPPPPPPPPP"),
        (own_write_reorder(), "FFFFFFFFFPP"),
        (read_travels_back(), "FPPPPPPPPPP"),
        (three_clients(2, 3), "PPPPPPPPPPP"),
        (three_clients(1, 0), "FPPPPPPPPPP"),
    ];
    for (i, (t, expected)) in cases.iter().enumerate() {
        let got: String = levels
            .iter()
            .map(|&l| match check(t, &[l], &SearchBudget::default()).verdict(l) {
                Some(Verdict::Pass) => 'P',
                Some(Verdict::Fail) => 'F',
                _ => '?',
            })
            .collect();
        assert_eq!(&got, expected, "case {i}");
    }
}
