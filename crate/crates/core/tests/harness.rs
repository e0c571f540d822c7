use crossword::harness::linearize::{check, history_to_jsonl, parse_history, DEFAULT_BUDGET};
use crossword::harness::scenario::FaultSpec;
use crossword::harness::{explore::explore, run, Metrics, Scenario, Verdict};
use crossword::protocol::Mode;

fn small(mode: Mode) -> Scenario {
    let mut s = Scenario::new(5, mode);
    s.duration_ms = 1_500.0;
    s.workload.clients = 3;
    s.workload.put_ratio = 0.5;
    s.workload.key_count = 4;
    s.workload.value_mean_bytes = 2_048;
    s
}

#[test]
fn scenario_file_round_trips() {
    let mut s = small(Mode::Crossword);
    s.faults = vec![
        FaultSpec::Crash { at_ms: 500.0, node: 0 },
        FaultSpec::Restart { at_ms: 900.0, node: 0 },
    ];
    let text = s.to_toml();
    assert_eq!(Scenario::parse(&text).unwrap(), s);
}

#[test]
fn same_seed_same_run() {
    let s = small(Mode::Crossword);
    let (a, b) = (run(&s), run(&s));
    assert_eq!(a.events, b.events);
    assert_eq!(history_to_jsonl(&a.history), history_to_jsonl(&b.history));
}

#[test]
fn metrics_cover_the_run() {
    let out = run(&small(Mode::Crossword));
    let m = Metrics::from_run(&out);
    assert!(m.summary.completed > 0);
    assert!(!m.summary.diverged);
    assert!(!m.instances.is_empty());
    assert!(!m.seconds.is_empty());
    let text = m.to_jsonl();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("type").is_some(), "untyped row {line}");
    }
    assert!(text.lines().any(|l| l.contains("\"summary\"")));
}

#[test]
fn failover_is_measured() {
    let mut s = small(Mode::Crossword);
    s.duration_ms = 3_000.0;
    s.faults = vec![FaultSpec::Crash { at_ms: 1_000.0, node: 0 }];
    let out = run(&s);
    let m = Metrics::from_run(&out);
    assert_eq!(m.failovers.len(), 1);
    assert!(m.failovers[0].gap_ms.is_some_and(|g| g > 0.0));
    assert!(!m.recoveries.is_empty());
    assert!(out.divergence.is_none());
}

#[test]
fn recorded_history_checks_after_a_round_trip() {
    let out = run(&small(Mode::MultiPaxos));
    let parsed = parse_history(&history_to_jsonl(&out.history)).unwrap();
    assert_eq!(parsed, out.history);
    assert!(matches!(check(&parsed, DEFAULT_BUDGET), Verdict::Linearizable { .. }));
}

#[test]
fn regions_match_for_odd_clusters() {
    for n in [3, 5, 7, 9] {
        let r = explore(n).unwrap();
        assert!(r.mismatches().is_empty(), "n={n}");
        assert_eq!(r.grid().lines().count(), r.m + 3);
    }
}
