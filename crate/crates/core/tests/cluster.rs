use crossword::harness::linearize::{check, DEFAULT_BUDGET};
use crossword::harness::{run, Metrics, Scenario, Verdict};
use crossword::protocol::Mode;

fn base(mode: Mode) -> Scenario {
    let mut s = Scenario::new(5, mode);
    s.duration_ms = 2_000.0;
    s.drain_ms = 1_000.0;
    s.workload.clients = 4;
    s.workload.put_ratio = 0.5;
    s.workload.key_count = 8;
    s.workload.value_mean_bytes = 4096;
    s
}

#[test]
fn every_mode_commits_and_agrees() {
    for mode in [Mode::Crossword, Mode::MultiPaxos, Mode::RsPaxos] {
        let out = run(&base(mode));
        let m = Metrics::from_run(&out);
        eprintln!("{mode:?}: {:?}", m.summary);
        assert!(m.summary.completed > 100, "{mode:?} {:?}", m.summary);
        assert!(out.divergence.is_none(), "{:?}", out.divergence);
        let top = out.replicas.iter().map(|r| r.exec_bar).max().unwrap();
        assert!(top > 0);
        assert!(matches!(check(&out.history, DEFAULT_BUDGET), Verdict::Linearizable { .. }));
    }
}

#[test]
fn chaos_runs_stay_safe() {
    use crossword::harness::chaos;
    for seed in 0..60u64 {
        for (n, mode) in [(5, Mode::Crossword), (3, Mode::MultiPaxos), (5, Mode::RsPaxos), (7, Mode::Crossword)] {
            let s = chaos::scenario(seed, n, mode);
            let out = run(&s);
            assert!(out.divergence.is_none(), "seed {seed} {mode:?}: {:?}\n{}", out.divergence, s.to_toml());
            let v = check(&out.history, DEFAULT_BUDGET);
            assert!(matches!(v, Verdict::Linearizable { .. }), "seed {seed} {mode:?} n={n}: {v:?}\n{}", s.to_toml());
            let done = out.history.iter().filter(|r| r.respond_us.is_some()).count();
            assert!(done > 0, "seed {seed} {mode:?} made no progress");
        }
    }
}
