use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crossword"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SHORT: &str = r#"
n = 5
duration_ms = 1500
[workload]
clients = 3
put_ratio = 0.5
key_count = 4
value_mean_bytes = 4096
"#;

#[test]
fn run_writes_metrics_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("s.toml");
    std::fs::write(&scen, SHORT).unwrap();
    let (metrics, history) = (dir.path().join("m.jsonl"), dir.path().join("h.jsonl"));
    let o = bin()
        .arg("run")
        .arg(&scen)
        .args(["--seed", "9", "--out"])
        .arg(&metrics)
        .arg("--history")
        .arg(&history)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("seed=9"));
    assert!(stdout(&o).contains("linearizable"));
    let m = std::fs::read_to_string(&metrics).unwrap();
    assert!(m.lines().any(|l| l.contains(r#""type":"summary""#)), "{m}");

    let o = bin().arg("linearize").arg(&history).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn stale_read_exits_two_with_witness() {
    let o = bin().arg("linearize").arg(scenarios().join("stale_read.jsonl")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert!(out.contains("VIOLATION"));
    assert_eq!(out.lines().filter(|l| l.starts_with('{')).count(), 3, "{out}");
}

#[test]
fn tiny_budget_is_inconclusive() {
    let o = bin()
        .arg("linearize")
        .arg(scenarios().join("stale_read.jsonl"))
        .args(["--budget", "1"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn explore_prints_each_grid() {
    let o = bin().args(["explore", "--n", "3,5,7,9"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for n in [3, 5, 7, 9] {
        assert!(out.contains(&format!("n = {n} ")), "{out}");
    }
    assert!(out.contains("candidates: (3,3) (4,2) (5,1)"));
    assert!(!out.contains("MISMATCH"));
}

#[test]
fn bad_input_exits_one() {
    let o = bin().args(["explore", "--n", "4"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().args(["run", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("bad.toml");
    std::fs::write(&scen, "n = 5\nnodes = 3\n").unwrap();
    let o = bin().arg("run").arg(&scen).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nodes"));
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn staleness_sweep_rises_with_the_gap() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("s.toml");
    std::fs::write(
        &scen,
        "n = 5\nduration_ms = 2000\n[workload]\nclients = 2\nkey_count = 1\nvalue_mean_bytes = 65536\ninterval_ms = 10\n",
    )
    .unwrap();
    let o = bin().arg("staleness").arg(&scen).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("multipaxos") && out.contains("gap=4000000"), "{out}");
}

#[test]
fn shipped_scenarios_parse() {
    for e in std::fs::read_dir(scenarios()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let text = std::fs::read_to_string(&p).unwrap();
            crossword::harness::Scenario::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        }
    }
}
