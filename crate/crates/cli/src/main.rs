//! `crossword`: run scenarios, tabulate quorum regions, check histories and
//! measure follower staleness.
//!
//! Exit status is 0 when every checked property holds, 2 when one is
//! violated (the witness goes to stdout), 3 when the linearizability search
//! ran out of budget, and 1 on usage or input errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossword::harness::linearize::{check, history_to_jsonl, parse_history, DEFAULT_BUDGET};
use crossword::harness::staleness::sweep;
use crossword::harness::{explore::explore, run, Metrics, OpRecord, Scenario, Verdict};

const OK: u8 = 0;
const ERROR: u8 = 1;
const VIOLATION: u8 = 2;
const INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(name = "crossword", version, about = "Erasure-coded adaptive MultiPaxos simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario, then check replica agreement and linearizability.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Client history as JSON lines, readable by `linearize`.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Search states per key before giving up.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Print the valid (q, c) region for each cluster size and compare the
    /// closed-form rule against exhaustive enumeration.
    Explore {
        #[arg(long, value_delimiter = ',', default_value = "3,5,7,9")]
        n: Vec<usize>,
    },
    /// Check a JSON-lines history for linearizability.
    Linearize {
        history: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Follower-read staleness for MultiPaxos and three gossip deferral gaps.
    Staleness { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ERROR } else { OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            history,
            budget,
        } => cmd_run(&scenario, seed, out.as_deref(), history.as_deref(), budget),
        Cmd::Explore { n } => cmd_explore(&n),
        Cmd::Linearize { history, budget } => cmd_linearize(&history, budget),
        Cmd::Staleness { scenario } => cmd_staleness(&scenario),
    };
    ExitCode::from(code.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ERROR
    }))
}

type Result<T> = std::result::Result<T, String>;

fn load(path: &Path) -> Result<Scenario> {
    Scenario::load(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Prints a verdict and maps it to an exit status.
fn report(verdict: &Verdict) -> u8 {
    match verdict {
        Verdict::Linearizable { keys, ops } => {
            println!("linearizable: {ops} operations over {keys} keys");
            OK
        }
        Verdict::Violation { key, ops } => {
            println!("VIOLATION: no legal order for key {key:?}; witness ({} operations):", ops.len());
            print!("{}", history_to_jsonl(ops));
            VIOLATION
        }
        Verdict::Inconclusive { key } => {
            println!("inconclusive: search budget exhausted on key {key:?}");
            INCONCLUSIVE
        }
    }
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<&Path>, history: Option<&Path>, budget: u64) -> Result<u8> {
    let mut s = load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let res = run(&s);
    let metrics = Metrics::from_run(&res);
    if let Some(p) = out {
        write(p, &metrics.to_jsonl())?;
    }
    if let Some(p) = history {
        write(p, &history_to_jsonl(&res.history))?;
    }
    let sum = &metrics.summary;
    println!(
        "{:?} n={} seed={}: {} ops completed, {} in flight, {:.1} ops/s",
        s.protocol, s.n, s.seed, sum.completed, sum.incomplete, sum.throughput_ops_per_s
    );
    if let (Some(mean), Some(p95)) = (sum.mean_latency_ms, sum.p95_latency_ms) {
        println!("latency mean {mean:.3} ms, p95 {p95:.3} ms");
    }
    for f in &metrics.failovers {
        match f.gap_ms {
            Some(g) => println!("leader crash at {:.0} ms: no commits for {g:.1} ms", f.crash_ms),
            None => println!("leader crash at {:.0} ms: no later commit", f.crash_ms),
        }
    }
    if let Some(d) = &res.divergence {
        println!("DIVERGENCE at slot {}:", d.slot);
        for (node, digest) in &d.digests {
            println!("  replica {node}: {digest:016x}");
        }
        return Ok(VIOLATION);
    }
    println!("replicas agree");
    Ok(report(&check(&res.history, budget)))
}

fn cmd_explore(sizes: &[usize]) -> Result<u8> {
    let mut code = OK;
    for &n in sizes {
        let r = explore(n).map_err(|e| format!("n={n}: {e}"))?;
        print!("{}", r.grid());
        let cands: Vec<String> = r
            .points
            .iter()
            .filter(|p| p.candidate)
            .map(|p| format!("({},{})", p.q, p.c))
            .collect();
        println!("candidates: {}", cands.join(" "));
        let bad = r.mismatches();
        if bad.is_empty() {
            println!("closed form matches enumeration\n");
        } else {
            code = VIOLATION;
            for p in bad {
                println!("MISMATCH at q={} c={}: rule {} but enumeration {}", p.q, p.c, p.valid_rule, p.valid_oracle);
            }
            println!();
        }
    }
    Ok(code)
}

fn cmd_linearize(path: &Path, budget: u64) -> Result<u8> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let h: Vec<OpRecord> = parse_history(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(report(&check(&h, budget)))
}

fn cmd_staleness(path: &Path) -> Result<u8> {
    let s = load(path)?;
    let rows = sweep(&s);
    println!("{:<24} {:>8} {:>10} {:>6} {:>10}", "run", "samples", "mean", "max", "writes/s");
    for r in &rows {
        println!(
            "{:<24} {:>8} {:>10.3} {:>6} {:>10.1}",
            r.label, r.samples, r.mean_versions, r.max_versions, r.write_rate
        );
    }
    for w in rows[1..].windows(2) {
        if w[1].mean_versions < w[0].mean_versions {
            println!("VIOLATION: staleness fell from {} to {}", w[0].label, w[1].label);
            return Ok(VIOLATION);
        }
    }
    Ok(OK)
}
