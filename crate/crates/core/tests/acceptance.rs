//! Runs every acceptance criterion at its pinned tolerance and prints one
//! PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use crossword::assignment::{ClusterParams, Config};
use crossword::erasure::{encode, reconstruct, CodingScheme, ErasureError};
use crossword::harness::linearize::{check, DEFAULT_BUDGET};
use crossword::harness::scenario::ChooserSpec;
use crossword::harness::staleness::{measure, sweep};
use crossword::harness::{chaos, explore::explore, run, Verdict};
use crossword::protocol::Mode;
use crossword::quorum::oracle_valid;
use crossword::tuner::{choose_config, estimate_completion, ols, LinearModel, DEFAULT_TIE_MARGIN};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(limit: Duration, start: Instant, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("{what} took {took:.1?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

fn region() -> Outcome {
    let t = Instant::now();
    let mut points = 0;
    for n in [3, 5, 7, 9] {
        let r = explore(n).map_err(|e| e.to_string())?;
        let bad = r.mismatches();
        if !bad.is_empty() {
            return Err(format!("n={n}: {} mismatched points, first {:?}", bad.len(), bad[0]));
        }
        let mp = r.points.iter().find(|p| p.multipaxos).ok_or("no MultiPaxos point")?;
        let rs = r.points.iter().find(|p| p.rspaxos).ok_or("no RSPaxos point")?;
        if !mp.valid_oracle {
            return Err(format!("n={n}: MultiPaxos point outside region"));
        }
        if rs.valid_oracle != (n == 3) {
            return Err(format!("n={n}: RSPaxos point validity {}", rs.valid_oracle));
        }
        points += r.points.len();
    }
    within(Duration::from_secs(60), t, "region")?;
    Ok(format!("{points} grid points, 0 mismatches, {:.1?}", t.elapsed()))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn erasure() -> Outcome {
    let t = Instant::now();
    let scheme = CodingScheme::for_cluster(5).map_err(|e| e.to_string())?;
    let d = scheme.data_shards();
    let full = subsets(scheme.n_shards(), d);
    let short = subsets(scheme.n_shards(), d - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let len = log_uniform(&mut rng, 1, 1 << 20);
        let mut payload = vec![0u8; len];
        rng.fill_bytes(&mut payload);
        let cw = encode(&payload, scheme);
        for set in &full {
            let got = reconstruct(&cw.restrict(set.iter().copied()), scheme, len).map_err(|e| e.to_string())?;
            if got != payload {
                return Err(format!("payload {i} ({len} B) differs from subset {set:?}"));
            }
        }
        for set in &short {
            match reconstruct(&cw.restrict(set.iter().copied()), scheme, len) {
                Err(ErasureError::InsufficientShards { .. }) => {}
                other => return Err(format!("payload {i} subset {set:?}: {other:?}")),
            }
        }
    }
    within(Duration::from_secs(60), t, "erasure")?;
    Ok(format!(
        "1000 payloads x {} full and {} short subsets, {:.1?}",
        full.len(),
        short.len(),
        t.elapsed()
    ))
}

fn durability_suite() -> Outcome {
    let mut runs = 0;
    for (q, c) in [(3, 3), (4, 2), (5, 1)] {
        let cfg = Config { q, c };
        for crashed in two_subsets(5) {
            for starve in [false, true] {
                let o = durability(Mode::Crossword, Some(cfg), &crashed, starve, runs);
                if !o.recovered {
                    return Err(format!("({q},{c}) crash {crashed:?} starve={starve}: {o:?}"));
                }
                runs += 1;
            }
        }
    }
    let o = durability(Mode::RsPaxos, None, &[0, 1], true, 99);
    if o.recovered || o.surviving_shards >= p5().m {
        return Err(format!("RSPaxos counterexample unexpectedly survived: {o:?}"));
    }
    Ok(format!(
        "{runs} crash cases recovered byte-exactly; RSPaxos lost the value as expected (acked by {:?}, {} shards survive)",
        o.acked_by, o.surviving_shards
    ))
}

/// Candidates found by brute force: for each `q`, the smallest `c` the
/// exhaustive oracle accepts.
fn brute_candidates(params: &ClusterParams) -> Vec<Config> {
    (1..=params.n)
        .filter_map(|q| (1..=params.m).find(|&c| oracle_valid(params, q, c)).map(|c| Config { q, c }))
        .collect()
}

fn brute_choice(
    payload: usize,
    models: &[LinearModel],
    healthy: usize,
    params: &ClusterParams,
    cands: &[Config],
    margin: f64,
) -> Config {
    let mut scored = Vec::new();
    for cfg in cands.iter().filter(|c| c.q <= 1 + healthy) {
        let need = cfg.q - 1;
        if models.len() < need {
            continue;
        }
        let size = payload as f64 * cfg.c as f64 / params.m as f64;
        let mut times: Vec<f64> = models
            .iter()
            .map(|m| m.intercept_ms + m.slope_ms_per_byte * size)
            .collect();
        times.sort_by(f64::total_cmp);
        scored.push((*cfg, times[need - 1]));
    }
    let Some(best) = scored.iter().map(|s| s.1).reduce(f64::min) else {
        return Config::multipaxos(params);
    };
    scored
        .iter()
        .filter(|s| s.1 <= best * (1.0 + margin))
        .min_by_key(|s| s.0.q)
        .map(|s| s.0)
        .unwrap()
}

fn chooser() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = [3usize, 5, 7, 9];
    let tables: BTreeMap<usize, (ClusterParams, Vec<Config>)> = sizes
        .iter()
        .map(|&n| {
            let p = ClusterParams::new(n).unwrap();
            (n, (p, brute_candidates(&p)))
        })
        .collect();
    for i in 0..10_000 {
        let n = sizes[rng.random_range(0..sizes.len())];
        let (params, cands) = &tables[&n];
        let healthy = rng.random_range(params.m - 1..n);
        let models: Vec<LinearModel> = (1..=healthy)
            .map(|p| LinearModel {
                peer: p,
                intercept_ms: rng.random_range(0.1..100.0),
                slope_ms_per_byte: rng.random_range(1e-7..1e-3),
                fitted_at: 0,
                n_points: 0,
            })
            .collect();
        let payload = log_uniform(&mut rng, 1, 10 << 20);
        let margin = if rng.random_bool(0.5) { 0.0 } else { DEFAULT_TIE_MARGIN };
        let got = choose_config(payload, &models, healthy, params, margin);
        let want = brute_choice(payload, &models, healthy, params, cands, margin);
        if got != want {
            return Err(format!("draw {i}: n={n} payload={payload} margin={margin} got {got:?} want {want:?}"));
        }
    }
    let mut worst = 0f64;
    for _ in 0..1000 {
        let a = rng.random_range(0.0..100.0);
        let b = rng.random_range(0.0..1e-3);
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|_| {
                let x = rng.random_range(0.0..1e6);
                (x, a + b * x)
            })
            .collect();
        let (ga, gb) = ols(&pts).ok_or("degenerate fit")?;
        worst = worst.max((ga - a).abs()).max((gb - b).abs());
    }
    if worst > 1e-9 {
        return Err(format!("OLS error {worst:e} > 1e-9"));
    }
    Ok(format!("10000 draws agree; worst OLS error {worst:.1e}"))
}

fn adaptability() -> Outcome {
    let mut notes = Vec::new();
    let workloads: [(&str, Vec<(usize, f64)>); 3] = [
        ("8B", vec![(8, 1.0)]),
        ("128KB", vec![(131_072, 1.0)]),
        ("mixed", vec![(8, 1.0), (131_072, 1.0)]),
    ];
    for (name, mix) in &workloads {
        let lat = |mode| {
            let mut s = regional(mode, mix);
            s.network.jitter = 0.05;
            mean_commit_latency(&s).0
        };
        let (cw, mp, rs) = (lat(Mode::Crossword), lat(Mode::MultiPaxos), lat(Mode::RsPaxos));
        let bound = mp.min(rs) * 1.05;
        if cw > bound {
            return Err(format!("{name}: crossword {cw:.3} ms > 1.05 x min({mp:.3}, {rs:.3})"));
        }
        notes.push(format!("{name} {cw:.2}/{mp:.2}/{rs:.2}"));
    }

    let s = adaptive_sequence();
    let out = run(&s);
    let params = p5();
    let mut bounds = CHANGES_MS.to_vec();
    bounds.push(SEQUENCE_END_MS);
    let mut worst = 1.0f64;
    for w in bounds.windows(2) {
        let (mut on, mut total) = (0usize, 0usize);
        for (_, _, o) in &out.observations {
            let crossword::protocol::Observation::Committed {
                config: Some(chosen),
                payload_len,
                proposed_at,
                ..
            } = o
            else {
                continue;
            };
            let t = *proposed_at as f64 / 1000.0;
            if t < w[0] + 2_500.0 || t >= w[1] {
                continue;
            }
            let truth = true_models(&s, t);
            let best = choose_config(*payload_len, &truth, truth.len(), &params, DEFAULT_TIE_MARGIN);
            let est = |c| estimate_completion(*payload_len, c, &truth, params.m).unwrap();
            total += 1;
            on += (*chosen == best || est(*chosen) <= est(best) * (1.0 + DEFAULT_TIE_MARGIN)) as usize;
        }
        if total == 0 {
            return Err(format!("no instances in window {w:?}"));
        }
        let frac = on as f64 / total as f64;
        worst = worst.min(frac);
        if frac < 0.9 {
            return Err(format!("window {w:?}: {on}/{total} on the analytic optimum"));
        }
    }
    Ok(format!(
        "latency cw/mp/rs ms: {}; worst on-optimum share after change+2.5s {:.1}%",
        notes.join(", "),
        worst * 100.0
    ))
}

fn failover_criterion() -> Outcome {
    let cw_s = failover(Mode::Crossword, 1_300.0);
    let cw = failover_stats(&cw_s);
    let rs = failover_stats(&failover(Mode::RsPaxos, 1_300.0));
    let rs_half = failover_stats(&failover(Mode::RsPaxos, 650.0));
    if cw.log_bytes < 10_000_000 || rs.log_bytes < 10_000_000 {
        return Err(format!("log too short: {} / {} bytes", cw.log_bytes, rs.log_bytes));
    }
    let bound = cw_s.gossip.deferral_bytes as u64;
    if cw.recon_payload > bound {
        return Err(format!(
            "crossword rebuilt {} B of payload over {} slots, gap {bound} B",
            cw.recon_payload, cw.recon_slots
        ));
    }
    let ratio = rs.recon_bytes as f64 / cw.recon_bytes.max(1) as f64;
    if ratio < 10.0 {
        return Err(format!("RSPaxos/Crossword reconstruction ratio {ratio:.1} < 10"));
    }
    let growth = rs.recon_bytes as f64 / rs_half.recon_bytes as f64;
    let log_growth = rs.log_bytes as f64 / rs_half.log_bytes as f64;
    if (growth / log_growth - 1.0).abs() > 0.2 {
        return Err(format!("RSPaxos reconstruction grew {growth:.2}x for a {log_growth:.2}x log"));
    }
    Ok(format!(
        "log {:.1} MB: crossword rebuilt {} B of committed payload (gap {bound}) plus {} B in flight, fetching {} B over {} slots, rspaxos {} B, ratio {ratio:.1}x, rspaxos growth {growth:.2}x for {log_growth:.2}x log",
        cw.log_bytes as f64 / 1e6,
        cw.recon_payload,
        cw.inflight_payload,
        cw.recon_bytes,
        cw.recon_slots,
        rs.recon_bytes
    ))
}

fn safety() -> Outcome {
    let t = Instant::now();
    let mut histories = 0;
    for seed in 0..500u64 {
        let n = if seed % 2 == 0 { 3 } else { 5 };
        let mode = [Mode::Crossword, Mode::MultiPaxos, Mode::RsPaxos][(seed / 2 % 3) as usize];
        let s = chaos::scenario(seed, n, mode);
        let out = run(&s);
        if let Some(d) = out.divergence {
            return Err(format!("seed {seed} {mode:?} n={n}: divergence {d:?}"));
        }
        match check(&out.history, DEFAULT_BUDGET) {
            Verdict::Linearizable { ops, .. } => histories += ops,
            v => return Err(format!("seed {seed} {mode:?} n={n}: {v:?}")),
        }
    }
    within(Duration::from_secs(600), t, "safety suite")?;
    Ok(format!("500 runs, {histories} operations linearizable, {:.1?}", t.elapsed()))
}

fn staleness_criterion() -> Outcome {
    let mut quiet = regional(Mode::Crossword, &[(65_536, 1.0)]);
    quiet.workload.put_ratio = 0.0;
    quiet.workload.follower_readers = 1;
    quiet.record_applies = true;
    let q = measure("no writes", &run(&quiet));
    if q.samples == 0 || q.mean_versions != 0.0 {
        return Err(format!("no-write staleness {q:?}"));
    }
    let mut base = regional(Mode::Crossword, &[]);
    base.duration_ms = 8_000.0;
    base.workload.clients = 2;
    base.workload.key_count = 1;
    base.workload.value_mean_bytes = 65_536;
    base.workload.interval_ms = 10.0;
    base.workload.follower_read_interval_ms = 5.0;
    let r = sweep(&base);
    let (mp, gaps) = (&r[0], &r[1..]);
    for w in gaps.windows(2) {
        if w[1].mean_versions < w[0].mean_versions {
            return Err(format!("staleness fell from {:?} to {:?}", w[0], w[1]));
        }
    }
    // Gossip adds at most one cycle plus one exchange round trip.
    let round_s = (base.gossip.cycle_ms + 2.0 * base.network.delay_ms) / 1000.0;
    let allowed = gaps[0].write_rate * round_s;
    let excess = gaps[0].mean_versions - mp.mean_versions;
    if excess > allowed {
        return Err(format!(
            "gap 0 is {excess:.2} versions behind MultiPaxos followers, allowed {allowed:.2}"
        ));
    }
    Ok(format!(
        "no-write 0; multipaxos {:.2}, gaps 0/400K/4M {:.2}/{:.2}/{:.2} versions; gap-0 excess {excess:.2} <= {allowed:.2}",
        mp.mean_versions, gaps[0].mean_versions, gaps[1].mean_versions, gaps[2].mean_versions
    ))
}

struct GossipBytes {
    completed: usize,
    ff_messages: u64,
    ff_header: u64,
    ff_payload: u64,
    lf_payload: u64,
}

fn gossip_run(batched: bool) -> GossipBytes {
    let mut s = crossword::harness::Scenario::new(5, Mode::Crossword);
    s.duration_ms = 8_000.0;
    s.chooser = ChooserSpec::Fixed { q: 5, c: 1 };
    s.workload.clients = 4;
    s.workload.value_mean_bytes = 16_384;
    s.workload.interval_ms = 5.0;
    s.gossip.batched = batched;
    let out = run(&s);
    let mut g = GossipBytes {
        completed: out.history.iter().filter(|r| r.respond_us.is_some()).count(),
        ff_messages: 0,
        ff_header: 0,
        ff_payload: 0,
        lf_payload: 0,
    };
    for a in 0..s.n {
        for b in 0..s.n {
            let st = out.links[a][b];
            if a == b {
                continue;
            } else if a == 0 {
                g.lf_payload += st.payload_bytes;
            } else if b != 0 {
                g.ff_messages += st.messages;
                g.ff_header += st.bytes - st.payload_bytes;
                g.ff_payload += st.payload_bytes;
            }
        }
    }
    g
}

fn bandwidth() -> Outcome {
    let b = gossip_run(true);
    let u = gossip_run(false);
    if (b.completed as f64 - u.completed as f64).abs() > 0.02 * u.completed as f64 {
        return Err(format!("throughput differs: {} vs {}", b.completed, u.completed));
    }
    if b.ff_header >= u.ff_header {
        return Err(format!("batched header bytes {} >= {}", b.ff_header, u.ff_header));
    }
    let fewer = 1.0 - b.ff_messages as f64 / u.ff_messages as f64;
    if fewer < 0.10 {
        return Err(format!("batched sends only {:.1}% fewer messages", fewer * 100.0));
    }
    let m = p5().m as f64;
    let want = (m - 1.0) / m;
    let share = b.ff_payload as f64 / (b.ff_payload + b.lf_payload) as f64;
    if (share - want).abs() > 0.05 * want {
        return Err(format!("F-F payload share {share:.4}, analytic {want:.4}"));
    }
    Ok(format!(
        "{:.1}% fewer F-F messages, header {} vs {} B, F-F payload share {share:.4} vs {want:.4}",
        fewer * 100.0,
        b.ff_header,
        u.ff_header
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("constraint-region equivalence", region),
        ("erasure round-trip", erasure),
        ("durability under f failures", durability_suite),
        ("chooser exactness", chooser),
        ("adaptability ordering", adaptability),
        ("failover gracefulness", failover_criterion),
        ("safety suite", safety),
        ("staleness monotonicity", staleness_criterion),
        ("bandwidth accounting", bandwidth),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS {} {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
