//! Target-independent implementations behind the exports.

use crossword::assignment::{AssignmentPolicy, ClusterParams, Config};
use crossword::harness::explore::explore;
use crossword::quorum::{candidate_configs, check_commit_general, rr_tolerance, within_region, AcceptancePattern};
use crossword::simnet::LinkParams;
use crossword::tuner::{choose_config, estimate_completion, LinearModel, DEFAULT_TIE_MARGIN};
use serde_json::json;

/// Payload sizes sampled by [`chooser_curve`]: 64 B to 4 MB, four per octave.
pub const CURVE_POINTS: usize = 65;

fn params(n: usize) -> Result<ClusterParams, String> {
    ClusterParams::new(n).map_err(|e| e.to_string())
}

pub fn explore_region(n: usize) -> Result<String, String> {
    let r = explore(n).map_err(|e| e.to_string())?;
    Ok(json!({
        "n": r.n,
        "m": r.m,
        "f": r.f,
        "points": r.points,
        "mismatches": r.mismatches().len(),
        "grid": r.grid(),
    })
    .to_string())
}

pub fn codeword_view(n: usize, c: usize, replies: &[usize]) -> Result<String, String> {
    let p = params(n)?;
    if let Some(bad) = replies.iter().find(|&&r| r >= n) {
        return Err(format!("server {bad} outside 0..{n}"));
    }
    let policy = AssignmentPolicy::balanced_rr(&p, c).map_err(|e| e.to_string())?;
    let ap = AcceptancePattern::from_policy(&policy, replies.iter().copied());
    let d = policy.scheme().data_shards();
    let servers: Vec<Vec<usize>> = (0..n).map(|s| policy.assigned(s).iter().collect()).collect();
    let q = ap.nodes();
    let c4 = within_region(&p, q.max(p.m), c);
    Ok(json!({
        "n": n,
        "shards": policy.scheme().n_shards(),
        "d": d,
        "f": p.f,
        "servers": servers,
        "nodes": q,
        "cover": ap.cover(),
        "subcover": ap.subcover(p.f),
        "commit_safe": check_commit_general(&ap, &p, d, p.f),
        "within_region": c4,
        "tolerance_at_q": if q >= p.m { Some(rr_tolerance(&p, Config { q, c })) } else { None },
    })
    .to_string())
}

pub fn chooser_curve(n: usize, delay_ms: f64, mbps: f64, lagged: usize, lag_factor: f64) -> Result<String, String> {
    let p = params(n)?;
    if !(delay_ms >= 0.0 && mbps > 0.0 && lag_factor >= 1.0) {
        return Err("need delay >= 0, bandwidth > 0 and lag factor >= 1".into());
    }
    if lagged > n - 1 {
        return Err(format!("at most {} followers can lag", n - 1));
    }
    let models: Vec<LinearModel> = (1..n)
        .map(|peer| {
            let slow = peer + lagged >= n;
            let k = if slow { lag_factor } else { 1.0 };
            let link = LinkParams::from_mbps(delay_ms * k, mbps / k);
            LinearModel::from_link(peer, 2.0 * link.delay_ms, link.bandwidth_bytes_per_ms)
        })
        .collect();
    let sizes: Vec<usize> = (0..CURVE_POINTS)
        .map(|i| (64.0 * 2f64.powf(i as f64 / 4.0)).round() as usize)
        .collect();
    let configs: Vec<_> = candidate_configs(&p)
        .into_iter()
        .map(|cfg| {
            let ms: Vec<Option<f64>> = sizes
                .iter()
                .map(|&v| estimate_completion(v, cfg, &models, p.m))
                .collect();
            json!({ "q": cfg.q, "c": cfg.c, "ms": ms })
        })
        .collect();
    let chosen: Vec<Config> = sizes
        .iter()
        .map(|&v| choose_config(v, &models, n - 1, &p, DEFAULT_TIE_MARGIN))
        .collect();
    Ok(json!({ "sizes": sizes, "configs": configs, "chosen": chosen }).to_string())
}
