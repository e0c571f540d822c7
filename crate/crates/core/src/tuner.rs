//! Per-follower linear performance models and the per-instance config chooser.
//!
//! The leader keeps a 2 s sliding window of `(size, response time)` samples
//! per follower, fits `t(v) = delay + v / bandwidth` by ordinary least
//! squares every 200 ms (top 5% of response times discarded), and for a new
//! payload picks the candidate `(q, c)` whose `(q-1)`-th fastest follower
//! estimate is smallest.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::assignment::{ClusterParams, Config, ServerId};
use crate::quorum::candidate_configs;
use crate::simnet::Micros;

pub const WINDOW_US: Micros = 2_000_000;
pub const REFIT_US: Micros = 200_000;
pub const OUTLIER_RATIO: f64 = 0.05;
/// Relative margin inside which two estimates count as tied.
pub const DEFAULT_TIE_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Datapoint {
    pub peer: ServerId,
    pub size: usize,
    pub rtt_ms: f64,
    pub at: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub peer: ServerId,
    pub intercept_ms: f64,
    pub slope_ms_per_byte: f64,
    pub fitted_at: Micros,
    pub n_points: usize,
}

impl LinearModel {
    /// A model from known link characteristics.
    pub fn from_link(peer: ServerId, delay_ms: f64, bytes_per_ms: f64) -> Self {
        LinearModel {
            peer,
            intercept_ms: delay_ms,
            slope_ms_per_byte: 1.0 / bytes_per_ms,
            fitted_at: 0,
            n_points: 0,
        }
    }

    pub fn estimate(&self, size: f64) -> f64 {
        self.intercept_ms + self.slope_ms_per_byte * size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TunerError {
    #[error("model unavailable for peer {0}: fewer than two distinct sizes")]
    ModelUnavailable(ServerId),
}

/// Least-squares line through `(x, y)` points; `None` when `x` is constant.
pub fn ols(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx <= f64::EPSILON * mean_x.abs().max(1.0) {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    Some((mean_y - slope * mean_x, slope))
}

/// Count of highest-rtt points dropped from a window of `len`.
pub fn outlier_count(len: usize) -> usize {
    (len as f64 * OUTLIER_RATIO).floor() as usize
}

#[derive(Debug, Default, Clone)]
struct PeerWindow {
    points: VecDeque<Datapoint>,
    model: Option<LinearModel>,
}

/// Sliding-window sample store and model cache for all followers.
#[derive(Debug, Default, Clone)]
pub struct PerfMonitor {
    peers: BTreeMap<ServerId, PeerWindow>,
}

impl PerfMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, peer: ServerId, size: usize, rtt_ms: f64, now: Micros) {
        let w = self.peers.entry(peer).or_default();
        w.points.push_back(Datapoint {
            peer,
            size,
            rtt_ms: rtt_ms.max(0.0),
            at: now,
        });
        Self::evict(w, now);
    }

    fn evict(w: &mut PeerWindow, now: Micros) {
        while let Some(front) = w.points.front() {
            if front.at + WINDOW_US <= now {
                w.points.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn window(&mut self, peer: ServerId, now: Micros) -> Vec<Datapoint> {
        match self.peers.get_mut(&peer) {
            Some(w) => {
                Self::evict(w, now);
                w.points.iter().copied().collect()
            }
            None => Vec::new(),
        }
    }

    /// Returns the cached model unless it is at least 200 ms old, in which
    /// case it is refit from the current window.
    pub fn fit(&mut self, peer: ServerId, now: Micros) -> Result<LinearModel, TunerError> {
        let w = self.peers.entry(peer).or_default();
        if let Some(m) = w.model {
            if now < m.fitted_at + REFIT_US {
                return Ok(m);
            }
        }
        Self::evict(w, now);
        let mut pts: Vec<Datapoint> = w.points.iter().copied().collect();
        pts.sort_by(|a, b| a.rtt_ms.total_cmp(&b.rtt_ms));
        pts.truncate(pts.len() - outlier_count(pts.len()));
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.size as f64, p.rtt_ms)).collect();
        match ols(&xy) {
            Some((intercept, slope)) => {
                let m = LinearModel {
                    peer,
                    intercept_ms: intercept,
                    slope_ms_per_byte: slope.max(0.0),
                    fitted_at: now,
                    n_points: xy.len(),
                };
                w.model = Some(m);
                Ok(m)
            }
            None => {
                w.model = None;
                Err(TunerError::ModelUnavailable(peer))
            }
        }
    }

    /// Models for the given peers, skipping those without enough data.
    pub fn models(&mut self, peers: impl IntoIterator<Item = ServerId>, now: Micros) -> Vec<LinearModel> {
        peers.into_iter().filter_map(|p| self.fit(p, now).ok()).collect()
    }
}

/// Bytes each follower receives under `c` shards of an `m`-data-shard code.
pub fn transmitted_size(payload: usize, c: usize, m: usize) -> f64 {
    payload as f64 * c as f64 / m as f64
}

/// Estimated Accept-phase completion for `cfg`: the `(q-1)`-th smallest
/// follower estimate. `None` when fewer than `q-1` models exist.
pub fn estimate_completion(payload: usize, cfg: Config, models: &[LinearModel], m: usize) -> Option<f64> {
    let need = cfg.q - 1;
    if need == 0 {
        return Some(0.0);
    }
    if models.len() < need {
        return None;
    }
    let size = transmitted_size(payload, cfg.c, m);
    let mut times: Vec<f64> = models.iter().map(|md| md.estimate(size)).collect();
    times.sort_by(f64::total_cmp);
    Some(times[need - 1])
}

/// Picks the candidate with the smallest `q` whose estimate is within
/// `tie_margin` (relative) of the best. `models` holds the fitted models of
/// healthy followers; `q` is capped at `1 + healthy_followers`. Falls back
/// to `(m, m)` when nothing can be evaluated.
pub fn choose_config(
    payload: usize,
    models: &[LinearModel],
    healthy_followers: usize,
    params: &ClusterParams,
    tie_margin: f64,
) -> Config {
    let fallback = Config::multipaxos(params);
    let scored: Vec<(Config, f64)> = candidate_configs(params)
        .into_iter()
        .filter(|cfg| cfg.q <= 1 + healthy_followers)
        .filter_map(|cfg| estimate_completion(payload, cfg, models, params.m).map(|t| (cfg, t)))
        .collect();
    let Some(best) = scored.iter().map(|s| s.1).min_by(f64::total_cmp) else {
        return fallback;
    };
    scored
        .iter()
        .find(|(_, t)| *t <= best * (1.0 + tie_margin))
        .map(|(cfg, _)| *cfg)
        .unwrap_or(fallback)
}

/// How a leader picks each instance's configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Chooser {
    /// Sliding-window regression over candidate configs.
    Regression { tie_margin: f64 },
    /// Payload-size thresholds: the last `(min_bytes, c)` entry not
    /// exceeding the payload wins; `q = n + 1 - c`.
    Threshold(Vec<(usize, usize)>),
    /// A pinned configuration, lowered toward `(m, m)` while too few
    /// followers respond.
    Fixed(Config),
}

impl Chooser {
    pub fn threshold_config(table: &[(usize, usize)], payload: usize, params: &ClusterParams) -> Config {
        let c = table
            .iter()
            .rev()
            .find(|(min, _)| payload >= *min)
            .map(|(_, c)| *c)
            .unwrap_or(params.m)
            .clamp(1, params.m);
        Config { q: params.n + 1 - c, c }
    }
}
