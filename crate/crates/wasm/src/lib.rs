//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export returns a JSON string. The same functions are available
//! natively through [`demo`].

use wasm_bindgen::prelude::*;

pub mod demo;

/// The `(q, c)` grid for an `n`-server cluster.
#[wasm_bindgen]
pub fn explore_region(n: usize) -> Result<String, JsError> {
    demo::explore_region(n).map_err(|e| JsError::new(&e))
}

/// Shards held by each server under balanced round-robin with `c` shards
/// per server, and what the replies from `replies` cover.
#[wasm_bindgen]
pub fn codeword_view(n: usize, c: usize, replies: &[u32]) -> Result<String, JsError> {
    let replies: Vec<usize> = replies.iter().map(|&r| r as usize).collect();
    demo::codeword_view(n, c, &replies).map_err(|e| JsError::new(&e))
}

/// Estimated Accept completion per candidate config over a range of
/// payload sizes, with the slowest `lagged` followers slowed by
/// `lag_factor`.
#[wasm_bindgen]
pub fn chooser_curve(n: usize, delay_ms: f64, mbps: f64, lagged: usize, lag_factor: f64) -> Result<String, JsError> {
    demo::chooser_curve(n, delay_ms, mbps, lagged, lag_factor).map_err(|e| JsError::new(&e))
}
