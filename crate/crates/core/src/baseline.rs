//! Event-based combinatorial disaggregator: detects power edges on the main
//! line and assigns per-sample appliance states by exhaustive search over
//! joint ON/OFF combinations against a steady-state signature library.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Steady-state signatures for every channel plus the edge threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignatureLibrary {
    pub names: Vec<String>,
    pub steady_power: Vec<f64>,
    pub edge_threshold: f64,
}

impl SignatureLibrary {
    pub fn new(names: Vec<String>, steady_power: Vec<f64>, edge_threshold: f64) -> Result<Self> {
        if names.len() != steady_power.len() {
            return Err(Error::Config(format!(
                "{} names but {} steady powers",
                names.len(),
                steady_power.len()
            )));
        }
        if steady_power.iter().any(|p| *p <= 0.0) {
            return Err(Error::Config("steady_power entries must be > 0".to_string()));
        }
        if edge_threshold <= 0.0 {
            return Err(Error::Config("edge_threshold must be > 0".to_string()));
        }
        Ok(SignatureLibrary {
            names,
            steady_power,
            edge_threshold,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.steady_power.len()
    }
}

/// A detected switching event on the main line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEvent {
    pub sample_index: usize,
    pub delta_power: f64,
}

/// Per-channel ON flags for one sample.
pub type StateVector = Vec<bool>;

/// Emits one event per index where the main power steps by at least
/// `threshold`. Consecutive events within 2 samples of each other are merged
/// (deltas summed, first index kept) so that an inrush spike followed by its
/// settling tail collapses into the net steady-state step; merged events whose
/// net delta falls back below the threshold are dropped.
pub fn detect_edges(main_power: &[f64], threshold: f64) -> Result<Vec<EdgeEvent>> {
    if main_power.len() < 2 {
        return Err(Error::Validation(
            "edge detection needs at least 2 samples".to_string(),
        ));
    }
    if threshold <= 0.0 {
        return Err(Error::Validation("threshold must be > 0".to_string()));
    }
    let mut merged: Vec<EdgeEvent> = Vec::new();
    let mut last_component_index: Option<usize> = None;
    for t in 1..main_power.len() {
        let delta = main_power[t] - main_power[t - 1];
        if delta.abs() < threshold {
            continue;
        }
        match (merged.last_mut(), last_component_index) {
            (Some(prev), Some(last_idx)) if t - last_idx <= 2 => {
                prev.delta_power += delta;
            }
            _ => merged.push(EdgeEvent {
                sample_index: t,
                delta_power: delta,
            }),
        }
        last_component_index = Some(t);
    }
    merged.retain(|e| e.delta_power.abs() >= threshold);
    Ok(merged)
}

/// Index-sorted list of ON channels; `Vec` ordering gives the lexicographic
/// tie-break ("lowest channel indices ON").
fn on_indices(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|c| mask & (1 << c) != 0).collect()
}

/// For each sample, chooses the joint ON/OFF combination minimizing
/// `|main_p - sum of ON steady powers|` by exhaustive search. Ties prefer
/// fewer ON channels, then lowest channel indices. A state change must
/// persist for at least 2 samples to be accepted.
pub fn match_states(main_power: &[f64], lib: &SignatureLibrary) -> Result<Vec<StateVector>> {
    let n = lib.n_channels();
    if n == 0 {
        return Err(Error::Config("signature library is empty".to_string()));
    }
    if n > 12 {
        return Err(Error::Config(format!(
            "exhaustive search over 2^{n} combinations refused (limit 12 channels)"
        )));
    }
    let n_combos = 1u32 << n;
    let combo_sum: Vec<f64> = (0..n_combos)
        .map(|mask| {
            (0..n)
                .filter(|c| mask & (1 << c) != 0)
                .map(|c| lib.steady_power[c])
                .sum()
        })
        .collect();

    // Raw per-sample best combination.
    let raw: Vec<u32> = main_power
        .iter()
        .map(|&p| {
            let mut best_mask = 0u32;
            let mut best_residual = f64::INFINITY;
            let mut best_count = usize::MAX;
            let mut best_key: Vec<usize> = Vec::new();
            for mask in 0..n_combos {
                let residual = (p - combo_sum[mask as usize]).abs();
                let count = mask.count_ones() as usize;
                let better = if residual + 1e-12 < best_residual {
                    true
                } else if (residual - best_residual).abs() <= 1e-12 {
                    let key = on_indices(mask, n);
                    count < best_count || (count == best_count && key < best_key)
                } else {
                    false
                };
                if better {
                    best_mask = mask;
                    best_residual = residual;
                    best_count = count;
                    best_key = on_indices(mask, n);
                }
            }
            best_mask
        })
        .collect();

    // Persistence filter: accept a change only when the raw state holds for
    // at least 2 consecutive samples; single-sample flickers are rejected.
    let mut smoothed = Vec::with_capacity(raw.len());
    for (t, &mask) in raw.iter().enumerate() {
        if t == 0 {
            smoothed.push(mask);
            continue;
        }
        let current = smoothed[t - 1];
        let persists = t + 1 < raw.len() && raw[t + 1] == mask;
        if mask == current || persists {
            smoothed.push(mask);
        } else {
            smoothed.push(current);
        }
    }

    Ok(smoothed
        .into_iter()
        .map(|mask| (0..n).map(|c| mask & (1 << c) != 0).collect())
        .collect())
}

/// Turns a state sequence back into per-channel power series using the
/// library's steady powers. Output layout matches the neural model: one
/// series per channel.
pub fn reconstruct(states: &[StateVector], lib: &SignatureLibrary) -> Vec<Vec<f64>> {
    let n = lib.n_channels();
    (0..n)
        .map(|c| {
            states
                .iter()
                .map(|s| if s[c] { lib.steady_power[c] } else { 0.0 })
                .collect()
        })
        .collect()
}
