//! Splitting a point budget across Gaussians in proportion to their volume.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};

/// Counts above this are rounded to a multiple of [`BIN_WIDTH`] in binned mode.
pub const BIN_THRESHOLD: u64 = 50;
pub const BIN_WIDTH: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    /// Counts sum exactly to the requested total.
    Exact,
    /// Large counts are snapped to 5-point bins so more Gaussians share a
    /// batch. The total may drift from the request.
    Binned,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocationPlan {
    pub per_gaussian_count: Vec<u64>,
    pub total_requested: u64,
    pub mode: AllocationMode,
}

impl AllocationPlan {
    pub fn allocated(&self) -> u64 {
        self.per_gaussian_count.iter().sum()
    }
}

/// Proportional shares `total · Vᵢ / ΣV`, floored, with the shortfall handed
/// out by largest remainder (ties: larger volume, then lower index).
pub fn allocate(volumes: &[f64], total: u64, mode: AllocationMode) -> Result<AllocationPlan> {
    if total == 0 {
        return Err(Error::domain("point budget must be at least 1"));
    }
    if let Some(v) = volumes.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!("invalid Gaussian volume {v}")));
    }
    let sum: f64 = volumes.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::domain("all Gaussian volumes are zero"));
    }

    let shares: Vec<f64> = volumes.iter().map(|v| total as f64 * v / sum).collect();
    let mut counts: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let floored: u64 = counts.iter().sum();

    // Order by remainder descending, then volume descending, then index.
    let by_priority = |&a: &usize, &b: &usize| -> Ordering {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra)
            .then(volumes[b].total_cmp(&volumes[a]))
            .then(a.cmp(&b))
    };
    let mut order: Vec<usize> = (0..volumes.len()).collect();
    if floored < total {
        let short = (total - floored) as usize;
        if short < order.len() {
            order.select_nth_unstable_by(short, by_priority);
        }
        order.truncate(short);
        order.sort_unstable_by(by_priority);
        // More than one unit each only happens through rounding drift.
        for k in 0..short {
            counts[order[k % order.len()]] += 1;
        }
    } else if floored > total {
        // Float drift can push the floors past the total; take units back
        // from the weakest claims first.
        order.retain(|&i| counts[i] > 0);
        order.sort_unstable_by(|a, b| by_priority(b, a));
        let mut excess = floored - total;
        for &i in order.iter().cycle() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }

    if mode == AllocationMode::Binned {
        for (c, s) in counts.iter_mut().zip(&shares) {
            if *c > BIN_THRESHOLD {
                *c = bin(*s);
            }
        }
    }
    Ok(AllocationPlan {
        per_gaussian_count: counts,
        total_requested: total,
        mode,
    })
}

/// Nearest multiple of the bin width, halves rounding up.
fn bin(share: f64) -> u64 {
    ((share / BIN_WIDTH as f64 + 0.5).floor() as u64) * BIN_WIDTH
}
