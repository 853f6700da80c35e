//! Budget-constrained quality allocation across frames (multiple-choice
//! knapsack) and the rate-distortion loss.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRANULARITY: u64 = 1024;
pub const QUALITY_LEVELS: u8 = 5;

/// Lagrange multiplier of a quality index: 20, 22, 24, 26, 28.
pub fn lambda_for_quality(q: u8) -> f64 {
    20.0 + 2.0 * q as f64
}

/// One quality configuration of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub q: u8,
    pub rate_bytes: u64,
    pub msssim: f64,
}

/// Stats-file entry for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub configs: Vec<ConfigPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub budget: u64,
    pub granularity: u64,
    pub q: Vec<u8>,
    pub total_rate: u64,
    pub total_msssim: f64,
}

pub fn read_stats(path: impl AsRef<Path>) -> Result<Vec<FrameStats>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(format!("parsing {}", path.display())))
}

fn validate(tables: &[Vec<ConfigPoint>], granularity: u64) -> Result<()> {
    if tables.is_empty() {
        return Err(Error::Usage("no frames to allocate".into()));
    }
    if granularity == 0 {
        return Err(Error::Usage("granularity must be at least 1 byte".into()));
    }
    for (i, configs) in tables.iter().enumerate() {
        if configs.is_empty() || configs.len() > u8::MAX as usize {
            return Err(Error::Usage(format!("frame {i} has {} configs, need 1..=255", configs.len())));
        }
        if let Some(c) = configs.iter().find(|c| !(0.0..=1.0).contains(&c.msssim)) {
            return Err(Error::Domain(format!("frame {i} q {}: msssim {} outside [0, 1]", c.q, c.msssim)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct State {
    value: f64,
    rate: u64,
}

/// Choose one configuration per frame maximizing the summed MS-SSIM with the
/// summed rate at most `budget`.
///
/// Rates above each frame's cheapest configuration are rounded up to whole
/// `granularity` buckets, so the plan never exceeds the budget and is exact
/// when `granularity == 1`. Ties prefer the lower true total rate, then the
/// lexicographically smaller q vector.
pub fn allocate(tables: &[Vec<ConfigPoint>], budget: u64, granularity: u64) -> Result<AllocationPlan> {
    validate(tables, granularity)?;
    let n = tables.len();
    let min_rates: Vec<u64> = tables.iter().map(|t| t.iter().map(|c| c.rate_bytes).min().unwrap()).collect();
    let min_total = min_rates
        .iter()
        .try_fold(0u64, |acc, &r| acc.checked_add(r))
        .ok_or_else(|| Error::Domain("total minimum rate overflows".into()))?;
    if min_total > budget {
        let shown: Vec<String> = min_rates.iter().take(8).map(u64::to_string).collect();
        let more = if n > 8 { ", ..." } else { "" };
        return Err(Error::Infeasible {
            budget,
            min_total,
            note: format!(" (per-frame minimum rates: {}{more})", shown.join(", ")),
        });
    }

    let costs: Vec<Vec<usize>> = tables
        .iter()
        .zip(&min_rates)
        .map(|(t, &lo)| t.iter().map(|c| (c.rate_bytes - lo).div_ceil(granularity) as usize).collect())
        .collect();
    let max_cost: Vec<usize> = costs.iter().map(|c| *c.iter().max().unwrap()).collect();
    let total_extra: usize = max_cost.iter().sum();
    let capacity = (((budget - min_total) / granularity).min(total_extra as u64)) as usize;

    // capacity reachable at frame i lies in [lo[i], hi[i]]
    let mut lo = vec![0usize; n + 1];
    let mut hi = vec![0usize; n + 1];
    let mut prefix = 0usize;
    for i in 0..=n {
        lo[i] = capacity.saturating_sub(prefix);
        if i < n {
            prefix += max_cost[i];
        }
    }
    let mut suffix = 0usize;
    for i in (0..=n).rev() {
        hi[i] = capacity.min(suffix);
        if i > 0 {
            suffix += max_cost[i - 1];
        }
    }

    let mut next = vec![State { value: 0.0, rate: 0 }];
    let mut choices: Vec<Vec<u8>> = vec![Vec::new(); n];
    for i in (0..n).rev() {
        let (lo_i, hi_i) = (lo[i], hi[i]);
        let (lo_n, hi_n) = (lo[i + 1], hi[i + 1]);
        let mut current = Vec::with_capacity(hi_i - lo_i + 1);
        let mut row = Vec::with_capacity(hi_i - lo_i + 1);
        for c in lo_i..=hi_i {
            let mut best: Option<(State, u8)> = None;
            for (m, config) in tables[i].iter().enumerate() {
                let Some(rest) = c.checked_sub(costs[i][m]) else { continue };
                if rest < lo_n {
                    continue;
                }
                let tail = next[rest.min(hi_n) - lo_n];
                let cand = State { value: config.msssim + tail.value, rate: config.rate_bytes + tail.rate };
                let better = match &best {
                    None => true,
                    Some((b, bm)) => {
                        cand.value > b.value
                            || (cand.value == b.value
                                && (cand.rate < b.rate
                                    || (cand.rate == b.rate && config.q < tables[i][*bm as usize].q)))
                    }
                };
                if better {
                    best = Some((cand, m as u8));
                }
            }
            let (state, m) = best.expect("the cheapest configuration always fits");
            current.push(state);
            row.push(m);
        }
        choices[i] = row;
        next = current;
    }

    let mut q = Vec::with_capacity(n);
    let mut c = capacity;
    let mut total_rate = 0u64;
    for i in 0..n {
        let ci = c.min(hi[i]);
        let m = choices[i][ci - lo[i]] as usize;
        q.push(tables[i][m].q);
        total_rate += tables[i][m].rate_bytes;
        c = ci - costs[i][m];
    }
    let total_msssim = next[capacity.min(hi[0]) - lo[0]].value;
    debug_assert!(total_rate <= budget);
    Ok(AllocationPlan { budget, granularity, q, total_rate, total_msssim })
}

/// `λ · (1 − msssim) + R_y + R_z`.
pub fn evaluate_loss(msssim: f64, rate_y_bits: f64, rate_z_bits: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(lambda * (1.0 - msssim) + rate_y_bits + rate_z_bits)
}
