//! Jitter distribution over round-timing records.

use serde::{Deserialize, Serialize};

use crate::eventlog::{EventKind, EventLog};

pub const BIN_MS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterReport {
    pub rounds: usize,
    /// `(bin start ms, count)` for 10 ms bins, up to the last non-empty bin.
    pub histogram: Vec<(f64, usize)>,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
    pub deadline_misses: usize,
}

/// Nearest-rank quantile of sorted samples.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn report(samples: &[f64], deadline_misses: usize) -> JitterReport {
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted.last().copied().unwrap_or(0.0);
    let bins = if sorted.is_empty() { 0 } else { (max / BIN_MS).floor() as usize + 1 };
    let mut histogram: Vec<(f64, usize)> = (0..bins).map(|i| (i as f64 * BIN_MS, 0)).collect();
    for s in &sorted {
        let i = ((s / BIN_MS).floor() as usize).min(bins - 1);
        histogram[i].1 += 1;
    }
    JitterReport {
        rounds: sorted.len(),
        histogram,
        p50: quantile(&sorted, 0.5),
        p95: quantile(&sorted, 0.95),
        max,
        deadline_misses,
    }
}

pub fn jitter_samples(log: &EventLog) -> Vec<f64> {
    log.of_kind(EventKind::RoundTiming)
        .filter_map(|r| r.detail["jitter"].as_f64())
        .collect()
}

pub fn jitter_report(log: &EventLog) -> JitterReport {
    report(&jitter_samples(log), log.of_kind(EventKind::DeadlineMiss).count())
}
