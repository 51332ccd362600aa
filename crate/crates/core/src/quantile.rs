//! Nearest-rank order statistics used by latency reports.

/// Nearest-rank quantile of an ascending slice; 0 for an empty slice.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// `(p50, p90, p99)` of unsorted samples.
pub fn summarize(samples: &[u64]) -> (u64, u64, u64) {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    (nearest_rank(&sorted, 0.5), nearest_rank(&sorted, 0.9), nearest_rank(&sorted, 0.99))
}
