use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::ServedFrom;

const LATENCY_WINDOW: usize = 10_000;

/// Nearest-rank percentile (`p` in `[0, 1]`). Empty input yields 0.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FallbackRates {
    pub level_2: f64,
    pub level_3: f64,
    pub level_4: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub requests: u64,
    pub cache_hit_rate: f64,
    pub cache_miss_rate: f64,
    pub fallback_level_rates: FallbackRates,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub enhance_scheduled: u64,
    pub enhance_completed: u64,
    pub enhance_failed: u64,
    pub enhance_dropped: u64,
}

#[derive(Debug, Default)]
pub(crate) struct Metrics {
    requests: AtomicU64,
    hits: AtomicU64,
    served: [AtomicU64; 5],
    pub(crate) enhance_scheduled: AtomicU64,
    pub(crate) enhance_completed: AtomicU64,
    pub(crate) enhance_failed: AtomicU64,
    pub(crate) enhance_dropped: AtomicU64,
    latencies: Mutex<VecDeque<f64>>,
}

impl Metrics {
    pub(crate) fn record(&self, hit: bool, served_from: ServedFrom, total_ms: f64) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        if hit {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        self.served[served_from as usize].fetch_add(1, Ordering::Relaxed);
        let mut lat = self.latencies.lock();
        if lat.len() == LATENCY_WINDOW {
            lat.pop_front();
        }
        lat.push_back(total_ms);
    }

    pub(crate) fn snapshot(&self) -> TrackMetrics {
        let requests = self.requests.load(Ordering::Relaxed);
        let rate = |n: u64| if requests == 0 { 0.0 } else { n as f64 / requests as f64 };
        let hits = self.hits.load(Ordering::Relaxed);
        let served = |s: ServedFrom| self.served[s as usize].load(Ordering::Relaxed);
        let lat: Vec<f64> = self.latencies.lock().iter().copied().collect();
        TrackMetrics {
            requests,
            cache_hit_rate: rate(hits),
            cache_miss_rate: if requests == 0 { 0.0 } else { 1.0 - rate(hits) },
            fallback_level_rates: FallbackRates {
                level_2: rate(served(ServedFrom::FallbackLevel2)),
                level_3: rate(served(ServedFrom::FallbackLevel3)),
                level_4: rate(served(ServedFrom::FallbackLevel4)),
            },
            latency_p50_ms: percentile(&lat, 0.50),
            latency_p95_ms: percentile(&lat, 0.95),
            enhance_scheduled: self.enhance_scheduled.load(Ordering::Relaxed),
            enhance_completed: self.enhance_completed.load(Ordering::Relaxed),
            enhance_failed: self.enhance_failed.load(Ordering::Relaxed),
            enhance_dropped: self.enhance_dropped.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 50.0);
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }
}
