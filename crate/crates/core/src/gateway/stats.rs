//! Monotone routing counters and per-worker latency samples.

use std::collections::BTreeMap;

use crate::protocol::{AnnotationStatus, GatewayStats, WorkerKind, WorkerLatency};
use crate::quantile;

#[derive(Debug, Default)]
struct WorkerSamples {
    kind: Option<WorkerKind>,
    latencies_ns: Vec<u64>,
    timeouts: u64,
}

#[derive(Debug, Default)]
pub struct StatsCollector {
    frames_routed: u64,
    frames_complete: u64,
    frames_partial: u64,
    frames_failed: u64,
    timeouts: u64,
    dropped_frames: u64,
    workers: BTreeMap<String, WorkerSamples>,
}

impl StatsCollector {
    pub fn worker_seen(&mut self, worker_id: &str, kind: WorkerKind) {
        self.workers.entry(worker_id.to_string()).or_default().kind = Some(kind);
    }

    pub fn frame_routed(&mut self) {
        self.frames_routed += 1;
    }

    pub fn frame_finished(&mut self, status: AnnotationStatus) {
        match status {
            AnnotationStatus::Complete => self.frames_complete += 1,
            AnnotationStatus::Partial => self.frames_partial += 1,
            AnnotationStatus::Failed => self.frames_failed += 1,
        }
    }

    pub fn frame_dropped(&mut self) {
        self.dropped_frames += 1;
    }

    pub fn reply(&mut self, worker_id: &str, latency_ns: u64) {
        self.workers.entry(worker_id.to_string()).or_default().latencies_ns.push(latency_ns);
    }

    pub fn timeout(&mut self, worker_id: &str) {
        self.timeouts += 1;
        self.workers.entry(worker_id.to_string()).or_default().timeouts += 1;
    }

    /// Snapshot with quantiles; `live` lists the currently registered ids.
    pub fn snapshot<'a>(&self, live: impl IntoIterator<Item = &'a str>, evicted: u64) -> GatewayStats {
        let live: Vec<&str> = live.into_iter().collect();
        let workers = self
            .workers
            .iter()
            .filter_map(|(id, w)| {
                let mut sorted = w.latencies_ns.clone();
                sorted.sort_unstable();
                let (p50_ns, p90_ns, p99_ns) = quantile::summarize(&sorted);
                Some(WorkerLatency {
                    worker_id: id.clone(),
                    kind: w.kind?,
                    live: live.contains(&id.as_str()),
                    replies: sorted.len() as u64,
                    timeouts: w.timeouts,
                    p50_ns,
                    p90_ns,
                    p99_ns,
                })
            })
            .collect();
        GatewayStats {
            frames_routed: self.frames_routed,
            frames_complete: self.frames_complete,
            frames_partial: self.frames_partial,
            frames_failed: self.frames_failed,
            timeouts: self.timeouts,
            dropped_frames: self.dropped_frames,
            live_workers: live.len() as u64,
            evicted_workers: evicted,
            workers,
        }
    }
}
