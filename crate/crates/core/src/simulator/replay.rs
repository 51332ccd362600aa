//! Paced frame replay against the gateway with round-trip measurement.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::time::{sleep_until, Instant};

use super::manifest::SequenceManifest;
use super::SimError;
use crate::protocol::{encode_message, read_message, AnnotationStatus, ErrorCode, Message};
use crate::quantile;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub fps: f64,
    /// How long to wait for outstanding replies after the last send.
    pub drain_timeout: Duration,
}

impl ReplayConfig {
    pub fn new(fps: f64) -> Self {
        Self { fps, drain_timeout: Duration::from_secs(2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameOutcome {
    Complete,
    Partial,
    Failed,
    Dropped,
    Unanswered,
}

impl From<AnnotationStatus> for FrameOutcome {
    fn from(s: AnnotationStatus) -> Self {
        match s {
            AnnotationStatus::Complete => Self::Complete,
            AnnotationStatus::Partial => Self::Partial,
            AnnotationStatus::Failed => Self::Failed,
        }
    }
}

/// Reproducible part of one frame's round trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub outcome: FrameOutcome,
    pub detections: usize,
    pub poses: usize,
    pub readings: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_workers: Vec<String>,
}

/// Wall-clock measurements; everything outside this struct is
/// deterministic for a fixed manifest, seed and noise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayTiming {
    /// Round trip per frame in send order; `None` when never answered.
    pub round_trip_ns: Vec<Option<u64>>,
    pub p50_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
    pub max_round_trip_ns: u64,
    pub wall_time_s: f64,
    pub achieved_fps: f64,
    /// Largest deviation of an inter-send interval from `1/fps`.
    pub max_send_jitter_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub sequence: String,
    pub fps: f64,
    pub sent: u64,
    pub answered: u64,
    pub dropped: u64,
    pub unanswered: u64,
    pub complete: u64,
    pub partial: u64,
    pub failed: u64,
    pub frames: Vec<FrameRecord>,
    pub timing: ReplayTiming,
}

impl LatencyReport {
    fn empty(sequence: &str, fps: f64) -> Self {
        Self {
            sequence: sequence.to_string(),
            fps,
            sent: 0,
            answered: 0,
            dropped: 0,
            unanswered: 0,
            complete: 0,
            partial: 0,
            failed: 0,
            frames: Vec::new(),
            timing: ReplayTiming::default(),
        }
    }
}

struct Reply {
    at: Instant,
    record: FrameRecord,
}

/// Sends every manifest frame at `1/fps` spacing and collects the
/// gateway's answers. All images are loaded and encoded before connecting,
/// so a bad manifest fails before any send.
pub async fn replay(manifest: &SequenceManifest, cfg: &ReplayConfig, gateway: &str) -> Result<LatencyReport, SimError> {
    if !(cfg.fps > 0.0 && cfg.fps.is_finite()) {
        return Err(SimError::Config(format!("fps {} must be positive", cfg.fps)));
    }
    let envelopes: Vec<Vec<u8>> = manifest
        .frames
        .iter()
        .map(|f| {
            let frame = manifest.load_frame(f)?;
            encode_message(&Message::Frame(frame)).map_err(|e| SimError::Manifest(format!("frame {}: {e}", f.frame_id)))
        })
        .collect::<Result<_, _>>()?;
    let stream = TcpStream::connect(gateway)
        .await
        .map_err(|source| SimError::Connect { addr: gateway.to_string(), source })?;
    stream.set_nodelay(true)?;
    if envelopes.is_empty() {
        return Ok(LatencyReport::empty(&manifest.sequence, cfg.fps));
    }
    let (mut rd, mut wr) = stream.into_split();
    let n = envelopes.len();
    let interval = Duration::from_secs_f64(1.0 / cfg.fps);
    let index: HashMap<u64, usize> = manifest.frames.iter().enumerate().map(|(i, f)| (f.frame_id, i)).collect();
    let sent_at: Arc<Mutex<Vec<Option<Instant>>>> = Arc::new(Mutex::new(vec![None; n]));
    let start = Instant::now();

    let sender = {
        let sent_at = sent_at.clone();
        tokio::spawn(async move {
            for (i, bytes) in envelopes.iter().enumerate() {
                sleep_until(start + interval * i as u32).await;
                sent_at.lock()[i] = Some(Instant::now());
                wr.write_all(bytes).await?;
            }
            Ok::<_, std::io::Error>(wr)
        })
    };

    // Reads are not cancel-safe; a reader task timestamps each reply and
    // hands it over a channel that can be polled against the drain timer.
    let (tx, mut inbox) = tokio::sync::mpsc::unbounded_channel();
    let reader = tokio::spawn(async move {
        loop {
            let msg = read_message(&mut rd).await;
            let stop = !matches!(msg, Ok(Some(_)));
            if tx.send((Instant::now(), msg)).is_err() || stop {
                break;
            }
        }
    });

    let mut sender = sender;
    let mut send_result = None;
    let mut drain_until = start;
    let mut replies: Vec<Option<Reply>> = (0..n).map(|_| None).collect();
    let mut received = 0usize;
    let mut read_err = None;
    while received < n {
        let (at, msg) = tokio::select! {
            r = &mut sender, if send_result.is_none() => {
                send_result = Some(r);
                drain_until = Instant::now() + cfg.drain_timeout;
                continue;
            }
            _ = sleep_until(drain_until), if send_result.is_some() => break,
            m = inbox.recv() => match m {
                Some(m) => m,
                None => break,
            },
        };
        let msg = match msg {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) => {
                read_err = Some(e);
                break;
            }
        };
        let (frame_id, record) = match msg {
            Message::AnnotationSet(a) => (
                a.frame_id,
                FrameRecord {
                    frame_id: a.frame_id,
                    outcome: a.status.into(),
                    detections: a.detections.len(),
                    poses: a.poses.len(),
                    readings: a.readings.len(),
                    missing_workers: a.missing_workers,
                },
            ),
            Message::Error(e) if e.code == ErrorCode::FrameDropped || e.code == ErrorCode::NoWorkers => {
                let Some(id) = e.frame_id else { continue };
                let record = FrameRecord {
                    frame_id: id,
                    outcome: FrameOutcome::Dropped,
                    detections: 0,
                    poses: 0,
                    readings: 0,
                    missing_workers: vec![],
                };
                (id, record)
            }
            Message::Error(e) => {
                reader.abort();
                return Err(SimError::Rejected(format!("{:?}: {}", e.code, e.message)));
            }
            other => {
                log::warn!("replay ignoring {:?}", other.msg_type());
                continue;
            }
        };
        let Some(&i) = index.get(&frame_id) else {
            log::warn!("reply for unknown frame {frame_id}");
            continue;
        };
        if replies[i].is_some() {
            reader.abort();
            return Err(SimError::Protocol(format!("frame {frame_id} answered twice")));
        }
        replies[i] = Some(Reply { at, record });
        received += 1;
    }
    let send_result = match send_result {
        Some(r) => r,
        None => sender.await,
    };
    reader.abort();
    let writer = send_result.map_err(|e| SimError::Protocol(e.to_string()))??;
    drop(writer);
    if let Some(e) = read_err {
        if received == 0 {
            return Err(e.into());
        }
        log::warn!("replay stopped reading early: {e}");
    }

    let sent_at = sent_at.lock().clone();
    let mut report = LatencyReport::empty(&manifest.sequence, cfg.fps);
    report.sent = sent_at.iter().filter(|s| s.is_some()).count() as u64;
    let mut rtts = Vec::new();
    let mut last_reply = start;
    for (i, reply) in replies.into_iter().enumerate() {
        let frame_id = manifest.frames[i].frame_id;
        match reply {
            Some(r) => {
                match r.record.outcome {
                    FrameOutcome::Dropped => report.dropped += 1,
                    o => {
                        report.answered += 1;
                        match o {
                            FrameOutcome::Complete => report.complete += 1,
                            FrameOutcome::Partial => report.partial += 1,
                            _ => report.failed += 1,
                        }
                    }
                }
                let rtt = sent_at[i].map(|s| r.at.saturating_duration_since(s).as_nanos() as u64);
                if r.record.outcome != FrameOutcome::Dropped {
                    rtts.extend(rtt);
                }
                report.timing.round_trip_ns.push(rtt);
                last_reply = last_reply.max(r.at);
                report.frames.push(r.record);
            }
            None => {
                report.unanswered += 1;
                report.timing.round_trip_ns.push(None);
                report.frames.push(FrameRecord {
                    frame_id,
                    outcome: FrameOutcome::Unanswered,
                    detections: 0,
                    poses: 0,
                    readings: 0,
                    missing_workers: vec![],
                });
            }
        }
    }
    rtts.sort_unstable();
    let (p50, p90, p99) = quantile::summarize(&rtts);
    let t = &mut report.timing;
    (t.p50_ns, t.p90_ns, t.p99_ns) = (p50, p90, p99);
    t.max_round_trip_ns = rtts.last().copied().unwrap_or(0);
    let sends: Vec<Instant> = sent_at.iter().flatten().copied().collect();
    let slot_end = start + interval * n as u32;
    t.wall_time_s = slot_end.max(last_reply).duration_since(start).as_secs_f64();
    if let Some(last) = sends.last() {
        t.achieved_fps = sends.len() as f64 / (last.duration_since(start) + interval).as_secs_f64();
    }
    t.max_send_jitter_ns = sends
        .windows(2)
        .map(|w| (w[1].duration_since(w[0]).as_nanos() as i128 - interval.as_nanos() as i128).unsigned_abs() as u64)
        .max()
        .unwrap_or(0);
    Ok(report)
}
