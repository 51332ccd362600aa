//! Mock workers that answer frames with (optionally perturbed) manifest
//! ground truth, standing in for the neural models.

use std::collections::HashMap;
use std::time::Duration;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::net::TcpStream;
use tokio::time::{interval_at, Instant, MissedTickBehavior};

use super::manifest::{GroundTruth, SequenceManifest};
use super::noise::NoiseSpec;
use super::SimError;
use crate::protocol::{read_message, write_message, Heartbeat, Message, WorkerKind, WorkerRegister, WorkerResult};

/// Deterministic reply function: the same `(seed, frame_id)` always yields
/// the same result, independent of frame order.
#[derive(Debug, Clone)]
pub struct MockResponder {
    pub worker_id: String,
    pub kind: WorkerKind,
    pub seed: u64,
    pub noise: NoiseSpec,
    truth: HashMap<u64, GroundTruth>,
}

impl MockResponder {
    pub fn new(worker_id: impl Into<String>, kind: WorkerKind, manifest: &SequenceManifest, seed: u64, noise: NoiseSpec) -> Self {
        let truth = manifest
            .frames
            .iter()
            .filter_map(|f| f.ground_truth.clone().map(|g| (f.frame_id, g)))
            .collect();
        Self { worker_id: worker_id.into(), kind, seed, noise, truth }
    }

    pub fn respond(&self, frame_id: u64) -> WorkerResult {
        let mut out = WorkerResult::empty(self.worker_id.clone(), frame_id);
        let Some(gt) = self.truth.get(&frame_id) else {
            out.unknown_frame = true;
            return out;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame_id);
        let n = &self.noise;
        match self.kind {
            WorkerKind::Detection => {
                out.detections = gt
                    .detections
                    .iter()
                    .map(|d| {
                        let mut d = d.clone();
                        d.bbox = n.jitter_bbox(&d.bbox, &mut rng);
                        d
                    })
                    .collect();
            }
            WorkerKind::Pose => out.poses = gt.poses.iter().map(|p| n.jitter_pose(p, &mut rng)).collect(),
            WorkerKind::Ocr => {
                out.readings = gt
                    .readings
                    .iter()
                    .map(|r| {
                        let mut r = r.clone();
                        r.bbox = n.jitter_bbox(&r.bbox, &mut rng);
                        r.text = n.corrupt_text(&r.text, &mut rng);
                        r
                    })
                    .collect();
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MockWorkerConfig {
    /// `None` accepts the gateway's default deadline.
    pub deadline_ms: Option<u64>,
    /// Artificial processing time before each reply.
    pub reply_delay: Duration,
    pub heartbeat_interval: Duration,
}

impl Default for MockWorkerConfig {
    fn default() -> Self {
        Self { deadline_ms: None, reply_delay: Duration::ZERO, heartbeat_interval: Duration::from_secs(1) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockWorkerSummary {
    pub frames: u64,
    pub unknown_frames: u64,
}

fn now_ns() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0)
}

/// Registers with the gateway and answers frames until the gateway closes
/// the connection. A single task serves the connection.
pub async fn run_mock_worker(responder: MockResponder, cfg: MockWorkerConfig, gateway: &str) -> Result<MockWorkerSummary, SimError> {
    let mut stream = TcpStream::connect(gateway)
        .await
        .map_err(|source| SimError::Connect { addr: gateway.to_string(), source })?;
    stream.set_nodelay(true)?;
    let reg = WorkerRegister {
        worker_id: responder.worker_id.clone(),
        kind: responder.kind,
        deadline_ms: cfg.deadline_ms,
        session_id: None,
    };
    write_message(&mut stream, &Message::WorkerRegister(reg)).await?;
    match read_message(&mut stream).await? {
        Some(Message::WorkerRegister(ack)) if ack.session_id.is_some() => {
            log::info!("worker {} registered, session {}", responder.worker_id, ack.session_id.unwrap_or_default());
        }
        Some(Message::Error(e)) => return Err(SimError::Rejected(format!("{:?}: {}", e.code, e.message))),
        other => return Err(SimError::Protocol(format!("expected a registration ack, got {other:?}"))),
    }
    let (mut rd, mut wr) = stream.into_split();
    // Reads are not cancel-safe, so a dedicated task feeds a channel the
    // select loop can poll alongside the heartbeat timer.
    let (tx, mut inbox) = tokio::sync::mpsc::channel(16);
    let reader = tokio::spawn(async move {
        loop {
            let msg = read_message(&mut rd).await;
            let stop = !matches!(msg, Ok(Some(_)));
            if tx.send(msg).await.is_err() || stop {
                break;
            }
        }
    });
    let mut beat = interval_at(Instant::now() + cfg.heartbeat_interval, cfg.heartbeat_interval);
    beat.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut summary = MockWorkerSummary::default();
    let result = loop {
        tokio::select! {
            msg = inbox.recv() => match msg {
                None | Some(Ok(None)) => break Ok(summary),
                Some(Err(e)) => break Err(e.into()),
                Some(Ok(Some(Message::Frame(frame)))) => {
                    if !cfg.reply_delay.is_zero() {
                        tokio::time::sleep(cfg.reply_delay).await;
                    }
                    let result = responder.respond(frame.frame_id);
                    summary.frames += 1;
                    summary.unknown_frames += result.unknown_frame as u64;
                    if let Err(e) = write_message(&mut wr, &Message::WorkerResult(result)).await {
                        break Err(e.into());
                    }
                }
                Some(Ok(Some(Message::Error(e)))) => {
                    break Err(SimError::Rejected(format!("{:?}: {}", e.code, e.message)));
                }
                Some(Ok(Some(Message::Heartbeat(_)))) => {}
                Some(Ok(Some(other))) => log::warn!("worker {} ignoring {:?}", responder.worker_id, other.msg_type()),
            },
            _ = beat.tick() => {
                let hb = Heartbeat { sender: Some(responder.worker_id.clone()), timestamp_ns: now_ns() };
                if let Err(e) = write_message(&mut wr, &Message::Heartbeat(hb)).await {
                    break Err(e.into());
                }
            }
        }
    };
    reader.abort();
    result
}
