//! TCP front end: one headset client, any number of workers. Each frame is
//! fanned out to every live worker and collected by its own task under the
//! workers' deadlines, so a slow worker never holds back later frames.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinSet;

use super::registry::{Registry, RegistryError};
use super::stats::StatsCollector;
use crate::protocol::{
    decode_message, encode_message, read_envelope, AnnotationSet, AnnotationStatus, ErrorCode, ErrorMessage,
    GatewayStats, Message, WorkerRegister, WorkerResult, WorkerTiming,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub listen_addr: String,
    pub default_deadline_ms: u64,
    pub stats_log: Option<PathBuf>,
    pub heartbeat_interval: Duration,
    pub missed_heartbeats: u32,
    /// Frames a worker may hold unanswered before it is skipped.
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1:7401".into(),
            default_deadline_ms: 100,
            stats_log: None,
            heartbeat_interval: Duration::from_secs(1),
            missed_heartbeats: 3,
            max_in_flight: 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid gateway configuration: {0}")]
    Config(String),
}

type Outbox = mpsc::UnboundedSender<Arc<Vec<u8>>>;

struct Reply {
    worker_id: String,
    at: Instant,
    result: WorkerResult,
}

struct Client {
    outbox: Outbox,
    closed: AtomicBool,
}

struct Shared {
    cfg: GatewayConfig,
    registry: Mutex<Registry<Outbox>>,
    stats: Mutex<StatsCollector>,
    pending: Mutex<HashMap<u64, mpsc::UnboundedSender<Reply>>>,
    client_active: AtomicBool,
}

impl Shared {
    fn snapshot(&self) -> GatewayStats {
        let reg = self.registry.lock();
        let live: Vec<String> = reg.iter().map(|e| e.descriptor.worker_id.clone()).collect();
        let evicted = reg.evicted();
        drop(reg);
        self.stats.lock().snapshot(live.iter().map(String::as_str), evicted)
    }

    fn log_stats(&self) {
        let Some(path) = &self.cfg.stats_log else { return };
        let line = serde_json::to_string(&self.snapshot()).expect("stats serialize");
        let res = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = res {
            log::warn!("cannot append stats to {}: {e}", path.display());
        }
    }
}

fn encoded(msg: &Message) -> Arc<Vec<u8>> {
    Arc::new(encode_message(msg).expect("gateway messages satisfy their invariants"))
}

fn error_msg(code: ErrorCode, message: impl Into<String>, frame_id: Option<u64>) -> Arc<Vec<u8>> {
    encoded(&Message::Error(ErrorMessage { code, message: message.into(), frame_id }))
}

/// Drains `rx` onto the socket, one `write_all` per envelope.
async fn write_loop(mut wr: OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<Arc<Vec<u8>>>) {
    while let Some(bytes) = rx.recv().await {
        if let Err(e) = wr.write_all(&bytes).await {
            log::debug!("write failed: {e}");
            break;
        }
    }
    let _ = wr.shutdown().await;
}

/// A running gateway; dropping it without [`Gateway::shutdown`] leaves the
/// background tasks running until the runtime stops.
pub struct Gateway {
    shared: Arc<Shared>,
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: tokio::task::JoinHandle<()>,
}

impl Gateway {
    pub async fn bind(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        if cfg.default_deadline_ms == 0 || cfg.max_in_flight == 0 || cfg.missed_heartbeats == 0 || cfg.heartbeat_interval.is_zero() {
            return Err(GatewayError::Config(
                "deadline, in-flight cap, heartbeat interval and miss count must be positive".into(),
            ));
        }
        let listener = TcpListener::bind(&cfg.listen_addr)
            .await
            .map_err(|source| GatewayError::Bind { addr: cfg.listen_addr.clone(), source })?;
        let addr = listener.local_addr().map_err(|source| GatewayError::Bind { addr: cfg.listen_addr.clone(), source })?;
        let shared = Arc::new(Shared {
            registry: Mutex::new(Registry::new(cfg.heartbeat_interval, cfg.missed_heartbeats)),
            stats: Mutex::new(StatsCollector::default()),
            pending: Mutex::new(HashMap::new()),
            client_active: AtomicBool::new(false),
            cfg,
        });
        let (stop, stop_rx) = watch::channel(false);
        let task = tokio::spawn(accept_loop(shared.clone(), listener, stop_rx));
        log::info!("gateway listening on {addr}");
        Ok(Self { shared, addr, stop, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Consistent counters; takes each lock only briefly.
    pub fn stats(&self) -> GatewayStats {
        self.shared.snapshot()
    }

    /// Closes all connections and returns the final stats.
    pub async fn shutdown(self) -> GatewayStats {
        let _ = self.stop.send(true);
        let _ = self.task.await;
        self.shared.registry.lock().drain();
        self.shared.log_stats();
        self.shared.snapshot()
    }
}

async fn accept_loop(shared: Arc<Shared>, listener: TcpListener, mut stop: watch::Receiver<bool>) {
    let mut conns = JoinSet::new();
    let tick = (shared.cfg.heartbeat_interval / 4).max(Duration::from_millis(10));
    let mut ticker = tokio::time::interval(tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut last_log = Instant::now();
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    conns.spawn(handle_connection(shared.clone(), stream, peer));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            _ = ticker.tick() => {
                let now = Instant::now();
                for gone in shared.registry.lock().evict_stale(now) {
                    log::warn!("evicted silent worker {}", gone.descriptor.worker_id);
                }
                if now.duration_since(last_log) >= shared.cfg.heartbeat_interval {
                    last_log = now;
                    shared.log_stats();
                }
            }
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    conns.shutdown().await;
}

async fn handle_connection(shared: Arc<Shared>, stream: TcpStream, peer: SocketAddr) {
    let _ = stream.set_nodelay(true);
    let (rd, wr) = stream.into_split();
    let (tx, rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(write_loop(wr, rx));
    // `dispatch` owns the last outbox sender, so the writer finishes and the
    // socket closes once it returns.
    dispatch(&shared, rd, tx, peer).await;
    let _ = writer.await;
}

async fn dispatch(shared: &Arc<Shared>, mut rd: OwnedReadHalf, tx: Outbox, peer: SocketAddr) {
    loop {
        let raw = match read_envelope(&mut rd).await {
            Ok(Some(raw)) => raw,
            Ok(None) => break,
            Err(e) => {
                log::debug!("{peer}: {e}");
                let _ = tx.send(error_msg(ErrorCode::Protocol, e.to_string(), None));
                break;
            }
        };
        match decode_message(&raw) {
            Ok(Message::WorkerRegister(reg)) => {
                serve_worker(shared, reg, rd, tx).await;
                break;
            }
            Ok(Message::Frame(frame)) => {
                if shared.client_active.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
                    let _ = tx.send(error_msg(ErrorCode::ClientBusy, "another client is connected", Some(frame.frame_id)));
                    break;
                }
                let client = Arc::new(Client { outbox: tx, closed: AtomicBool::new(false) });
                route_frame(shared, &client, frame.frame_id, Arc::new(raw));
                serve_client(shared, &client, rd).await;
                client.closed.store(true, Ordering::Release);
                shared.client_active.store(false, Ordering::Release);
                break;
            }
            Ok(Message::StatsRequest(_)) => {
                let _ = tx.send(encoded(&Message::StatsReport(shared.snapshot())));
            }
            Ok(Message::Heartbeat(_)) => {}
            Ok(other) => {
                let _ = tx.send(error_msg(ErrorCode::Protocol, format!("unexpected {:?}", other.msg_type()), None));
                break;
            }
            Err(e) => {
                let _ = tx.send(error_msg(ErrorCode::Protocol, e.to_string(), None));
                break;
            }
        }
    }
}

async fn serve_worker(shared: &Arc<Shared>, reg: WorkerRegister, mut rd: OwnedReadHalf, tx: Outbox) {
    let id = reg.worker_id.clone();
    let registered = shared.registry.lock().register(&reg, shared.cfg.default_deadline_ms, tx.clone(), Instant::now());
    let session = match registered {
        Ok(s) => s,
        Err(e) => {
            let code = match e {
                RegistryError::Duplicate(_) => ErrorCode::DuplicateWorker,
                RegistryError::Malformed(_) => ErrorCode::MalformedDescriptor,
            };
            log::warn!("rejected worker {id:?}: {e}");
            let _ = tx.send(error_msg(code, e.to_string(), None));
            return;
        }
    };
    shared.stats.lock().worker_seen(&id, reg.kind);
    let ack = WorkerRegister {
        deadline_ms: Some(reg.deadline_ms.unwrap_or(shared.cfg.default_deadline_ms)),
        session_id: Some(session.to_string()),
        ..reg
    };
    let _ = tx.send(encoded(&Message::WorkerRegister(ack)));
    // The registry holds the only other sender; evicting the worker closes
    // the socket once this one is gone.
    drop(tx);
    log::info!("worker {id} registered (session {session})");
    loop {
        let msg = match read_envelope(&mut rd).await {
            Ok(Some(raw)) => decode_message(&raw),
            Ok(None) => break,
            Err(e) => {
                log::warn!("worker {id}: {e}");
                break;
            }
        };
        let at = Instant::now();
        let alive = shared.registry.lock().touch(&id, session, at);
        if !alive {
            log::warn!("worker {id} session {session} is no longer registered");
            break;
        }
        match msg {
            Ok(Message::WorkerResult(result)) => {
                shared.registry.lock().complete_one(&id, session);
                if result.worker_id != id {
                    log::warn!("worker {id} sent a result labelled {:?}", result.worker_id);
                }
                let frame_id = result.frame_id;
                let pending = shared.pending.lock().get(&frame_id).cloned();
                match pending {
                    Some(p) => {
                        let _ = p.send(Reply { worker_id: id.clone(), at, result });
                    }
                    None => log::debug!("late result from {id} for frame {frame_id}"),
                }
            }
            Ok(Message::Heartbeat(_)) => {}
            Ok(other) => log::warn!("worker {id} sent unexpected {:?}", other.msg_type()),
            Err(e) => log::warn!("worker {id} sent a malformed message: {e}"),
        }
    }
    shared.registry.lock().remove(&id, session);
    log::info!("worker {id} disconnected");
}

async fn serve_client(shared: &Arc<Shared>, client: &Arc<Client>, mut rd: OwnedReadHalf) {
    loop {
        let raw = match read_envelope(&mut rd).await {
            Ok(Some(raw)) => raw,
            Ok(None) => break,
            Err(e) => {
                log::warn!("client: {e}");
                let _ = client.outbox.send(error_msg(ErrorCode::Protocol, e.to_string(), None));
                break;
            }
        };
        match decode_message(&raw) {
            Ok(Message::Frame(frame)) => route_frame(shared, client, frame.frame_id, Arc::new(raw)),
            Ok(Message::StatsRequest(_)) => {
                let _ = client.outbox.send(encoded(&Message::StatsReport(shared.snapshot())));
            }
            Ok(Message::Heartbeat(_)) => {}
            Ok(other) => {
                let _ = client.outbox.send(error_msg(ErrorCode::Protocol, format!("unexpected {:?}", other.msg_type()), None));
            }
            // Framing is intact, so the connection survives a bad message.
            Err(e) => {
                let _ = client.outbox.send(error_msg(ErrorCode::Protocol, e.to_string(), None));
            }
        }
    }
}

struct Target {
    worker_id: String,
    deadline: Duration,
}

/// Fans one frame out. Never blocks: the collection runs in its own task.
fn route_frame(shared: &Arc<Shared>, client: &Arc<Client>, frame_id: u64, raw: Arc<Vec<u8>>) {
    let start = Instant::now();
    let (tx, rx) = mpsc::unbounded_channel();
    {
        let mut pending = shared.pending.lock();
        if pending.contains_key(&frame_id) {
            let _ = client.outbox.send(error_msg(ErrorCode::DuplicateFrame, "frame id is still in flight", Some(frame_id)));
            return;
        }
        pending.insert(frame_id, tx);
    }
    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    let no_workers = {
        let mut reg = shared.registry.lock();
        for e in reg.iter_mut() {
            let id = &e.descriptor.worker_id;
            if e.in_flight >= shared.cfg.max_in_flight {
                skipped.push(id.clone());
            } else if e.link.send(raw.clone()).is_ok() {
                e.in_flight += 1;
                targets.push(Target { worker_id: id.clone(), deadline: Duration::from_millis(e.descriptor.deadline_ms) });
            } else {
                skipped.push(id.clone());
            }
        }
        reg.is_empty()
    };
    if targets.is_empty() {
        shared.pending.lock().remove(&frame_id);
        let msg = if no_workers {
            error_msg(ErrorCode::NoWorkers, "no workers are registered", Some(frame_id))
        } else {
            shared.stats.lock().frame_dropped();
            error_msg(ErrorCode::FrameDropped, "all workers are saturated", Some(frame_id))
        };
        let _ = client.outbox.send(msg);
        return;
    }
    shared.stats.lock().frame_routed();
    tokio::spawn(collect(shared.clone(), client.clone(), frame_id, start, targets, skipped, rx));
}

/// Waits for each target until its own deadline and emits exactly one
/// annotation set for the frame.
async fn collect(
    shared: Arc<Shared>,
    client: Arc<Client>,
    frame_id: u64,
    start: Instant,
    targets: Vec<Target>,
    mut missing: Vec<String>,
    mut rx: mpsc::UnboundedReceiver<Reply>,
) {
    let mut outstanding: BTreeMap<String, Duration> = targets.into_iter().map(|t| (t.worker_id, t.deadline)).collect();
    let mut accepted: Vec<(String, u64, WorkerResult)> = Vec::new();
    let mut timed_out = Vec::new();
    while !outstanding.is_empty() {
        let next = *outstanding.values().min().expect("nonempty");
        let wake = tokio::time::Instant::from_std(start + next);
        tokio::select! {
            reply = rx.recv() => {
                let Some(reply) = reply else { break };
                let Some(deadline) = outstanding.remove(&reply.worker_id) else { continue };
                let latency = reply.at.saturating_duration_since(start);
                if latency <= deadline {
                    accepted.push((reply.worker_id, latency.as_nanos() as u64, reply.result));
                } else {
                    timed_out.push(reply.worker_id);
                }
            }
            _ = tokio::time::sleep_until(wake) => {
                let elapsed = start.elapsed();
                let expired: Vec<String> =
                    outstanding.iter().filter(|(_, d)| **d <= elapsed).map(|(id, _)| id.clone()).collect();
                for id in expired {
                    outstanding.remove(&id);
                    timed_out.push(id);
                }
            }
        }
    }
    shared.pending.lock().remove(&frame_id);
    timed_out.extend(outstanding.into_keys());

    accepted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut set = AnnotationSet {
        frame_id,
        detections: Vec::new(),
        poses: Vec::new(),
        readings: Vec::new(),
        worker_timings: Vec::new(),
        status: AnnotationStatus::Complete,
        missing_workers: Vec::new(),
    };
    let mut succeeded = 0;
    let mut errored = 0;
    for (worker_id, latency_ns, result) in accepted {
        set.worker_timings.push(WorkerTiming { worker_id: worker_id.clone(), latency_ns });
        match result.error {
            Some(e) => {
                log::warn!("worker {worker_id} failed frame {frame_id}: {e}");
                errored += 1;
                missing.push(worker_id);
            }
            None => {
                succeeded += 1;
                set.detections.extend(result.detections);
                set.poses.extend(result.poses);
                set.readings.extend(result.readings);
            }
        }
    }
    missing.extend(timed_out.iter().cloned());
    missing.sort();
    set.status = if missing.is_empty() {
        AnnotationStatus::Complete
    } else if succeeded == 0 && errored > 0 {
        AnnotationStatus::Failed
    } else {
        AnnotationStatus::Partial
    };
    set.missing_workers = missing;
    {
        let mut stats = shared.stats.lock();
        for t in &set.worker_timings {
            stats.reply(&t.worker_id, t.latency_ns);
        }
        for id in &timed_out {
            stats.timeout(id);
        }
        if client.closed.load(Ordering::Acquire) {
            stats.frame_dropped();
        } else {
            stats.frame_finished(set.status);
        }
    }
    let bytes = match encode_message(&Message::AnnotationSet(set)) {
        Ok(b) => Arc::new(b),
        Err(e) => {
            log::error!("frame {frame_id}: cannot encode annotations: {e}");
            error_msg(ErrorCode::Internal, e.to_string(), Some(frame_id))
        }
    };
    if !client.closed.load(Ordering::Acquire) {
        let _ = client.outbox.send(bytes);
    }
}
