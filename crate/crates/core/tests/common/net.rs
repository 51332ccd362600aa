//! Loopback gateway fixtures: a scripted worker and a message-level client.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use ai4ar::gateway::{Gateway, GatewayConfig};
use ai4ar::protocol::*;
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

pub async fn start_gateway(tweak: impl FnOnce(&mut GatewayConfig)) -> Gateway {
    let mut cfg = GatewayConfig {
        listen_addr: "127.0.0.1:0".into(),
        heartbeat_interval: Duration::from_secs(60),
        ..Default::default()
    };
    tweak(&mut cfg);
    Gateway::bind(cfg).await.expect("gateway binds")
}

/// Bidirectional message connection; a reader task makes `recv` cancel-safe.
pub struct Conn {
    wr: tokio::net::tcp::OwnedWriteHalf,
    rx: mpsc::UnboundedReceiver<Message>,
}

impl Conn {
    pub async fn connect(addr: SocketAddr) -> Conn {
        let stream = TcpStream::connect(addr).await.expect("connect");
        stream.set_nodelay(true).ok();
        let (mut rd, wr) = stream.into_split();
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            while let Ok(Some(m)) = read_message(&mut rd).await {
                if tx.send(m).is_err() {
                    break;
                }
            }
        });
        Conn { wr, rx }
    }

    pub async fn send(&mut self, msg: &Message) {
        write_message(&mut self.wr, msg).await.expect("send");
    }

    /// Next message, or `None` on timeout or closed connection.
    pub async fn recv(&mut self, within: Duration) -> Option<Message> {
        tokio::time::timeout(within, self.rx.recv()).await.ok().flatten()
    }

    /// Every message arriving until `quiet` passes without one.
    pub async fn drain(&mut self, quiet: Duration) -> Vec<Message> {
        let mut out = Vec::new();
        while let Some(m) = self.recv(quiet).await {
            out.push(m);
        }
        out
    }
}

pub fn tiny_frame(frame_id: u64) -> Message {
    Message::Frame(Frame {
        frame_id,
        timestamp_ns: frame_id * 1_000,
        intrinsics: CameraIntrinsics::new(100.0, 100.0, 2.0, 2.0, 4, 4),
        head_pose: None,
        pixels: PixelBuffer { format: PixelFormat::Gray8, data: vec![7; 16] },
    })
}

pub type Behavior = Arc<dyn Fn(u64) -> (Duration, WorkerResult) + Send + Sync>;

/// Worker that answers every frame concurrently after a scripted delay.
pub struct ScriptedWorker {
    pub ack: WorkerRegister,
    pub task: JoinHandle<()>,
}

pub async fn scripted_worker(
    addr: SocketAddr,
    worker_id: &str,
    kind: WorkerKind,
    deadline_ms: Option<u64>,
    behavior: Behavior,
) -> ScriptedWorker {
    let mut conn = Conn::connect(addr).await;
    conn.send(&Message::WorkerRegister(WorkerRegister { worker_id: worker_id.into(), kind, deadline_ms, session_id: None }))
        .await;
    let ack = match conn.recv(Duration::from_secs(5)).await {
        Some(Message::WorkerRegister(ack)) => ack,
        other => panic!("expected registration ack, got {other:?}"),
    };
    let Conn { mut wr, mut rx } = conn;
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            if write_message(&mut wr, &m).await.is_err() {
                break;
            }
        }
    });
    let task = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            if let Message::Frame(f) = m {
                let (delay, result) = behavior(f.frame_id);
                let out = out_tx.clone();
                tokio::spawn(async move {
                    tokio::time::sleep(delay).await;
                    let _ = out.send(Message::WorkerResult(result));
                });
            }
        }
        drop(out_tx);
        let _ = writer.await;
    });
    ScriptedWorker { ack, task }
}

/// Behavior replying immediately with one detection tagged by worker.
pub fn echo(worker_id: &'static str, delay: Duration) -> Behavior {
    Arc::new(move |frame_id| {
        let mut r = WorkerResult::empty(worker_id, frame_id);
        r.detections.push(Detection {
            bbox: BBox::new(frame_id as f64, 0.0, 1.0, 1.0),
            class_id: 0,
            class_name: worker_id.into(),
            confidence: 1.0,
        });
        (delay, r)
    })
}

/// Waits until the gateway reports `n` live workers.
pub async fn wait_for_workers(gw: &Gateway, n: u64) {
    for _ in 0..500 {
        if gw.stats().live_workers == n {
            return;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("gateway never reached {n} live workers: {:?}", gw.stats());
}
