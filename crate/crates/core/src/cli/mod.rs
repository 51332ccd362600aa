//! Command-line front end: one binary, one subcommand per pipeline stage.

pub mod eval;

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_config, Config, Overrides, DEFAULT_CONFIG_PATH};
use crate::gateway::{Gateway, GatewayConfig};
use crate::geometry::{gen_fixture_scene, pnp_solve_with, CorrespondenceSet, PnpOptions, SceneSpec};
use crate::protocol::{read_message, write_message, CameraIntrinsics, Message, StatsRequest, Validate, WorkerKind};
use crate::samal::dataset::{label_directories, DatasetConfig};
use crate::samal::ClassMap;
use crate::simulator::{replay, run_mock_worker, MockResponder, MockWorkerConfig, NoiseSpec, ReplayConfig, SequenceManifest};

#[derive(Debug, Parser)]
#[command(name = "ai4ar", version, about = "AR assembly-assistance pipeline: gateway, simulator, metrics and auto-labeling")]
pub struct Cli {
    /// Configuration file; a missing file means built-in defaults.
    #[arg(long, global = true, default_value = DEFAULT_CONFIG_PATH)]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the frame-routing gateway.
    Serve(ServeArgs),
    /// Replay a frame sequence through the gateway and report round trips.
    Replay(ReplayArgs),
    /// Serve manifest ground truth as a detection, pose or OCR worker.
    MockWorker(MockWorkerArgs),
    /// Detection precision/recall, AP and mAP.
    EvalDet(eval::EvalDetArgs),
    /// 6D-pose accuracy under ADD / ADD-S.
    EvalPose(eval::EvalPoseArgs),
    /// Pose accuracy under randomly perturbed initial boxes.
    PerturbStudy(eval::PerturbStudyArgs),
    /// OCR recognition and detection+recognition pipeline accuracy.
    EvalOcr(eval::EvalOcrArgs),
    /// Convert object masks into a YOLO dataset.
    Label(LabelArgs),
    /// Solve an object pose from 2D-3D correspondences.
    PnpAnnotate(PnpArgs),
    /// Generate a synthetic scene with masks, poses and a manifest.
    SynthGen(SynthArgs),
    /// Fetch gateway statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address [default: gateway.listen_addr = 127.0.0.1:7401]
    #[arg(long)]
    pub listen: Option<String>,
    /// Worker deadline when a worker does not declare one [default: gateway.default_deadline_ms = 100]
    #[arg(long)]
    pub deadline_ms: Option<u64>,
    /// Append a stats line per heartbeat interval to this JSONL file [default: gateway.stats_log, unset]
    #[arg(long)]
    pub stats_log: Option<PathBuf>,
    /// Unanswered frames per worker before it is skipped
    #[arg(long, default_value_t = 2)]
    pub max_in_flight: usize,
    /// Stop after this many seconds instead of waiting for Ctrl-C
    #[arg(long)]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Sequence directory containing manifest.json
    #[arg(long)]
    pub manifest: PathBuf,
    /// Frames per second [default: replay.fps = 30]
    #[arg(long)]
    pub fps: Option<f64>,
    /// Gateway address [default: gateway.listen_addr = 127.0.0.1:7401]
    #[arg(long)]
    pub gateway: Option<String>,
    /// Report file; standard output when omitted
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Seconds to wait for replies after the last frame
    #[arg(long, default_value_t = 2.0)]
    pub drain_s: f64,
}

#[derive(Debug, Args)]
pub struct MockWorkerArgs {
    /// detection, pose or ocr
    #[arg(long)]
    pub kind: WorkerKind,
    /// Sequence directory containing manifest.json
    #[arg(long)]
    pub manifest: PathBuf,
    /// Noise seed [default: config seed, else random and printed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise specification JSON; exact ground truth when omitted
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Gateway address [default: gateway.listen_addr = 127.0.0.1:7401]
    #[arg(long)]
    pub gateway: Option<String>,
    /// Worker id [default: <kind>-mock]
    #[arg(long)]
    pub worker_id: Option<String>,
    /// Declared deadline [default: the gateway's default]
    #[arg(long)]
    pub deadline_ms: Option<u64>,
    /// Artificial delay before each reply
    #[arg(long, default_value_t = 0)]
    pub delay_ms: u64,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Directory of <video>_<frame:06>_<object>.pgm masks
    #[arg(long)]
    pub masks: PathBuf,
    /// Directory of frame images (PGM/PPM)
    #[arg(long)]
    pub images: PathBuf,
    /// Class map JSON: {"classes": [...], "objects": [{"object_id", "class_id"}]}
    #[arg(long)]
    pub classes: PathBuf,
    /// Train fraction; the rest is validation
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Split seed [default: config seed, else random and printed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing output directory
    #[arg(long)]
    pub overwrite: bool,
    /// Manual annotation time for the speedup comparison, in minutes
    #[arg(long)]
    pub manual_minutes: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PnpArgs {
    /// {"points_3d": [[x,y,z],...], "points_2d": [[u,v],...]}
    #[arg(long)]
    pub corr: PathBuf,
    /// {"fx","fy","cx","cy","width","height"}
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Output file; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Object id stored in the pose
    #[arg(long, default_value_t = 0)]
    pub object_id: u32,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene specification JSON
    #[arg(long)]
    pub spec: PathBuf,
    /// Scene seed [default: config seed, else random and printed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Gateway address [default: gateway.listen_addr = 127.0.0.1:7401]
    #[arg(long)]
    pub gateway: Option<String>,
}

/// Flag value, else config, else a fresh random seed that is printed.
fn resolve_seed(flag: Option<u64>, cfg: &Config) -> u64 {
    flag.or(cfg.seed).unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        eprintln!("seed: {seed}");
        seed
    })
}

pub(crate) fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display())),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                // A closed pipe (e.g. `| head`) is the reader's choice, not a failure.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.context("cannot write to standard output"),
            }
        }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn load_effective(cli: &Cli, o: Overrides) -> Result<Config> {
    let cfg = load_config(&cli.config)?.with_overrides(&o)?;
    log::debug!("effective config: {}", serde_json::to_string(&cfg)?);
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Serve(a) => {
            let cfg = load_effective(
                &cli,
                Overrides {
                    listen_addr: a.listen.clone(),
                    default_deadline_ms: a.deadline_ms,
                    stats_log: a.stats_log.clone(),
                    ..Default::default()
                },
            )?;
            serve(&cfg, a)
        }
        Command::Replay(a) => {
            let cfg = load_effective(&cli, Overrides { fps: a.fps, listen_addr: a.gateway.clone(), ..Default::default() })?;
            let manifest = SequenceManifest::load(&a.manifest)?;
            let rc = ReplayConfig { fps: cfg.replay.fps, drain_timeout: Duration::from_secs_f64(a.drain_s.max(0.0)) };
            let report = runtime()?.block_on(replay(&manifest, &rc, &cfg.gateway.listen_addr))?;
            log::info!(
                "sent {} answered {} dropped {} p99 {:.3} ms, {:.2} fps",
                report.sent,
                report.answered,
                report.dropped,
                report.timing.p99_ns as f64 / 1e6,
                report.timing.achieved_fps
            );
            write_json(a.report.as_deref(), &report)
        }
        Command::MockWorker(a) => {
            let cfg = load_effective(&cli, Overrides { listen_addr: a.gateway.clone(), ..Default::default() })?;
            let manifest = SequenceManifest::load(&a.manifest)?;
            let noise = match &a.noise {
                Some(p) => NoiseSpec::load(p)?,
                None => NoiseSpec::none(),
            };
            let seed = resolve_seed(a.seed, &cfg);
            let id = a.worker_id.clone().unwrap_or_else(|| format!("{}-mock", a.kind));
            let responder = MockResponder::new(id, a.kind, &manifest, seed, noise);
            let wc = MockWorkerConfig {
                deadline_ms: a.deadline_ms,
                reply_delay: Duration::from_millis(a.delay_ms),
                ..Default::default()
            };
            let summary = runtime()?.block_on(run_mock_worker(responder, wc, &cfg.gateway.listen_addr))?;
            log::info!("worker done: {} frames, {} unknown", summary.frames, summary.unknown_frames);
            Ok(())
        }
        Command::EvalDet(a) => eval::eval_det(&cli, a),
        Command::EvalPose(a) => eval::eval_pose(&cli, a),
        Command::PerturbStudy(a) => eval::perturb_study(&cli, a),
        Command::EvalOcr(a) => eval::eval_ocr(&cli, a),
        Command::Label(a) => {
            let cfg = load_effective(&cli, Overrides::default())?;
            let classes = ClassMap::load(&a.classes)?;
            let dc = DatasetConfig {
                out: a.out.clone(),
                classes: classes.classes.clone(),
                train_fraction: a.split,
                seed: resolve_seed(a.seed, &cfg),
                overwrite: a.overwrite,
                manual_baseline_minutes: a.manual_minutes,
            };
            let (manifest, timing) = label_directories(&a.masks, &a.images, &classes, &dc)?;
            for w in &manifest.warnings {
                log::warn!("{w}");
            }
            log::info!("{} train / {} val frames", manifest.train.len(), manifest.val.len());
            write_json(None, &timing)
        }
        Command::PnpAnnotate(a) => {
            #[derive(serde::Deserialize)]
            #[serde(deny_unknown_fields)]
            struct CorrJson {
                points_3d: Vec<[f64; 3]>,
                points_2d: Vec<[f64; 2]>,
            }
            let corr: CorrJson = read_json(&a.corr)?;
            let k: CameraIntrinsics = read_json(&a.intrinsics)?;
            k.validate().map_err(anyhow::Error::msg).context("invalid intrinsics")?;
            let set = CorrespondenceSet::new(
                corr.points_3d.into_iter().map(Into::into).collect(),
                corr.points_2d.into_iter().map(Into::into).collect(),
                k,
            )?;
            let sol = pnp_solve_with(&set, &PnpOptions { object_id: a.object_id, ..Default::default() })?;
            log::info!("reprojection rms {:.4} px after {} iterations", sol.reprojection_rms, sol.iterations);
            write_json(a.out.as_deref(), &sol)
        }
        Command::SynthGen(a) => {
            let cfg = load_effective(&cli, Overrides::default())?;
            let spec: SceneSpec = read_json(&a.spec)?;
            let seed = resolve_seed(a.seed, &cfg);
            let scene = gen_fixture_scene(&spec, seed)?;
            scene.write(&a.out)?;
            log::info!("wrote {} frames to {}", scene.frames.len(), a.out.display());
            Ok(())
        }
        Command::Stats(a) => {
            let cfg = load_effective(&cli, Overrides { listen_addr: a.gateway.clone(), ..Default::default() })?;
            let stats = runtime()?.block_on(fetch_stats(&cfg.gateway.listen_addr))?;
            write_json(None, &stats)
        }
    }
}

fn serve(cfg: &Config, a: &ServeArgs) -> Result<()> {
    let gc = GatewayConfig {
        listen_addr: cfg.gateway.listen_addr.clone(),
        default_deadline_ms: cfg.gateway.default_deadline_ms,
        stats_log: cfg.gateway.stats_log.clone(),
        max_in_flight: a.max_in_flight,
        ..Default::default()
    };
    let duration = a.duration_s.map(Duration::from_secs_f64);
    let stats = runtime()?.block_on(async move {
        let gw = Gateway::bind(gc).await?;
        eprintln!("listening on {}", gw.local_addr());
        match duration {
            Some(d) => tokio::time::sleep(d).await,
            None => tokio::signal::ctrl_c().await?,
        }
        Ok::<_, anyhow::Error>(gw.shutdown().await)
    })?;
    write_json(None, &stats)
}

async fn fetch_stats(addr: &str) -> Result<crate::protocol::GatewayStats> {
    let mut s = tokio::net::TcpStream::connect(addr).await.with_context(|| format!("cannot connect to {addr}"))?;
    write_message(&mut s, &Message::StatsRequest(StatsRequest {})).await?;
    match read_message(&mut s).await? {
        Some(Message::StatsReport(stats)) => Ok(stats),
        Some(Message::Error(e)) => bail!("gateway error {:?}: {}", e.code, e.message),
        other => bail!("unexpected reply {other:?}"),
    }
}
