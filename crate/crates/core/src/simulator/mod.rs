//! Headset simulator: manifest-driven frame replay with round-trip
//! measurement, and mock workers serving manifest ground truth.

pub mod manifest;
pub mod mock;
pub mod noise;
pub mod replay;

use thiserror::Error;

pub use manifest::{GroundTruth, ManifestFrame, ManifestObject, SequenceManifest, MANIFEST_FILE};
pub use mock::{run_mock_worker, MockResponder, MockWorkerConfig, MockWorkerSummary};
pub use noise::{BoxJitter, NoiseSpec, PoseJitter, TextCorruption};
pub use replay::{replay, FrameOutcome, FrameRecord, LatencyReport, ReplayConfig, ReplayTiming};

use crate::protocol::ReadError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot connect to gateway at {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("gateway rejected the request: {0}")]
    Rejected(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ReadError> for SimError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Io(e) => SimError::Io(e),
            ReadError::Decode(e) => SimError::Protocol(e.to_string()),
        }
    }
}
