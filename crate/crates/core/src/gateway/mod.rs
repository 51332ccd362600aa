//! Frame-routing broker between the headset client and the workers.

pub mod registry;
mod server;
pub mod stats;

pub use registry::{Registry, RegistryError, WorkerDescriptor, WorkerEntry};
pub use server::{Gateway, GatewayConfig, GatewayError};
pub use stats::StatsCollector;
