//! Computer-side pipeline for AR-assisted assembly: a frame-routing gateway
//! with a headset simulator and mock workers, evaluation metrics for
//! detection, 6D pose and OCR, and a mask-to-YOLO auto-labeler.

pub mod cli;
pub mod config;
pub mod gateway;
pub mod geometry;
pub mod metrics;
pub mod pnm;
pub mod protocol;
pub mod quantile;
pub mod samal;
pub mod simulator;
