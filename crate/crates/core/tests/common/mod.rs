//! Helpers shared by the integration tests: random message generators,
//! brute-force reference implementations and loopback network fixtures.
#![allow(dead_code)]

pub mod gen;
pub mod net;
pub mod oracles;

use std::sync::{Mutex, MutexGuard};

static TIMING: Mutex<()> = Mutex::new(());

/// Serializes tests whose assertions depend on wall-clock timing, so they
/// do not compete for the CPU.
pub fn timing_lock() -> MutexGuard<'static, ()> {
    TIMING.lock().unwrap_or_else(|e| e.into_inner())
}
