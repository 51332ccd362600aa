//! Live-worker bookkeeping. Time is passed in explicitly so liveness can be
//! tested with a fake clock.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::protocol::{Validate, WorkerKind, WorkerRegister};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("worker {0:?} is already live")]
    Duplicate(String),
    #[error("malformed worker descriptor: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerDescriptor {
    pub worker_id: String,
    pub kind: WorkerKind,
    pub deadline_ms: u64,
    pub last_heartbeat: Instant,
}

#[derive(Debug)]
pub struct WorkerEntry<L> {
    pub descriptor: WorkerDescriptor,
    pub session: u64,
    pub link: L,
    /// Frames sent to the worker and not yet answered.
    pub in_flight: usize,
}

/// Registered workers keyed by id. `L` is the per-worker send handle.
#[derive(Debug)]
pub struct Registry<L> {
    workers: BTreeMap<String, WorkerEntry<L>>,
    heartbeat_interval: Duration,
    missed_heartbeats: u32,
    next_session: u64,
    evicted: u64,
}

impl<L> Registry<L> {
    pub fn new(heartbeat_interval: Duration, missed_heartbeats: u32) -> Self {
        Self { workers: BTreeMap::new(), heartbeat_interval, missed_heartbeats, next_session: 1, evicted: 0 }
    }

    /// Adds a worker and returns its session id. An id that is already
    /// live is rejected and the existing worker is left untouched.
    pub fn register(&mut self, reg: &WorkerRegister, default_deadline_ms: u64, link: L, now: Instant) -> Result<u64, RegistryError> {
        reg.validate().map_err(RegistryError::Malformed)?;
        if reg.session_id.is_some() {
            return Err(RegistryError::Malformed("registration must not carry a session id".into()));
        }
        if default_deadline_ms == 0 && reg.deadline_ms.is_none() {
            return Err(RegistryError::Malformed("deadline_ms must be positive".into()));
        }
        if self.workers.contains_key(&reg.worker_id) {
            return Err(RegistryError::Duplicate(reg.worker_id.clone()));
        }
        let session = self.next_session;
        self.next_session += 1;
        let descriptor = WorkerDescriptor {
            worker_id: reg.worker_id.clone(),
            kind: reg.kind,
            deadline_ms: reg.deadline_ms.unwrap_or(default_deadline_ms),
            last_heartbeat: now,
        };
        self.workers.insert(reg.worker_id.clone(), WorkerEntry { descriptor, session, link, in_flight: 0 });
        Ok(session)
    }

    fn entry_mut(&mut self, worker_id: &str, session: u64) -> Option<&mut WorkerEntry<L>> {
        self.workers.get_mut(worker_id).filter(|e| e.session == session)
    }

    /// Records liveness; false when the session is no longer registered.
    pub fn touch(&mut self, worker_id: &str, session: u64, now: Instant) -> bool {
        match self.entry_mut(worker_id, session) {
            Some(e) => {
                e.descriptor.last_heartbeat = e.descriptor.last_heartbeat.max(now);
                true
            }
            None => false,
        }
    }

    /// Marks one in-flight frame of the worker as answered.
    pub fn complete_one(&mut self, worker_id: &str, session: u64) {
        if let Some(e) = self.entry_mut(worker_id, session) {
            e.in_flight = e.in_flight.saturating_sub(1);
        }
    }

    /// Removes the worker if `session` is still the registered one.
    pub fn remove(&mut self, worker_id: &str, session: u64) -> Option<WorkerEntry<L>> {
        self.entry_mut(worker_id, session)?;
        self.workers.remove(worker_id)
    }

    /// Evicts workers silent for `missed_heartbeats` intervals or more.
    pub fn evict_stale(&mut self, now: Instant) -> Vec<WorkerEntry<L>> {
        let limit = self.heartbeat_interval * self.missed_heartbeats;
        let stale: Vec<String> = self
            .workers
            .iter()
            .filter(|(_, e)| now.saturating_duration_since(e.descriptor.last_heartbeat) >= limit)
            .map(|(id, _)| id.clone())
            .collect();
        self.evicted += stale.len() as u64;
        stale.iter().filter_map(|id| self.workers.remove(id)).collect()
    }

    /// Removes every worker, e.g. on shutdown.
    pub fn drain(&mut self) -> Vec<WorkerEntry<L>> {
        std::mem::take(&mut self.workers).into_values().collect()
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn get(&self, worker_id: &str) -> Option<&WorkerEntry<L>> {
        self.workers.get(worker_id)
    }

    /// Workers in id order.
    pub fn iter(&self) -> impl Iterator<Item = &WorkerEntry<L>> {
        self.workers.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut WorkerEntry<L>> {
        self.workers.values_mut()
    }
}
