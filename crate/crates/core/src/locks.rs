//! Consistency models, scope lock planning, and the per-vertex
//! readers-writer lock table used by the locking engine.
//!
//! A scope acquisition never deadlocks because every plan lists its locks in
//! ascending vertex id and the engine acquires them strictly in that order:
//! a chain waiting on vertex v holds only locks with id < v, so the waits-for
//! relation cannot cycle.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::VertexId;

/// How much of a scope an update function may mutate, and therefore which
/// locks the locking engine must plan.
///
/// * `Full` — read/write the center vertex, its neighbors, and incident
///   edges. Plans an exclusive lock on every vertex of the scope.
/// * `Edge` — read/write the center vertex and incident edges; neighbor
///   vertex data is read-only. Plans exclusive on the center, shared on
///   neighbors.
/// * `Vertex` — read/write the center vertex only; everything else in the
///   scope is read-only. Plans exclusive on the center alone.
/// * `None` — no coordination at all. Writes are mask-checked as `Full` but
///   no locks are planned, so concurrent updates race. Runs must opt in
///   explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyModel {
    Full,
    Edge,
    Vertex,
    None,
}

impl ConsistencyModel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(ConsistencyModel::Full),
            "edge" => Some(ConsistencyModel::Edge),
            "vertex" => Some(ConsistencyModel::Vertex),
            "none" => Some(ConsistencyModel::None),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ConsistencyModel::Full => "full",
            ConsistencyModel::Edge => "edge",
            ConsistencyModel::Vertex => "vertex",
            ConsistencyModel::None => "none",
        }
    }
}

impl fmt::Display for ConsistencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LockMode {
    Shared,
    Exclusive,
}

impl LockMode {
    fn compatible_with_holders(self, holders: &[(Holder, LockMode)]) -> bool {
        match self {
            LockMode::Exclusive => holders.is_empty(),
            LockMode::Shared => holders.iter().all(|(_, m)| *m == LockMode::Shared),
        }
    }
}

/// Identity of a lock holder: the requesting machine and its scope ticket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Holder {
    pub machine: u32,
    pub ticket: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LockError {
    #[error("release of vertex {vertex} by machine {machine} ticket {ticket} which holds no lock")]
    DoubleRelease { vertex: VertexId, machine: u32, ticket: u64 },
    #[error("duplicate request for vertex {vertex} by machine {machine} ticket {ticket}")]
    DuplicateRequest { vertex: VertexId, machine: u32, ticket: u64 },
}

/// Locks required for one scope under the given model, in ascending vertex
/// order. `neighbors` must be sorted ascending and exclude the center.
pub fn plan_locks(
    center: VertexId,
    neighbors: &[VertexId],
    model: ConsistencyModel,
) -> Vec<(VertexId, LockMode)> {
    debug_assert!(neighbors.windows(2).all(|w| w[0] < w[1]));
    let mut plan = Vec::with_capacity(neighbors.len() + 1);
    match model {
        ConsistencyModel::None => {}
        ConsistencyModel::Vertex => plan.push((center, LockMode::Exclusive)),
        ConsistencyModel::Edge => {
            for &u in neighbors {
                plan.push((u, LockMode::Shared));
            }
            plan.push((center, LockMode::Exclusive));
            plan.sort_by_key(|(v, _)| *v);
        }
        ConsistencyModel::Full => {
            for &u in neighbors {
                plan.push((u, LockMode::Exclusive));
            }
            plan.push((center, LockMode::Exclusive));
            plan.sort_by_key(|(v, _)| *v);
        }
    }
    plan
}

#[derive(Debug, PartialEq, Eq)]
pub enum RequestOutcome {
    Granted,
    Queued,
}

#[derive(Debug, Default)]
struct VertexLock {
    holders: Vec<(Holder, LockMode)>,
    queue: VecDeque<(Holder, LockMode)>,
}

/// Per-vertex readers-writer locks with a strict arrival-order queue.
///
/// A request is granted immediately only when it is compatible with the
/// current holders and nothing is queued ahead of it; otherwise it waits its
/// turn. On release, the queue is drained head-first while the head stays
/// compatible, which grants consecutive shared requests as one batch.
#[derive(Debug, Default)]
pub struct LockTable {
    locks: BTreeMap<VertexId, VertexLock>,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn request(
        &mut self,
        vertex: VertexId,
        mode: LockMode,
        holder: Holder,
    ) -> Result<RequestOutcome, LockError> {
        let entry = self.locks.entry(vertex).or_default();
        let already = entry.holders.iter().any(|(h, _)| *h == holder)
            || entry.queue.iter().any(|(h, _)| *h == holder);
        if already {
            return Err(LockError::DuplicateRequest {
                vertex,
                machine: holder.machine,
                ticket: holder.ticket,
            });
        }
        if entry.queue.is_empty() && mode.compatible_with_holders(&entry.holders) {
            entry.holders.push((holder, mode));
            Ok(RequestOutcome::Granted)
        } else {
            entry.queue.push_back((holder, mode));
            Ok(RequestOutcome::Queued)
        }
    }

    /// Releases `holder`'s grant on `vertex` and returns the requests that
    /// become granted as a result, in queue order.
    pub fn release(
        &mut self,
        vertex: VertexId,
        holder: Holder,
    ) -> Result<Vec<(Holder, LockMode)>, LockError> {
        let entry = self.locks.get_mut(&vertex).ok_or(LockError::DoubleRelease {
            vertex,
            machine: holder.machine,
            ticket: holder.ticket,
        })?;
        let idx = entry
            .holders
            .iter()
            .position(|(h, _)| *h == holder)
            .ok_or(LockError::DoubleRelease {
                vertex,
                machine: holder.machine,
                ticket: holder.ticket,
            })?;
        entry.holders.remove(idx);
        let mut granted = Vec::new();
        while let Some((_, mode)) = entry.queue.front() {
            if mode.compatible_with_holders(&entry.holders) {
                let (h, m) = entry.queue.pop_front().unwrap();
                entry.holders.push((h, m));
                granted.push((h, m));
            } else {
                break;
            }
        }
        if entry.holders.is_empty() && entry.queue.is_empty() {
            self.locks.remove(&vertex);
        }
        Ok(granted)
    }

    pub fn holders(&self, vertex: VertexId) -> Vec<(Holder, LockMode)> {
        self.locks.get(&vertex).map(|e| e.holders.clone()).unwrap_or_default()
    }

    pub fn queue_len(&self, vertex: VertexId) -> usize {
        self.locks.get(&vertex).map(|e| e.queue.len()).unwrap_or(0)
    }

    /// True when no lock is held or queued anywhere.
    pub fn is_idle(&self) -> bool {
        self.locks.is_empty()
    }

    /// Grant-state invariant: a vertex is held either by any number of
    /// shared holders or by exactly one exclusive holder.
    pub fn assert_consistent(&self) {
        for (v, e) in &self.locks {
            let excl = e.holders.iter().filter(|(_, m)| *m == LockMode::Exclusive).count();
            assert!(
                excl == 0 || e.holders.len() == 1,
                "vertex {v}: exclusive grant coexists with other holders"
            );
        }
    }
}

/// Admission budget for pipelined scope acquisitions.
///
/// `maxpending = 0` means fully synchronous operation: each worker keeps at
/// most one acquisition in flight, so the effective cap is the worker count.
#[derive(Debug)]
pub struct PipelineBudget {
    cap: usize,
    in_flight: usize,
    high_water: usize,
}

impl PipelineBudget {
    pub fn new(maxpending: usize, workers: usize) -> Self {
        let cap = if maxpending == 0 { workers.max(1) } else { maxpending };
        PipelineBudget { cap, in_flight: 0, high_water: 0 }
    }

    pub fn try_admit(&mut self) -> bool {
        if self.in_flight < self.cap {
            self.in_flight += 1;
            self.high_water = self.high_water.max(self.in_flight);
            true
        } else {
            false
        }
    }

    pub fn complete(&mut self) {
        debug_assert!(self.in_flight > 0);
        self.in_flight -= 1;
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn cap(&self) -> usize {
        self.cap
    }
}
