//! Execution log. Every machine appends records stamped with its Lamport
//! clock and a per-machine sequence number; merged and sorted by
//! (clock, machine, seq), the records form a total order consistent with
//! causality, which is what the auditor replays. The chains that matter are
//! built into the protocols: a lock release reaches the owner before the
//! next conflicting grant, and a sync's partials reach the coordinator
//! before it stamps the firing, so conflicting commits — and every commit a
//! sync folded — sort before the records that depended on them.

use serde::{Deserialize, Serialize};

use crate::graph::DatumId;
use crate::locks::LockMode;
use crate::scheduler::UpdateTask;

/// FNV-1a over each write's datum id rendering and bytes. Pins what a commit
/// wrote without storing the payloads; the audit replay recomputes it.
pub fn write_hash(writes: impl Iterator<Item = (DatumId, impl AsRef<[u8]>)>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut absorb = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x1_0000_0000_01b3);
        }
    };
    for (id, bytes) in writes {
        absorb(id.to_string().as_bytes());
        absorb(&(bytes.as_ref().len() as u64).to_le_bytes());
        absorb(bytes.as_ref());
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    /// A machine came up with its slice of the graph.
    Start { machine: u32, clock: u64, seq: u64, owned: u32, ghosts: u32 },
    /// One update committed: which data it wrote and a hash of the bytes.
    Commit {
        machine: u32,
        clock: u64,
        seq: u64,
        task: UpdateTask,
        writes: Vec<DatumId>,
        hash: u64,
    },
    /// Lock owner granted `vertex` to a requester's ticket. Paired with the
    /// `Release` carrying the same (requester, ticket, vertex).
    Grant {
        machine: u32,
        clock: u64,
        seq: u64,
        vertex: u32,
        requester: u32,
        ticket: u64,
        mode: LockMode,
    },
    /// Lock owner processed the matching release.
    Release { machine: u32, clock: u64, seq: u64, vertex: u32, requester: u32, ticket: u64 },
    /// Coordinator fired a sync: merged, finalized, published.
    SyncFire { machine: u32, clock: u64, seq: u64, sync_id: u32, key: String, result: Vec<u8> },
    /// Coordinator decided the run is over.
    Halt { machine: u32, clock: u64, seq: u64, updates: u64 },
}

impl LogRecord {
    pub fn machine(&self) -> u32 {
        match *self {
            LogRecord::Start { machine, .. }
            | LogRecord::Commit { machine, .. }
            | LogRecord::Grant { machine, .. }
            | LogRecord::Release { machine, .. }
            | LogRecord::SyncFire { machine, .. }
            | LogRecord::Halt { machine, .. } => machine,
        }
    }

    pub fn clock(&self) -> u64 {
        match *self {
            LogRecord::Start { clock, .. }
            | LogRecord::Commit { clock, .. }
            | LogRecord::Grant { clock, .. }
            | LogRecord::Release { clock, .. }
            | LogRecord::SyncFire { clock, .. }
            | LogRecord::Halt { clock, .. } => clock,
        }
    }

    pub fn seq(&self) -> u64 {
        match *self {
            LogRecord::Start { seq, .. }
            | LogRecord::Commit { seq, .. }
            | LogRecord::Grant { seq, .. }
            | LogRecord::Release { seq, .. }
            | LogRecord::SyncFire { seq, .. }
            | LogRecord::Halt { seq, .. } => seq,
        }
    }

    /// Replay order key. Within one machine, seq alone is already the
    /// execution order; across machines the clock arbitrates and the
    /// machine id breaks the remaining (causally unrelated) ties.
    pub fn order_key(&self) -> (u64, u32, u64) {
        (self.clock(), self.machine(), self.seq())
    }
}

/// The merged log of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecLog {
    pub records: Vec<LogRecord>,
}

impl ExecLog {
    /// Merges per-machine logs into replay order.
    pub fn merge(per_machine: impl IntoIterator<Item = Vec<LogRecord>>) -> Self {
        let mut records: Vec<LogRecord> = per_machine.into_iter().flatten().collect();
        records.sort_by_key(LogRecord::order_key);
        ExecLog { records }
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, serde_json::Error> {
        let mut records = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if !line.is_empty() {
                records.push(serde_json::from_str(line)?);
            }
        }
        Ok(ExecLog { records })
    }

    pub fn commits(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(|r| matches!(r, LogRecord::Commit { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::VertexId;

    #[test]
    fn merge_orders_by_clock_then_machine_then_seq() {
        let m0 = vec![
            LogRecord::Start { machine: 0, clock: 1, seq: 0, owned: 2, ghosts: 0 },
            LogRecord::Commit {
                machine: 0,
                clock: 4,
                seq: 1,
                task: UpdateTask { fn_id: 0, vertex: VertexId(0) },
                writes: vec![DatumId::Vertex(VertexId(0))],
                hash: 7,
            },
        ];
        let m1 = vec![
            LogRecord::Start { machine: 1, clock: 1, seq: 0, owned: 2, ghosts: 1 },
            LogRecord::Commit {
                machine: 1,
                clock: 3,
                seq: 1,
                task: UpdateTask { fn_id: 0, vertex: VertexId(2) },
                writes: vec![],
                hash: 0,
            },
        ];
        let log = ExecLog::merge([m0, m1]);
        let order: Vec<(u64, u32, u64)> = log.records.iter().map(LogRecord::order_key).collect();
        assert_eq!(order, vec![(1, 0, 0), (1, 1, 0), (3, 1, 1), (4, 0, 1)]);
    }

    #[test]
    fn ndjson_round_trips() {
        let log = ExecLog {
            records: vec![
                LogRecord::Grant {
                    machine: 2,
                    clock: 9,
                    seq: 3,
                    vertex: 5,
                    requester: 0,
                    ticket: 11,
                    mode: LockMode::Exclusive,
                },
                LogRecord::SyncFire {
                    machine: 0,
                    clock: 12,
                    seq: 4,
                    sync_id: 0,
                    key: "total".into(),
                    result: vec![1, 2, 3],
                },
                LogRecord::Halt { machine: 0, clock: 20, seq: 5, updates: 42 },
            ],
        };
        let text = log.to_ndjson();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(ExecLog::from_ndjson(&text).unwrap(), log);
    }

    #[test]
    fn write_hash_tracks_content_and_boundaries() {
        let a = write_hash([(DatumId::Vertex(VertexId(1)), vec![1, 2])].into_iter());
        let b = write_hash([(DatumId::Vertex(VertexId(1)), vec![1, 3])].into_iter());
        let c = write_hash([(DatumId::Vertex(VertexId(2)), vec![1, 2])].into_iter());
        assert_ne!(a, b);
        assert_ne!(a, c);
        let again = write_hash([(DatumId::Vertex(VertexId(1)), vec![1, 2])].into_iter());
        assert_eq!(a, again);
    }
}
