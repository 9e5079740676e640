//! Serializability audit. Takes a run's merged log, the initial graph, and
//! the run's final data, and checks that the distributed execution is
//! explainable as one sequential execution:
//!
//! 1. **Lock discipline.** Grant/Release pairs for one vertex all come from
//!    its owner, so their log order is that machine's real order. Replayed
//!    as intervals, exclusive grants must never overlap any other grant.
//! 2. **Replay.** Commits and sync firings are re-executed one at a time,
//!    in (clock, machine, seq) order, against a single sequential graph.
//!    Every commit's re-derived writes must hash to what the run logged;
//!    every sync firing must equal a direct fold over the whole replay
//!    graph; the final replay graph must equal the run's final data, bytes
//!    and versions both.
//!
//! Commit stamps are Lamport clocks, so any commit whose data a sync folded
//! sorts before that sync's firing record, and commits that resumed after
//! it sort after — the replay positions are causally sound.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::graph::{DataGraph, GraphError, Scope, VertexId};
use crate::locks::{ConsistencyModel, LockMode};
use crate::partition::FinalData;

use super::log::{write_hash, ExecLog, LogRecord};
use super::sync::direct_sync;
use super::Program;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(
        "lock conflict on vertex {vertex}: grant to machine {second_machine} ticket \
         {second_ticket} overlaps the grant held by machine {first_machine} ticket {first_ticket}"
    )]
    Conflict {
        vertex: u32,
        first_machine: u32,
        first_ticket: u64,
        second_machine: u32,
        second_ticket: u64,
    },
    #[error(
        "commit by machine {machine} at clock {clock} replays to different writes \
         (hash {got:#018x}, run logged {want:#018x})"
    )]
    HashMismatch { machine: u32, clock: u64, got: u64, want: u64 },
    #[error("sync '{key}' fired at clock {clock} with a value the replay cannot reproduce")]
    SyncMismatch { key: String, clock: u64 },
    #[error("final graph diverges from the run at {0}")]
    FinalMismatch(String),
    #[error("log malformed: {0}")]
    Malformed(String),
    #[error("replayed update failed: {0}")]
    Replay(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// What a clean audit covered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub commits: u64,
    pub sync_fires: u64,
    pub grants: u64,
}

/// Verifies one run. `g0` is the graph exactly as the run loaded it;
/// `final_data` is what the run produced.
pub fn audit_run(
    program: &Program,
    g0: &DataGraph,
    model: ConsistencyModel,
    log: &ExecLog,
    final_data: &FinalData,
) -> Result<AuditReport, AuditError> {
    let mut records: Vec<&LogRecord> = log.records.iter().collect();
    records.sort_by_key(|r| r.order_key());

    let mut replay = g0.clone();
    let mut globals: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    // Per vertex: grants currently held, keyed by (requester, ticket).
    let mut held: BTreeMap<u32, BTreeMap<(u32, u64), LockMode>> = BTreeMap::new();
    let mut report = AuditReport { commits: 0, sync_fires: 0, grants: 0 };

    for record in records {
        match record {
            LogRecord::Start { .. } | LogRecord::Halt { .. } => {}
            LogRecord::Grant { vertex, requester, ticket, mode, .. } => {
                report.grants += 1;
                let locks = held.entry(*vertex).or_default();
                let blocking = locks.iter().find(|(_, m)| {
                    *mode == LockMode::Exclusive || **m == LockMode::Exclusive
                });
                if let Some((&(fm, ft), _)) = blocking {
                    return Err(AuditError::Conflict {
                        vertex: *vertex,
                        first_machine: fm,
                        first_ticket: ft,
                        second_machine: *requester,
                        second_ticket: *ticket,
                    });
                }
                if locks.insert((*requester, *ticket), *mode).is_some() {
                    return Err(AuditError::Malformed(format!(
                        "vertex {vertex} granted twice to machine {requester} ticket {ticket}"
                    )));
                }
            }
            LogRecord::Release { vertex, requester, ticket, .. } => {
                let locks = held.entry(*vertex).or_default();
                if locks.remove(&(*requester, *ticket)).is_none() {
                    return Err(AuditError::Malformed(format!(
                        "vertex {vertex} released by machine {requester} ticket {ticket} \
                         without a grant"
                    )));
                }
            }
            LogRecord::Commit { machine, clock, task, hash, .. } => {
                report.commits += 1;
                let snapshot = replay.snapshot(task.vertex)?;
                let mut scope = Scope::new(snapshot, model, Arc::new(globals.clone()));
                program
                    .update(task.fn_id)
                    .execute(&mut scope)
                    .map_err(|e| AuditError::Replay(e.to_string()))?;
                let writes = scope.take_writes();
                let got = write_hash(writes.iter().map(|(id, bytes)| (*id, bytes)));
                if got != *hash {
                    return Err(AuditError::HashMismatch {
                        machine: *machine,
                        clock: *clock,
                        got,
                        want: *hash,
                    });
                }
                for (id, bytes) in writes {
                    replay.apply_write(id, bytes)?;
                }
            }
            LogRecord::SyncFire { sync_id, key, result, clock, .. } => {
                report.sync_fires += 1;
                let def = &program.syncs[*sync_id as usize];
                if def.key != *key {
                    return Err(AuditError::Malformed(format!(
                        "sync {sync_id} fired under key '{key}', program says '{}'",
                        def.key
                    )));
                }
                let expected = direct_sync(
                    def,
                    (0..replay.vertex_count())
                        .map(|v| (VertexId(v), replay.vertex_datum(VertexId(v)).bytes.as_slice())),
                );
                if expected != *result {
                    return Err(AuditError::SyncMismatch { key: key.clone(), clock: *clock });
                }
                globals.insert(key.clone(), result.clone());
            }
        }
    }

    for (vertex, locks) in &held {
        if !locks.is_empty() {
            return Err(AuditError::Malformed(format!(
                "vertex {vertex} still holds {} grants at the end of the log",
                locks.len()
            )));
        }
    }

    let replayed = FinalData::from_graph(&replay);
    if replayed.vertex_total != final_data.vertex_total {
        return Err(AuditError::FinalMismatch("the vertex count".into()));
    }
    for v in 0..final_data.vertex_total {
        let (a, b) = (&replayed.vdata[v as usize], &final_data.vdata[v as usize]);
        if a.bytes != b.bytes || a.version != b.version {
            return Err(AuditError::FinalMismatch(format!("vertex {v}")));
        }
    }
    if replayed.edges.len() != final_data.edges.len() {
        return Err(AuditError::FinalMismatch("the edge count".into()));
    }
    for ((ka, da), (kb, db)) in replayed.edges.iter().zip(final_data.edges.iter()) {
        if ka != kb {
            return Err(AuditError::FinalMismatch(format!("edge key {}-{}", ka.lo, ka.hi)));
        }
        for slot in 0..2 {
            if da[slot].bytes != db[slot].bytes || da[slot].version != db[slot].version {
                return Err(AuditError::FinalMismatch(format!("edge {}-{}", ka.lo, ka.hi)));
            }
        }
    }

    Ok(report)
}
