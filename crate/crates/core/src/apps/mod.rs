//! Ready-made graph programs: the workloads the engines are exercised
//! with, their payload codecs, and deterministic dataset generators.
//!
//! Every program is described by a serializable [`AppSpec`], so a run can
//! be reproduced from its config file and machine processes can rebuild
//! the identical program from the `AppSpec` JSON they receive.

pub mod als;
pub mod coem;
pub mod datasets;
pub mod fixtures;
pub mod lbp;
pub mod pagerank;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, InitialTasks, Program, SyncDef, UpdateError};
use crate::graph::VertexId;
use crate::scheduler::UpdateTask;

pub use datasets::{load_dataset, make_dataset, DatasetKind, DatasetMeta, PayloadInit};

/// A complete, reproducible program description. `build_program` turns one
/// into update functions, syncs, and the initial task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "app", rename_all = "kebab-case")]
pub enum AppSpec {
    /// Damped random-surfer ranking; reads neighbor ranks, writes its own,
    /// reschedules neighbors when the rank moved more than `eps`.
    Pagerank {
        alpha: f64,
        eps: f64,
        /// Updates between firings of the rank syncs.
        tau: u64,
    },
    /// Alternating least squares on a bipartite rating graph. `eps > 0`
    /// reschedules neighbors on latent movement (adaptive); `eps = 0`
    /// relies on sweep scheduling.
    Als { d: u32, lambda: f64, eps: f64 },
    /// Label-distribution propagation over a noun-phrase/context graph;
    /// seed vertices are frozen.
    Coem { eps: f64 },
    /// Residual-prioritized loopy belief propagation with Potts pairwise
    /// potentials.
    Lbp { eps: f64 },
    /// Each vertex counts up to `target`, one task per increment.
    Counter { target: u64, tau: u64 },
    /// Star-graph race fixture: spokes count to `rounds` and poke the hub
    /// on every increment, so hub updates contend.
    Contended { rounds: u64 },
    /// A charge of `hops` forwarded around a ring, one vertex at a time:
    /// exactly `hops + 1` updates, always exactly one in flight.
    Relay { hops: u64 },
}

impl AppSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AppSpec::Pagerank { .. } => "pagerank",
            AppSpec::Als { .. } => "als",
            AppSpec::Coem { .. } => "coem",
            AppSpec::Lbp { .. } => "lbp",
            AppSpec::Counter { .. } => "counter",
            AppSpec::Contended { .. } => "contended",
            AppSpec::Relay { .. } => "relay",
        }
    }
}

/// Builds the runnable program plus its initial task set.
pub fn build_program(spec: &AppSpec) -> Result<(Program, InitialTasks), EngineError> {
    let all = InitialTasks::AllVertices { fn_id: 0, priority: 1.0 };
    let (program, initial) = match *spec {
        AppSpec::Pagerank { alpha, eps, tau } => {
            if !(0.0 < alpha && alpha < 1.0) {
                return Err(EngineError::Config(format!("alpha {alpha} outside (0, 1)")));
            }
            let syncs = vec![top_two_sync("top_ranks", tau.max(1))];
            let program =
                Program { updates: vec![Arc::new(pagerank::Pagerank { alpha, eps })], syncs };
            (program, all)
        }
        AppSpec::Als { d, lambda, eps } => {
            if d == 0 {
                return Err(EngineError::Config("latent dimension must be positive".into()));
            }
            if lambda < 0.0 {
                return Err(EngineError::Config(format!("negative regularizer {lambda}")));
            }
            let program = Program {
                updates: vec![Arc::new(als::Als { d: d as usize, lambda, eps })],
                syncs: Vec::new(),
            };
            (program, all)
        }
        AppSpec::Coem { eps } => {
            let program =
                Program { updates: vec![Arc::new(coem::Coem { eps })], syncs: Vec::new() };
            (program, all)
        }
        AppSpec::Lbp { eps } => {
            let program = Program { updates: vec![Arc::new(lbp::Lbp { eps })], syncs: Vec::new() };
            (program, all)
        }
        AppSpec::Counter { target, tau } => {
            let program = Program {
                updates: vec![Arc::new(fixtures::Counter { target })],
                syncs: vec![fixtures::sum_sync("count_sum", tau.max(1))],
            };
            (program, all)
        }
        AppSpec::Contended { rounds } => {
            let program = Program {
                updates: vec![Arc::new(fixtures::Contended { rounds })],
                syncs: Vec::new(),
            };
            (program, all)
        }
        AppSpec::Relay { .. } => {
            let program =
                Program { updates: vec![Arc::new(fixtures::Relay)], syncs: Vec::new() };
            let first = InitialTasks::List(vec![(
                UpdateTask { fn_id: 0, vertex: VertexId(0) },
                1.0,
            )]);
            (program, first)
        }
    };
    Ok((program, initial))
}

/// Tracks the two largest leading-f64 vertex values; the finalized result
/// is the second-highest. Works on any payload that starts with one f64.
pub fn top_two_sync(key: &str, tau: u64) -> SyncDef {
    fn unpack(acc: &[u8]) -> [f64; 2] {
        let mut r = crate::bytes::Reader::new(acc);
        [r.f64().unwrap_or(f64::NEG_INFINITY), r.f64().unwrap_or(f64::NEG_INFINITY)]
    }
    fn pack(top: [f64; 2]) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        crate::bytes::put_f64(&mut out, top[0]);
        crate::bytes::put_f64(&mut out, top[1]);
        out
    }
    fn absorb(mut top: [f64; 2], v: f64) -> [f64; 2] {
        if v > top[0] {
            top = [v, top[0]];
        } else if v > top[1] {
            top[1] = v;
        }
        top
    }
    SyncDef {
        key: key.to_string(),
        tau,
        acc0: pack([f64::NEG_INFINITY, f64::NEG_INFINITY]),
        fold: Arc::new(|acc, _, bytes| {
            let v = crate::bytes::Reader::new(bytes).f64().unwrap_or(f64::NEG_INFINITY);
            pack(absorb(unpack(acc), v))
        }),
        merge: Arc::new(|a, b| {
            let [b0, b1] = unpack(b);
            pack(absorb(absorb(unpack(a), b0), b1))
        }),
        finalize: Arc::new(|acc| {
            let mut out = Vec::with_capacity(8);
            crate::bytes::put_f64(&mut out, unpack(acc)[1]);
            out
        }),
    }
}

/// Shorthand for payload decode / scope access failures inside updates.
pub(crate) fn bad(e: impl std::fmt::Display) -> UpdateError {
    UpdateError(e.to_string())
}
