//! Update execution on 1..M logical machines.
//!
//! Both engines are written as event-driven machine cores: a core owns one
//! machine's slice of the graph and reacts to three events — start, an
//! envelope from a peer, or a finished update job — by mutating local state
//! and emitting effects (envelopes to send, jobs to run, or a halt). Drivers
//! own the transport: the in-process driver runs every core in one thread
//! over seeded FIFO queues, which makes whole multi-machine executions
//! reproducible and lets tests inspect any machine mid-run; the socket
//! driver gives each core its own OS process, TCP connections, and a worker
//! pool.
//!
//! Update jobs are pure: a job gets a scope snapshot copied at dispatch and
//! produces a write set that the core commits when the job completes. The
//! gap between snapshot and commit is real — under weak consistency two
//! neighboring updates can interleave there and lose writes, which is
//! exactly what the locking engine's scope locks (or the chromatic engine's
//! coloring) exclude.

mod audit;
mod chromatic;
mod locking;
mod log;
mod machine;
mod metrics;
mod sim;
mod socket;
mod sync;

pub use audit::{audit_run, AuditError, AuditReport};
pub use log::{ExecLog, LogRecord};
pub use metrics::{render_metrics_csv, MetricsRow};
pub use sim::run_inproc;
pub use socket::{machine_process_entry, run_socket, MachineProcessArgs};
pub use sync::{direct_sync, SyncDef};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{CommCounters, CommError, Envelope};
use crate::graph::{GlobalView, GraphError, Scope, ScopeSnapshot, WriteSet};
use crate::locks::ConsistencyModel;
use crate::partition::{FinalData, LocalGraph, PartitionError};
use crate::scheduler::{SchedulerKind, UpdateTask};

/// An application's update function. Implementations must be pure functions
/// of the scope and globals they are given: no interior state, no
/// randomness, no clock. The engine replays them during audits and expects
/// byte-identical behavior.
pub trait UpdateFn: Send + Sync {
    /// Reads and writes through the scope, returning follow-up tasks with
    /// their scheduling priorities.
    fn execute(&self, scope: &mut Scope) -> Result<Vec<(UpdateTask, f64)>, UpdateError>;
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("update failed: {0}")]
pub struct UpdateError(pub String);

/// A complete application: update functions indexed by the `fn_id` tasks
/// carry, plus sync (global aggregation) definitions. Every machine builds
/// the identical program.
pub struct Program {
    pub updates: Vec<Arc<dyn UpdateFn>>,
    pub syncs: Vec<SyncDef>,
}

impl Program {
    pub fn update(&self, fn_id: u32) -> &dyn UpdateFn {
        self.updates
            .get(fn_id as usize)
            .unwrap_or_else(|| panic!("task names update fn {fn_id}, program has {}", self.updates.len()))
            .as_ref()
    }
}

/// What gets scheduled before the engine starts.
#[derive(Debug, Clone)]
pub enum InitialTasks {
    /// One task per vertex for the given update function, at one priority.
    AllVertices { fn_id: u32, priority: f64 },
    /// An explicit list.
    List(Vec<(UpdateTask, f64)>),
}

impl InitialTasks {
    /// Tasks this machine seeds: those whose vertex it owns.
    fn owned_tasks(&self, local: &LocalGraph) -> Vec<(UpdateTask, f64)> {
        match self {
            InitialTasks::AllVertices { fn_id, priority } => local
                .owned()
                .iter()
                .map(|&v| (UpdateTask { fn_id: *fn_id, vertex: v }, *priority))
                .collect(),
            InitialTasks::List(list) => list
                .iter()
                .filter(|(t, _)| local.is_owned(t.vertex))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Chromatic,
    Locking,
}

impl EngineKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chromatic" => Some(EngineKind::Chromatic),
            "locking" => Some(EngineKind::Locking),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::Chromatic => "chromatic",
            EngineKind::Locking => "locking",
        }
    }
}

/// Everything that shapes one run. The same options plus the same atoms must
/// reproduce the same chromatic-engine output bit for bit, whatever the
/// machine or worker counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOptions {
    pub engine: EngineKind,
    pub model: ConsistencyModel,
    pub machines: u32,
    /// Compute slots per machine: worker threads under the socket driver,
    /// simulated concurrent jobs under the in-process driver.
    pub workers: u32,
    pub scheduler: SchedulerKind,
    /// Locking engine: scope acquisitions a machine may have in flight at
    /// once. 0 means one per worker (fully synchronous workers).
    pub maxpending: u32,
    /// Chromatic engine: stop after this many sweeps even if tasks remain.
    pub max_sweeps: u32,
    /// Safety valve: once the coordinator has seen this many committed
    /// updates it drains and halts the run. 0 = unlimited.
    pub max_updates: u64,
    pub seed: u64,
    /// In-process driver only: byte-compare every ghost against its owner at
    /// each barrier release, and at halt.
    pub verify_ghosts: bool,
}

impl RunOptions {
    pub fn effective_pipeline_cap(&self) -> u32 {
        if self.maxpending == 0 {
            self.workers.max(1)
        } else {
            self.maxpending
        }
    }
}

/// Totals the run reports when it finishes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub engine: String,
    pub model: String,
    pub machines: u32,
    pub workers: u32,
    pub updates: u64,
    /// Committed scope writes across the run.
    pub modifications: u64,
    /// Distinct (datum, version) values pushed to at least one peer. Never
    /// exceeds `modifications`.
    pub publications: u64,
    /// Basic envelopes exchanged (lock/push/post/count traffic).
    pub envelopes_sent: u64,
    /// Payload bytes across all data pushes.
    pub push_bytes: u64,
    /// Chromatic: completed sweeps over the color classes.
    pub sweeps: u32,
    /// Locking: highest number of concurrently in-flight scope acquisitions
    /// on any machine.
    pub max_in_flight: u32,
    /// Firings per sync key, final publish included.
    pub sync_firings: BTreeMap<String, u64>,
    /// Whether changing the machine count forced a new graph cut. Placement
    /// is recomputed from the atoms alone, so this stays false.
    pub repartitioned: bool,
    pub wall_ms: u64,
}

/// Everything a finished run yields.
pub struct RunOutput {
    pub final_data: FinalData,
    /// Every finalized value each sync produced, in firing order.
    pub sync_results: BTreeMap<String, Vec<Vec<u8>>>,
    pub log: ExecLog,
    pub metrics: Vec<MetricsRow>,
    pub summary: RunSummary,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("deadlock: machines stuck with no events pending: {0}")]
    Deadlock(String),
    #[error("ghost coherence: {0}")]
    Ghost(String),
    #[error("machine {0} failed: {1}")]
    MachineFailed(u32, String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One finished update execution, ready to commit.
#[derive(Debug)]
pub struct JobOutcome {
    pub job: u64,
    pub task: UpdateTask,
    pub writes: WriteSet,
    pub new_tasks: Vec<(UpdateTask, f64)>,
}

/// One update execution handed to the compute pool: the task, the scope
/// bytes it sees, and the globals snapshot it reads.
#[derive(Debug)]
pub struct JobSpec {
    pub job: u64,
    pub task: UpdateTask,
    pub snapshot: ScopeSnapshot,
    pub model: ConsistencyModel,
    pub globals: GlobalView,
}

/// Runs one job to completion. Pure: everything it touches is in the `JobSpec`.
pub fn run_update(program: &Program, spec: JobSpec) -> Result<JobOutcome, UpdateError> {
    let mut scope = Scope::new(spec.snapshot, spec.model, spec.globals);
    let new_tasks = program.update(spec.task.fn_id).execute(&mut scope)?;
    for (task, priority) in &new_tasks {
        if task.vertex.0 >= scope.vertex_total() {
            return Err(UpdateError(format!("posted task for out-of-range {}", task.vertex)));
        }
        if priority.is_nan() {
            return Err(UpdateError(format!("posted NaN priority for {}", task.vertex)));
        }
    }
    Ok(JobOutcome { job: spec.job, task: spec.task, writes: scope.take_writes(), new_tasks })
}

/// What a machine core reacts to.
#[derive(Debug)]
pub enum Event {
    Start,
    Deliver(Envelope),
    JobDone(JobOutcome),
}

/// What a machine core asks its driver to do. Envelopes are already clock-
/// stamped; jobs carry their scope snapshots.
#[derive(Debug, Default)]
pub struct Effects {
    pub sends: Vec<(u32, Envelope)>,
    pub jobs: Vec<JobSpec>,
    pub halted: bool,
}

/// Final state a core surrenders once halted.
pub struct MachineExport {
    pub machine: u32,
    pub local: LocalGraph,
    pub log: Vec<LogRecord>,
    pub counters: CommCounters,
    pub updates: u64,
    pub modifications: u64,
    pub publications: u64,
    pub push_bytes: u64,
    /// Partial folds this machine performed across all sync firings.
    pub syncs_run: u64,
    pub sweeps: u32,
    pub max_in_flight: u32,
    /// Coordinator only: finalized sync values in firing order.
    pub sync_results: BTreeMap<String, Vec<Vec<u8>>>,
    pub wall_ms: u64,
}

/// A per-machine engine state machine. Drivers feed events and flush
/// effects; cores never block.
pub trait MachineCore {
    fn handle(&mut self, event: Event, fx: &mut Effects);
    fn is_halted(&self) -> bool;
    /// The graph slice this machine works on, for driver-side checks.
    fn local(&self) -> &LocalGraph;
    /// Surrenders final state. Call once, after the core halts.
    fn finish(&mut self) -> MachineExport;
}

pub(crate) fn new_core(
    opts: &RunOptions,
    program: Arc<Program>,
    local: LocalGraph,
    initial: &InitialTasks,
) -> Box<dyn MachineCore> {
    match opts.engine {
        EngineKind::Chromatic => {
            Box::new(chromatic::ChromaticCore::new(opts, program, local, initial))
        }
        EngineKind::Locking => Box::new(locking::LockingCore::new(opts, program, local, initial)),
    }
}
