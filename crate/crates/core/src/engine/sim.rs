//! Deterministic in-process driver. Every machine runs as a state machine
//! in one thread; envelopes travel through per-(sender, receiver) FIFO
//! queues; a seeded RNG picks which pending event fires next. Update
//! execution is pure — each job carries the scope snapshot it was
//! dispatched with — so simulated concurrency reduces to completion order:
//! the driver keeps up to `workers` jobs "executing" per machine and
//! completes them in random order. Same seed, same run, and the
//! color-stepped engine gives bit-identical output under any seed.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comm::{Envelope, Payload};
use crate::graph::{DatumId, Direction};
use crate::partition::{load_local, Atom, FinalData, LocalGraph};

use super::log::ExecLog;
use super::metrics::MetricsRow;
use super::{
    new_core, run_update, Effects, EngineError, Event, InitialTasks, JobSpec, MachineCore,
    MachineExport, Program, RunOptions, RunOutput, RunSummary,
};

/// Hard stop against runaway protocols; generous next to any test workload.
const MAX_STEPS: u64 = 200_000_000;

#[derive(Debug, Clone, Copy)]
enum Source {
    /// A pending envelope on the (sender, receiver) queue.
    Queue(u32, u32),
    /// A job executing on this machine, ready to complete.
    Jobs(u32),
}

pub fn run_inproc(
    opts: &RunOptions,
    program: Arc<Program>,
    atoms: &[Atom],
    placement: &[u32],
    initial: &InitialTasks,
) -> Result<RunOutput, EngineError> {
    let m = opts.machines;
    if m == 0 {
        return Err(EngineError::Config("a run needs at least one machine".into()));
    }
    let started = Instant::now();
    let mut cores: Vec<Box<dyn MachineCore>> = Vec::with_capacity(m as usize);
    for me in 0..m {
        let local = load_local(atoms, placement, me, m)?;
        cores.push(new_core(opts, program.clone(), local, initial));
    }

    let slots = opts.workers.max(1) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut queues: BTreeMap<(u32, u32), VecDeque<Envelope>> = BTreeMap::new();
    let mut waiting: Vec<VecDeque<JobSpec>> = (0..m).map(|_| VecDeque::new()).collect();
    let mut executing: Vec<Vec<JobSpec>> = (0..m).map(|_| Vec::new()).collect();

    let flush = |target: u32,
                     fx: Effects,
                     queues: &mut BTreeMap<(u32, u32), VecDeque<Envelope>>,
                     waiting: &mut Vec<VecDeque<JobSpec>>|
     -> Result<bool, EngineError> {
        let mut released = false;
        for (dest, env) in fx.sends {
            if dest >= m {
                return Err(EngineError::MachineFailed(
                    target,
                    format!("sent an envelope to unknown machine {dest}"),
                ));
            }
            released |= matches!(env.payload, Payload::BarrierRelease { .. });
            queues.entry((target, dest)).or_default().push_back(env);
        }
        waiting[target as usize].extend(fx.jobs);
        Ok(released)
    };

    for me in 0..m {
        let mut fx = Effects::default();
        cores[me as usize].handle(Event::Start, &mut fx);
        flush(me, fx, &mut queues, &mut waiting)?;
    }

    let mut steps: u64 = 0;
    loop {
        for me in 0..m as usize {
            while executing[me].len() < slots {
                let Some(job) = waiting[me].pop_front() else { break };
                executing[me].push(job);
            }
        }

        let mut sources: Vec<Source> = queues
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(&(i, j), _)| Source::Queue(i, j))
            .collect();
        for me in 0..m {
            if !executing[me as usize].is_empty() {
                sources.push(Source::Jobs(me));
            }
        }
        if sources.is_empty() {
            if cores.iter().all(|c| c.is_halted()) {
                break;
            }
            let stuck: Vec<String> = cores
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.is_halted())
                .map(|(i, _)| format!("machine {i}"))
                .collect();
            return Err(EngineError::Deadlock(stuck.join(", ")));
        }
        steps += 1;
        if steps > MAX_STEPS {
            return Err(EngineError::Deadlock(format!(
                "no quiescence after {MAX_STEPS} events"
            )));
        }

        let (target, event) = match sources[rng.gen_range(0..sources.len())] {
            Source::Queue(i, j) => {
                let env = queues
                    .get_mut(&(i, j))
                    .expect("listed queue exists")
                    .pop_front()
                    .expect("listed queue non-empty");
                (j, Event::Deliver(env))
            }
            Source::Jobs(me) => {
                let lane = &mut executing[me as usize];
                let spec = lane.swap_remove(rng.gen_range(0..lane.len()));
                let outcome = run_update(&program, spec)
                    .map_err(|e| EngineError::MachineFailed(me, e.to_string()))?;
                (me, Event::JobDone(outcome))
            }
        };
        if cores[target as usize].is_halted() {
            return Err(EngineError::MachineFailed(
                target,
                "received an event after halting".into(),
            ));
        }
        let mut fx = Effects::default();
        cores[target as usize].handle(event, &mut fx);
        let released = flush(target, fx, &mut queues, &mut waiting)?;

        if released && opts.verify_ghosts {
            // A release is sent only when the counters balance, so every
            // push has landed and replicas must match their owners.
            let locals: Vec<&LocalGraph> = cores.iter().map(|c| c.local()).collect();
            verify_ghost_coherence(&locals).map_err(EngineError::Ghost)?;
        }
    }

    for ((i, j), q) in &queues {
        if !q.is_empty() {
            return Err(EngineError::Deadlock(format!(
                "{} envelopes from {i} to {j} never delivered",
                q.len()
            )));
        }
    }
    for me in 0..m as usize {
        if !waiting[me].is_empty() || !executing[me].is_empty() {
            return Err(EngineError::MachineFailed(
                me as u32,
                "halted with jobs still in flight".into(),
            ));
        }
    }
    if opts.verify_ghosts {
        let locals: Vec<&LocalGraph> = cores.iter().map(|c| c.local()).collect();
        verify_ghost_coherence(&locals).map_err(EngineError::Ghost)?;
    }

    let exports: Vec<MachineExport> = cores.iter_mut().map(|c| c.finish()).collect();
    let locals: Vec<&LocalGraph> = exports.iter().map(|e| &e.local).collect();
    let final_data = FinalData::assemble(&locals)?;
    assemble_output(opts, final_data, exports, started)
}

/// Builds the run artifacts from the assembled data plus per-machine
/// exports. Shared with the socket driver, which unions owned-data
/// fragments instead of whole local graphs.
pub(super) fn assemble_output(
    opts: &RunOptions,
    final_data: FinalData,
    exports: Vec<MachineExport>,
    started: Instant,
) -> Result<RunOutput, EngineError> {
    let log = ExecLog::merge(exports.iter().map(|e| e.log.clone()));
    let metrics: Vec<MetricsRow> = exports.iter().map(MetricsRow::from_export).collect();
    let sync_results = exports
        .iter()
        .find(|e| e.machine == 0)
        .map(|e| e.sync_results.clone())
        .unwrap_or_default();
    let summary = RunSummary {
        engine: opts.engine.as_str().to_string(),
        model: opts.model.as_str().to_string(),
        machines: opts.machines,
        workers: opts.workers,
        updates: exports.iter().map(|e| e.updates).sum(),
        modifications: exports.iter().map(|e| e.modifications).sum(),
        publications: exports.iter().map(|e| e.publications).sum(),
        envelopes_sent: exports.iter().map(|e| e.counters.sent).sum(),
        push_bytes: exports.iter().map(|e| e.push_bytes).sum(),
        sweeps: exports.iter().map(|e| e.sweeps).max().unwrap_or(0),
        max_in_flight: exports.iter().map(|e| e.max_in_flight).max().unwrap_or(0),
        sync_firings: sync_results
            .iter()
            .map(|(k, v)| (k.clone(), v.len() as u64))
            .collect(),
        repartitioned: false,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    Ok(RunOutput { final_data, sync_results, log, metrics, summary })
}

/// Checks every replica — ghost vertices and both copies of boundary edges —
/// against the owning machine, bytes and versions.
pub(super) fn verify_ghost_coherence(locals: &[&LocalGraph]) -> Result<(), String> {
    for lg in locals {
        for &g in lg.ghosts() {
            let owner = locals[lg.owner(g) as usize];
            let mine = lg.datum(DatumId::Vertex(g)).expect("ghost datum present");
            let theirs = owner.datum(DatumId::Vertex(g)).expect("owned datum present");
            if mine.bytes != theirs.bytes || mine.version != theirs.version {
                return Err(format!(
                    "machine {} holds a stale replica of {} (version {} vs owner's {})",
                    lg.machine(),
                    g,
                    mine.version,
                    theirs.version
                ));
            }
        }
        for e in lg.local_edges() {
            if lg.owner(e.lo) != lg.machine() {
                continue; // compared from the lo endpoint's owner
            }
            let other = locals[lg.owner(e.hi) as usize];
            if other.machine() == lg.machine() {
                continue;
            }
            for dir in [Direction::LoToHi, Direction::HiToLo] {
                let id = DatumId::Edge(e, dir);
                let a = lg.datum(id).expect("edge datum present");
                let b = other.datum(id).expect("edge datum present");
                if a.bytes != b.bytes || a.version != b.version {
                    return Err(format!(
                        "edge {}-{} copies disagree between machines {} and {}",
                        e.lo,
                        e.hi,
                        lg.machine(),
                        other.machine()
                    ));
                }
            }
        }
    }
    Ok(())
}
