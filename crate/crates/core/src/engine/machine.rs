//! State every machine carries regardless of engine: the local graph slice,
//! the task scheduler, the Lamport clock, traffic counters, the execution
//! log, and the commit path (log record, apply, one-hop pushes, task
//! routing). The engine cores layer their coordination protocols on top.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use crate::comm::{plan_pushes, CommCounters, Envelope, LamportClock, Payload};
use crate::graph::{DatumId, GlobalView};
use crate::locks::ConsistencyModel;
use crate::partition::LocalGraph;
use crate::scheduler::{Scheduler, UpdateTask};

use super::log::{write_hash, LogRecord};
use super::sync::SyncDef;
use super::{Effects, InitialTasks, JobOutcome, JobSpec, MachineExport, Program, RunOptions};

pub(super) struct MachineBase {
    pub me: u32,
    pub machines: u32,
    pub program: Arc<Program>,
    pub local: LocalGraph,
    pub model: ConsistencyModel,
    pub scheduler: Scheduler,
    pub clock: LamportClock,
    pub counters: CommCounters,
    pub globals: GlobalView,
    pub log: Vec<LogRecord>,
    seq: u64,
    next_job: u64,
    pub updates: u64,
    pub modifications: u64,
    pub publications: u64,
    pub push_bytes: u64,
    pub syncs_run: u64,
    started: Instant,
}

impl MachineBase {
    pub fn new(
        opts: &RunOptions,
        program: Arc<Program>,
        local: LocalGraph,
        initial: &InitialTasks,
    ) -> Self {
        let mut colors = vec![0u32; local.vertex_total() as usize];
        for &v in local.owned() {
            colors[v.0 as usize] = local.color(v);
        }
        let scheduler = Scheduler::new(opts.scheduler, Arc::new(colors));
        for (task, priority) in initial.owned_tasks(&local) {
            scheduler.add(task, priority);
        }
        MachineBase {
            me: local.machine(),
            machines: opts.machines,
            program,
            local,
            model: opts.model,
            scheduler,
            clock: LamportClock::new(),
            counters: CommCounters::default(),
            globals: Arc::new(BTreeMap::new()),
            log: Vec::new(),
            seq: 0,
            next_job: 0,
            updates: 0,
            modifications: 0,
            publications: 0,
            push_bytes: 0,
            syncs_run: 0,
            started: Instant::now(),
        }
    }

    pub fn next_seq(&mut self) -> u64 {
        let s = self.seq;
        self.seq += 1;
        s
    }

    /// Stamps, counts, and queues one envelope. Destinations may include
    /// this machine; drivers deliver self-sends through the same FIFO path.
    pub fn send(&mut self, fx: &mut Effects, dest: u32, payload: Payload) {
        self.counters.on_send(&payload);
        let clock = self.clock.tick();
        fx.sends.push((dest, Envelope { sender: self.me, clock, payload }));
    }

    /// Sends to every machine, this one included, in machine order.
    pub fn broadcast(&mut self, fx: &mut Effects, payload: Payload) {
        for dest in 0..self.machines {
            self.send(fx, dest, payload.clone());
        }
    }

    /// Folds a received envelope into the clock and counters. Call before
    /// acting on it.
    pub fn observe(&mut self, env: &Envelope) {
        self.clock.observe(env.clock);
        self.clock.tick();
        self.counters.on_receive(&env.payload);
    }

    pub fn log_start(&mut self) {
        let clock = self.clock.tick();
        let seq = self.next_seq();
        self.log.push(LogRecord::Start {
            machine: self.me,
            clock,
            seq,
            owned: self.local.owned().len() as u32,
            ghosts: self.local.ghosts().len() as u32,
        });
    }

    pub fn log_halt(&mut self) {
        let clock = self.clock.tick();
        let seq = self.next_seq();
        self.log.push(LogRecord::Halt { machine: self.me, clock, seq, updates: self.updates });
    }

    pub fn log_sync_fire(&mut self, sync_id: u32, key: &str, result: &[u8]) {
        let clock = self.clock.tick();
        let seq = self.next_seq();
        self.log.push(LogRecord::SyncFire {
            machine: self.me,
            clock,
            seq,
            sync_id,
            key: key.to_string(),
            result: result.to_vec(),
        });
    }

    /// Builds the job for one scheduled task: scope snapshot and globals as
    /// of right now.
    pub fn make_job(&mut self, task: UpdateTask) -> JobSpec {
        let job = self.next_job;
        self.next_job += 1;
        JobSpec {
            job,
            task,
            snapshot: self.local.scope_snapshot(task.vertex),
            model: self.model,
            globals: self.globals.clone(),
        }
    }

    /// Commits one finished update: logs it, applies its writes, pushes
    /// every changed datum one hop to every replica holder, and routes the
    /// tasks it posted. Lock releases and update counting stay with the
    /// caller.
    pub fn commit(&mut self, fx: &mut Effects, outcome: JobOutcome) {
        let clock = self.clock.tick();
        let seq = self.next_seq();
        let hash = write_hash(outcome.writes.iter().map(|(id, bytes)| (*id, bytes)));
        let touched: Vec<DatumId> = outcome.writes.keys().copied().collect();
        self.log.push(LogRecord::Commit {
            machine: self.me,
            clock,
            seq,
            task: outcome.task,
            writes: touched,
            hash,
        });
        let committed = self.local.commit_writes(outcome.writes);
        self.updates += 1;
        self.modifications += committed.len() as u64;
        let plan = plan_pushes(&self.local, &committed);
        self.publications += plan.publications;
        self.push_bytes += plan.bytes;
        for (dest, payload) in plan.envelopes {
            self.send(fx, dest, payload);
        }
        self.route_tasks(fx, outcome.new_tasks);
    }

    /// Owned tasks join the local scheduler; the rest go to their owners.
    pub fn route_tasks(&mut self, fx: &mut Effects, tasks: Vec<(UpdateTask, f64)>) {
        for (task, priority) in tasks {
            if self.local.is_owned(task.vertex) {
                self.scheduler.add(task, priority);
            } else {
                let owner = self.local.owner(task.vertex);
                self.send(
                    fx,
                    owner,
                    Payload::TaskPost { vertex: task.vertex, fn_id: task.fn_id, priority },
                );
            }
        }
    }

    /// This machine's share of one aggregation: owned vertices, ascending.
    pub fn fold_partial(&mut self, def: &SyncDef) -> Vec<u8> {
        self.syncs_run += 1;
        def.fold_partial(self.local.owned().iter().map(|&v| {
            let datum = self.local.datum(DatumId::Vertex(v)).expect("owned vertex datum");
            (v, datum.bytes.as_slice())
        }))
    }

    /// Publishes one finalized sync value where scopes can read it.
    pub fn set_global(&mut self, key: &str, value: Vec<u8>) {
        let mut map = (*self.globals).clone();
        map.insert(key.to_string(), value);
        self.globals = Arc::new(map);
    }

    pub fn export(
        &mut self,
        sweeps: u32,
        max_in_flight: u32,
        sync_results: BTreeMap<String, Vec<Vec<u8>>>,
    ) -> MachineExport {
        MachineExport {
            machine: self.me,
            local: std::mem::take(&mut self.local),
            log: std::mem::take(&mut self.log),
            counters: self.counters,
            updates: self.updates,
            modifications: self.modifications,
            publications: self.publications,
            push_bytes: self.push_bytes,
            syncs_run: self.syncs_run,
            sweeps,
            max_in_flight,
            sync_results,
            wall_ms: self.started.elapsed().as_millis() as u64,
        }
    }
}
