//! Pipelined locking engine. Each scheduled task becomes a ticket that
//! acquires its scope's read/write locks in ascending vertex order, chained
//! — the next lock is requested only once the previous one is granted — so
//! every wait points at a higher vertex and no cycle can form. Locks on
//! vertices this machine owns are taken against the local table; locks on
//! remote vertices go to their owner, and the grant carries the owner's
//! current copy of that vertex so the requester snapshots fresh data.
//!
//! Freshness of edge replicas rides on ordering instead: a committing
//! machine sends its data pushes before its lock releases, and per-pair
//! delivery is FIFO, so an owner always has the new bytes applied before it
//! grants the next conflicting ticket.
//!
//! Termination and aggregation both rest on a circulating token that sums
//! basic-traffic counters and ANDs idle/drained flags across the ring. Two
//! consecutive rings that are idle with identical, balanced counters prove
//! global quiescence. To fire a sync mid-run, machine 0 tells everyone to
//! drain (finish in-flight tickets, dispatch nothing new, keep serving lock
//! requests), waits for drained quiescence, then has each machine fold its
//! owned vertices; machines resume when the finalized result comes back. At
//! termination the coordinator stops all dispatch for good, runs every
//! sync's final publish over the now-static graph, and halts the ring.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::comm::{Payload, SyncMsg, TermDetector, TermMsg};
use crate::graph::{DatumId, VertexId};
use crate::locks::{plan_locks, Holder, LockMode, LockTable, PipelineBudget, RequestOutcome};
use crate::partition::LocalGraph;
use crate::scheduler::{SchedulerKind, UpdateTask};

use super::log::LogRecord;
use super::machine::MachineBase;
use super::{Effects, Event, InitialTasks, MachineCore, MachineExport, Program, RunOptions};

/// Pseudo sync id carried by the drain that stops all dispatch at
/// termination; there is no fold behind it.
const STOP_SYNC: u32 = u32::MAX;

pub(super) struct LockingCore {
    base: MachineBase,
    max_updates: u64,
    budget: PipelineBudget,
    table: LockTable,
    tickets: BTreeMap<u64, Ticket>,
    /// Job id -> ticket id for in-flight executions.
    by_job: BTreeMap<u64, u64>,
    next_ticket: u64,
    mode: Mode,
    halted: bool,
    coord: Option<LockCoord>,
}

/// One task's march through its lock plan.
struct Ticket {
    task: UpdateTask,
    plan: Vec<(VertexId, LockMode)>,
    /// Locks held so far — always a prefix of `plan`.
    granted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Dispatching new tickets freely.
    Running,
    /// Told to quiesce: no new dispatches, in-flight tickets run to
    /// completion, lock requests still served.
    Draining { barrier: u64, sync_id: u32, resume_stopped: bool },
    /// Folded and sent this machine's partial; waiting for the result.
    AwaitResult { sync_id: u32, resume_stopped: bool },
    /// Dispatch stopped for good; only the final sync flush remains.
    Stopped,
}

/// Machine 0's extra hat: the global update count, sync cadence, drain
/// sequencing, and termination detection.
struct LockCoord {
    /// Committed updates reported so far via count deltas.
    u_view: u64,
    /// Per sync def: multiples of tau fired so far.
    fired: Vec<u64>,
    /// Sync ids due to fire, oldest first.
    queue: VecDeque<u32>,
    ctx: Ctx,
    detector: TermDetector,
    token_home: bool,
    ring: u64,
    barrier: u64,
    /// Termination decided: the stop drain has been issued.
    terminal: bool,
    /// Every machine is stopped, so firings no longer need a drain phase.
    static_mode: bool,
    sync_results: BTreeMap<String, Vec<Vec<u8>>>,
}

enum Ctx {
    /// Watching for due syncs and, via the token, for termination.
    Idle,
    /// A drain is out; waiting for drained quiescence.
    AwaitDrain { barrier: u64, sync_id: u32 },
    /// Fold ordered; collecting per-machine partials.
    AwaitAccs { sync_id: u32, partials: Vec<Option<Vec<u8>>> },
}

impl LockingCore {
    pub fn new(
        opts: &RunOptions,
        program: Arc<Program>,
        local: LocalGraph,
        initial: &InitialTasks,
    ) -> Self {
        assert_ne!(
            opts.scheduler,
            SchedulerKind::Sweep,
            "the locking engine schedules by fifo or priority"
        );
        let base = MachineBase::new(opts, program, local, initial);
        let coord = (base.me == 0).then(|| LockCoord {
            u_view: 0,
            fired: vec![0; base.program.syncs.len()],
            queue: VecDeque::new(),
            ctx: Ctx::Idle,
            detector: TermDetector::new(),
            token_home: true,
            ring: 0,
            barrier: 0,
            terminal: false,
            static_mode: false,
            sync_results: BTreeMap::new(),
        });
        LockingCore {
            base,
            max_updates: opts.max_updates,
            budget: PipelineBudget::new(opts.maxpending as usize, opts.workers.max(1) as usize),
            table: LockTable::new(),
            tickets: BTreeMap::new(),
            by_job: BTreeMap::new(),
            next_ticket: 0,
            mode: Mode::Running,
            halted: false,
            coord,
        }
    }

    fn my_idle(&self) -> bool {
        matches!(self.mode, Mode::Running)
            && self.budget.in_flight() == 0
            && self.base.scheduler.is_empty()
    }

    fn my_drained(&self) -> bool {
        self.budget.in_flight() == 0
    }

    /// Admits tickets from the scheduler up to the pipeline cap.
    fn dispatch(&mut self, fx: &mut Effects) {
        if !matches!(self.mode, Mode::Running) {
            return;
        }
        while self.base.scheduler.pending_count() > 0 && self.budget.try_admit() {
            let task = self.base.scheduler.remove_next().expect("scheduler reported pending");
            let tid = self.next_ticket;
            self.next_ticket += 1;
            let plan =
                plan_locks(task.vertex, self.base.local.neighbors(task.vertex), self.base.model);
            self.tickets.insert(tid, Ticket { task, plan, granted: 0 });
            self.progress(fx, tid);
        }
    }

    /// Chains a ticket forward: local grants short-circuit synchronously,
    /// a remote request or a full queue parks it, a complete plan launches
    /// the job.
    fn progress(&mut self, fx: &mut Effects, tid: u64) {
        loop {
            let t = self.tickets.get(&tid).expect("live ticket");
            if t.granted == t.plan.len() {
                let spec = self.base.make_job(t.task);
                self.by_job.insert(spec.job, tid);
                fx.jobs.push(spec);
                return;
            }
            let (vertex, mode) = t.plan[t.granted];
            let holder = Holder { machine: self.base.me, ticket: tid };
            if self.base.local.is_owned(vertex) {
                match self.table.request(vertex, mode, holder).expect("lock protocol") {
                    RequestOutcome::Granted => {
                        self.log_grant(vertex, self.base.me, tid, mode);
                        self.tickets.get_mut(&tid).expect("live ticket").granted += 1;
                    }
                    RequestOutcome::Queued => return,
                }
            } else {
                let owner = self.base.local.owner(vertex);
                self.base.send(fx, owner, Payload::LockRequest { ticket: tid, vertex, mode });
                return;
            }
        }
    }

    fn log_grant(&mut self, vertex: VertexId, requester: u32, ticket: u64, mode: LockMode) {
        let clock = self.base.clock.tick();
        let seq = self.base.next_seq();
        self.base.log.push(LogRecord::Grant {
            machine: self.base.me,
            clock,
            seq,
            vertex: vertex.0,
            requester,
            ticket,
            mode,
        });
    }

    fn log_release(&mut self, vertex: VertexId, requester: u32, ticket: u64) {
        let clock = self.base.clock.tick();
        let seq = self.base.next_seq();
        self.base.log.push(LogRecord::Release {
            machine: self.base.me,
            clock,
            seq,
            vertex: vertex.0,
            requester,
            ticket,
        });
    }

    /// Sends a remote requester its grant, with the owner's current copy of
    /// the vertex so the requester snapshots fresh data.
    fn send_grant(&mut self, fx: &mut Effects, dest: u32, ticket: u64, vertex: VertexId) {
        let datum =
            self.base.local.datum(DatumId::Vertex(vertex)).expect("granting an owned vertex");
        let data = Some((datum.bytes.clone(), datum.version));
        self.base.send(fx, dest, Payload::LockGrant { ticket, vertex, data });
    }

    /// Hands a release's newly granted batch out: remote holders get grant
    /// envelopes, local tickets resume their chains.
    fn grant_batch(&mut self, fx: &mut Effects, vertex: VertexId, batch: Vec<(Holder, LockMode)>) {
        let mut resumed = Vec::new();
        for (holder, mode) in batch {
            self.log_grant(vertex, holder.machine, holder.ticket, mode);
            if holder.machine == self.base.me {
                self.tickets.get_mut(&holder.ticket).expect("live ticket").granted += 1;
                resumed.push(holder.ticket);
            } else {
                self.send_grant(fx, holder.machine, holder.ticket, vertex);
            }
        }
        for tid in resumed {
            self.progress(fx, tid);
        }
    }

    /// Commit path: writes and pushes first, then the releases, so every
    /// owner sees the new bytes (FIFO per pair) before it re-grants.
    fn on_job_done(&mut self, fx: &mut Effects, outcome: super::JobOutcome) {
        let tid = self.by_job.remove(&outcome.job).expect("job belongs to a ticket");
        self.base.commit(fx, outcome);
        let t = self.tickets.remove(&tid).expect("live ticket");
        debug_assert_eq!(t.granted, t.plan.len(), "job ran without all locks");
        for &(vertex, _) in &t.plan {
            let holder = Holder { machine: self.base.me, ticket: tid };
            if self.base.local.is_owned(vertex) {
                self.log_release(vertex, self.base.me, tid);
                let batch = self.table.release(vertex, holder).expect("release held lock");
                self.grant_batch(fx, vertex, batch);
            } else {
                let owner = self.base.local.owner(vertex);
                self.base.send(fx, owner, Payload::LockRelease { ticket: tid, vertex });
            }
        }
        self.budget.complete();
        self.base.send(fx, 0, Payload::SyncPartial(SyncMsg::CountDelta { updates: 1 }));
        self.dispatch(fx);
    }

    /// Coordinator: fires whatever is due, or halts once the terminal flush
    /// is done. Only acts from the idle context.
    fn coordinate(&mut self, fx: &mut Effects) {
        let program = self.base.program.clone();
        {
            let c = self.coord.as_mut().expect("coordinator");
            if !matches!(c.ctx, Ctx::Idle) {
                return;
            }
            if !c.terminal {
                for (i, def) in program.syncs.iter().enumerate() {
                    while (c.fired[i] + 1) * def.tau <= c.u_view {
                        c.fired[i] += 1;
                        c.queue.push_back(i as u32);
                    }
                }
            }
            if let Some(sync_id) = c.queue.pop_front() {
                c.barrier += 1;
                let barrier = c.barrier;
                if c.static_mode {
                    // Everyone is stopped and the wires are empty: order the
                    // fold directly, no drain phase needed.
                    c.ctx = Ctx::AwaitAccs {
                        sync_id,
                        partials: vec![None; self.base.machines as usize],
                    };
                    self.base
                        .broadcast(fx, Payload::SyncPartial(SyncMsg::Begin { sync_id, barrier }));
                    self.base.broadcast(fx, Payload::BarrierRelease { barrier });
                } else {
                    c.ctx = Ctx::AwaitDrain { barrier, sync_id };
                    c.detector.reset();
                    self.base
                        .broadcast(fx, Payload::SyncPartial(SyncMsg::Begin { sync_id, barrier }));
                }
                return;
            }
            if c.terminal {
                self.base.broadcast(fx, Payload::TermToken(TermMsg::Halt));
                return;
            }
        }
        if self.max_updates > 0 {
            let over = self.coord.as_ref().expect("coordinator").u_view >= self.max_updates;
            if over {
                self.begin_terminal(fx);
            }
        }
    }

    /// Coordinator: stops all dispatch for good, ahead of the final sync
    /// flush and the halt.
    fn begin_terminal(&mut self, fx: &mut Effects) {
        let c = self.coord.as_mut().expect("coordinator");
        debug_assert!(!c.terminal);
        debug_assert!(c.queue.is_empty(), "due firings must precede termination");
        c.terminal = true;
        c.barrier += 1;
        let barrier = c.barrier;
        c.ctx = Ctx::AwaitDrain { barrier, sync_id: STOP_SYNC };
        c.detector.reset();
        self.base
            .broadcast(fx, Payload::SyncPartial(SyncMsg::Begin { sync_id: STOP_SYNC, barrier }));
    }

    /// Coordinator: a token ring came home.
    fn on_token_home(
        &mut self,
        fx: &mut Effects,
        all_idle: bool,
        all_drained: bool,
        sent: u64,
        received: u64,
    ) {
        let c = self.coord.as_mut().expect("token returned to non-coordinator");
        c.token_home = true;
        match c.ctx {
            Ctx::AwaitDrain { barrier, sync_id } => {
                if !c.detector.ring_complete(all_drained, sent, received) {
                    return;
                }
                self.base.broadcast(fx, Payload::BarrierRelease { barrier });
                let c = self.coord.as_mut().expect("coordinator");
                if sync_id == STOP_SYNC {
                    c.static_mode = true;
                    c.ctx = Ctx::Idle;
                    for i in 0..self.base.program.syncs.len() {
                        c.queue.push_back(i as u32);
                    }
                    self.coordinate(fx);
                } else {
                    c.ctx = Ctx::AwaitAccs {
                        sync_id,
                        partials: vec![None; self.base.machines as usize],
                    };
                }
            }
            Ctx::Idle => {
                if !c.terminal && c.detector.ring_complete(all_idle, sent, received) {
                    self.begin_terminal(fx);
                }
            }
            Ctx::AwaitAccs { .. } => {}
        }
    }

    /// Coordinator: one machine's fold arrived.
    fn on_acc(&mut self, fx: &mut Effects, sender: u32, sync_id: u32, bytes: Vec<u8>) {
        let program = self.base.program.clone();
        let c = self.coord.as_mut().expect("sync partial sent to non-coordinator");
        let Ctx::AwaitAccs { sync_id: open, partials } = &mut c.ctx else {
            panic!("sync partial with no collection open");
        };
        assert_eq!(*open, sync_id, "partial for a different sync");
        let slot = &mut partials[sender as usize];
        assert!(slot.is_none(), "machine {sender} sent two partials");
        *slot = Some(bytes);
        if partials.iter().any(|p| p.is_none()) {
            return;
        }
        let partials: Vec<Vec<u8>> =
            std::mem::take(partials).into_iter().map(Option::unwrap).collect();
        let def = &program.syncs[sync_id as usize];
        let result = def.merge_and_finalize(&partials);
        self.base.log_sync_fire(sync_id, &def.key, &result);
        let c = self.coord.as_mut().expect("coordinator");
        c.sync_results.entry(def.key.clone()).or_default().push(result.clone());
        c.ctx = Ctx::Idle;
        self.base.broadcast(fx, Payload::SyncResult { sync_id, bytes: result });
        self.coordinate(fx);
    }

    /// Coordinator: relaunches the token whenever it is home and wanted —
    /// always while awaiting a drain, and while idle-watching only when this
    /// machine itself is idle (a busy coordinator cannot be part of a
    /// quiescent system anyway).
    fn pump_token(&mut self, fx: &mut Effects) {
        if self.halted {
            return;
        }
        let idle = self.my_idle();
        let drained = self.my_drained();
        let Some(c) = self.coord.as_mut() else { return };
        if !c.token_home {
            return;
        }
        let wanted = match c.ctx {
            Ctx::AwaitDrain { .. } => true,
            Ctx::Idle => !c.terminal && idle,
            Ctx::AwaitAccs { .. } => false,
        };
        if !wanted {
            return;
        }
        c.token_home = false;
        c.ring += 1;
        let token = Payload::TermToken(TermMsg::Token {
            ring: c.ring,
            all_idle: idle,
            all_drained: drained,
            sent: self.base.counters.sent,
            received: self.base.counters.received,
        });
        self.base.send(fx, 1 % self.base.machines, token);
    }

    fn deliver(&mut self, fx: &mut Effects, sender: u32, payload: Payload) {
        match payload {
            Payload::LockRequest { ticket, vertex, mode } => {
                debug_assert!(self.base.local.is_owned(vertex), "lock request to non-owner");
                let holder = Holder { machine: sender, ticket };
                match self.table.request(vertex, mode, holder).expect("lock protocol") {
                    RequestOutcome::Granted => {
                        self.log_grant(vertex, sender, ticket, mode);
                        self.send_grant(fx, sender, ticket, vertex);
                    }
                    RequestOutcome::Queued => {}
                }
            }
            Payload::LockGrant { ticket, vertex, data } => {
                if let Some((bytes, version)) = data {
                    self.base.local.apply_push(DatumId::Vertex(vertex), bytes, version);
                }
                self.tickets.get_mut(&ticket).expect("live ticket").granted += 1;
                self.progress(fx, ticket);
            }
            Payload::LockRelease { ticket, vertex } => {
                debug_assert!(self.base.local.is_owned(vertex), "lock release to non-owner");
                self.log_release(vertex, sender, ticket);
                let holder = Holder { machine: sender, ticket };
                let batch = self.table.release(vertex, holder).expect("release held lock");
                self.grant_batch(fx, vertex, batch);
            }
            Payload::DataPush { id, bytes, version } => {
                self.base.local.apply_push(id, bytes, version);
            }
            Payload::TaskPost { vertex, fn_id, priority } => {
                debug_assert!(self.base.local.is_owned(vertex), "task posted to non-owner");
                self.base.scheduler.add(UpdateTask { fn_id, vertex }, priority);
                self.dispatch(fx);
            }
            Payload::SyncPartial(SyncMsg::CountDelta { updates }) => {
                let c = self.coord.as_mut().expect("count delta sent to non-coordinator");
                c.u_view += updates;
                self.coordinate(fx);
            }
            Payload::SyncPartial(SyncMsg::Begin { sync_id, barrier }) => {
                debug_assert!(
                    matches!(self.mode, Mode::Running | Mode::Stopped),
                    "overlapping drains"
                );
                let resume_stopped = matches!(self.mode, Mode::Stopped);
                self.mode = Mode::Draining { barrier, sync_id, resume_stopped };
            }
            Payload::SyncPartial(SyncMsg::Acc { sync_id, bytes, .. }) => {
                self.on_acc(fx, sender, sync_id, bytes);
            }
            Payload::BarrierRelease { barrier } => {
                let Mode::Draining { barrier: expected, sync_id, resume_stopped } = self.mode
                else {
                    panic!("barrier release while not draining");
                };
                assert_eq!(barrier, expected, "release for a different drain");
                debug_assert_eq!(self.budget.in_flight(), 0, "released before drained");
                if sync_id == STOP_SYNC {
                    self.mode = Mode::Stopped;
                } else {
                    let program = self.base.program.clone();
                    let partial = self.base.fold_partial(&program.syncs[sync_id as usize]);
                    self.base.send(
                        fx,
                        0,
                        Payload::SyncPartial(SyncMsg::Acc { sync_id, barrier, bytes: partial }),
                    );
                    self.mode = Mode::AwaitResult { sync_id, resume_stopped };
                }
            }
            Payload::SyncResult { sync_id, bytes } => {
                let key = self.base.program.syncs[sync_id as usize].key.clone();
                self.base.set_global(&key, bytes);
                if let Mode::AwaitResult { sync_id: awaited, resume_stopped } = self.mode {
                    debug_assert_eq!(awaited, sync_id, "result for a different sync");
                    self.mode = if resume_stopped { Mode::Stopped } else { Mode::Running };
                    self.dispatch(fx);
                }
            }
            Payload::TermToken(TermMsg::Token { ring, all_idle, all_drained, sent, received }) => {
                if self.base.me == 0 {
                    let _ = ring;
                    self.on_token_home(fx, all_idle, all_drained, sent, received);
                } else {
                    let token = Payload::TermToken(TermMsg::Token {
                        ring,
                        all_idle: all_idle && self.my_idle(),
                        all_drained: all_drained && self.my_drained(),
                        sent: sent + self.base.counters.sent,
                        received: received + self.base.counters.received,
                    });
                    self.base.send(fx, (self.base.me + 1) % self.base.machines, token);
                }
            }
            Payload::TermToken(TermMsg::Halt) => {
                self.base.log_halt();
                self.halted = true;
                fx.halted = true;
            }
            Payload::BarrierEnter { .. } => {
                panic!("park reports belong to the color-stepped engine")
            }
        }
    }
}

impl MachineCore for LockingCore {
    fn handle(&mut self, event: Event, fx: &mut Effects) {
        match event {
            Event::Start => {
                self.base.log_start();
                self.dispatch(fx);
            }
            Event::JobDone(outcome) => self.on_job_done(fx, outcome),
            Event::Deliver(env) => {
                self.base.observe(&env);
                let sender = env.sender;
                self.deliver(fx, sender, env.payload);
            }
        }
        if !self.halted {
            self.pump_token(fx);
        }
    }

    fn is_halted(&self) -> bool {
        self.halted
    }

    fn local(&self) -> &LocalGraph {
        &self.base.local
    }

    fn finish(&mut self) -> MachineExport {
        let sync_results = self
            .coord
            .as_mut()
            .map(|c| std::mem::take(&mut c.sync_results))
            .unwrap_or_default();
        self.base.export(0, self.budget.high_water() as u32, sync_results)
    }
}
