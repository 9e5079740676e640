//! Color-stepped engine. Execution proceeds in phases, one color class per
//! phase, with a flush barrier between phases: a machine parks once its
//! frozen batch is done, machine 0 releases everyone once every machine has
//! parked and the basic-traffic counters balance. Scopes of same-colored
//! vertices never share data the other may write (that is what the coloring
//! guarantees for the chosen consistency model), so jobs within a phase
//! commute and the run is reproducible bit for bit whatever the machine or
//! worker counts.
//!
//! Parked machines never originate basic traffic — data pushes go one hop,
//! straight from the committing machine to every replica holder — so a
//! park report's `sent` count is final the moment it is sent, and balanced
//! counters prove nothing is still in flight.
//!
//! Aggregations run at barriers, where the graph is globally quiet: machine
//! 0 fires each sync once per multiple of its cadence the global update
//! count has crossed, and once more at termination.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::comm::{BarrierTracker, Payload, SyncMsg, TermMsg};
use crate::partition::LocalGraph;
use crate::scheduler::{SchedulerKind, UpdateTask};

use super::machine::MachineBase;
use super::{Effects, Event, InitialTasks, MachineCore, MachineExport, Program, RunOptions};

pub(super) struct ChromaticCore {
    base: MachineBase,
    workers: u32,
    num_colors: u32,
    max_sweeps: u32,
    max_updates: u64,
    /// Color class now executing.
    color: u32,
    /// Completed passes over all color classes.
    sweep: u32,
    /// Phases completed so far; names the barrier this phase ends at.
    barrier: u64,
    /// This phase's batch, frozen at phase start. Same-colored tasks posted
    /// mid-phase wait in the scheduler for the next sweep.
    frozen: VecDeque<UpdateTask>,
    jobs_out: u32,
    jobs_high_water: u32,
    parked: bool,
    /// Last (sent, received, updates, pending) reported while parked; the
    /// report is re-sent whenever any of them moves.
    last_report: Option<(u64, u64, u64, u64)>,
    halted: bool,
    coord: Option<Coordinator>,
}

/// Machine 0's extra hat: barrier bookkeeping and sync firing.
struct Coordinator {
    tracker: BarrierTracker,
    /// Whether this barrier's due syncs and the termination check already
    /// ran; they must run once per barrier, on first readiness.
    dues_computed: bool,
    firing_queue: VecDeque<u32>,
    collecting: Option<Collect>,
    /// Per sync def: multiples of tau fired so far.
    fired: Vec<u64>,
    /// Termination decided; halt once the firing queue drains.
    finishing: bool,
    sync_results: BTreeMap<String, Vec<Vec<u8>>>,
}

struct Collect {
    sync_id: u32,
    partials: Vec<Option<Vec<u8>>>,
}

impl ChromaticCore {
    pub fn new(
        opts: &RunOptions,
        program: Arc<Program>,
        local: LocalGraph,
        initial: &InitialTasks,
    ) -> Self {
        assert_eq!(
            opts.scheduler,
            SchedulerKind::Sweep,
            "the color-stepped engine schedules by sweep"
        );
        let base = MachineBase::new(opts, program, local, initial);
        let coord = (base.me == 0).then(|| Coordinator {
            tracker: BarrierTracker::new(opts.machines, 0),
            dues_computed: false,
            firing_queue: VecDeque::new(),
            collecting: None,
            fired: vec![0; base.program.syncs.len()],
            finishing: false,
            sync_results: BTreeMap::new(),
        });
        let num_colors = base.local.num_colors();
        ChromaticCore {
            base,
            workers: opts.workers.max(1),
            num_colors,
            max_sweeps: opts.max_sweeps,
            max_updates: opts.max_updates,
            color: 0,
            sweep: 0,
            barrier: 0,
            frozen: VecDeque::new(),
            jobs_out: 0,
            jobs_high_water: 0,
            parked: false,
            last_report: None,
            halted: false,
            coord,
        }
    }

    fn begin_phase(&mut self, fx: &mut Effects) {
        self.parked = false;
        self.last_report = None;
        self.frozen = self.base.scheduler.drain_color(self.color).into();
        self.pump(fx);
        self.maybe_park(fx);
    }

    /// Keeps up to `workers` jobs in flight from the frozen batch.
    fn pump(&mut self, fx: &mut Effects) {
        while self.jobs_out < self.workers {
            let Some(task) = self.frozen.pop_front() else { break };
            let spec = self.base.make_job(task);
            self.jobs_out += 1;
            self.jobs_high_water = self.jobs_high_water.max(self.jobs_out);
            fx.jobs.push(spec);
        }
    }

    fn maybe_park(&mut self, fx: &mut Effects) {
        if !self.parked && self.frozen.is_empty() && self.jobs_out == 0 {
            self.parked = true;
            self.report(fx);
        }
    }

    fn report(&mut self, fx: &mut Effects) {
        let state = (
            self.base.counters.sent,
            self.base.counters.received,
            self.base.updates,
            self.base.scheduler.pending_count() as u64,
        );
        if self.last_report == Some(state) {
            return;
        }
        self.last_report = Some(state);
        let (sent, received, updates, pending) = state;
        self.base.send(
            fx,
            0,
            Payload::BarrierEnter { barrier: self.barrier, sent, received, updates, pending },
        );
    }

    /// Parked machines re-report when late traffic lands, so the
    /// coordinator's counter view converges.
    fn re_report(&mut self, fx: &mut Effects) {
        if self.parked {
            self.report(fx);
        }
    }

    /// Coordinator: advances the barrier conversation as far as the current
    /// reports allow — due syncs first, then release or halt.
    fn continue_barrier(&mut self, fx: &mut Effects) {
        let Some(c) = self.coord.as_mut() else { return };
        if c.collecting.is_some() || !c.tracker.ready() {
            return;
        }
        if !c.dues_computed {
            c.dues_computed = true;
            let total = c.tracker.total_updates();
            for (i, def) in self.base.program.syncs.iter().enumerate() {
                while (c.fired[i] + 1) * def.tau <= total {
                    c.fired[i] += 1;
                    c.firing_queue.push_back(i as u32);
                }
            }
            let exhausted = c.tracker.total_pending() == 0;
            let end_of_sweep = self.color + 1 == self.num_colors;
            let out_of_sweeps =
                end_of_sweep && self.max_sweeps > 0 && self.sweep + 1 >= self.max_sweeps;
            let over_budget = self.max_updates > 0 && total >= self.max_updates;
            if exhausted || out_of_sweeps || over_budget {
                c.finishing = true;
                for i in 0..self.base.program.syncs.len() {
                    c.firing_queue.push_back(i as u32);
                }
            }
        }
        if let Some(sync_id) = c.firing_queue.pop_front() {
            c.collecting = Some(Collect {
                sync_id,
                partials: vec![None; self.base.machines as usize],
            });
            self.base
                .broadcast(fx, Payload::SyncPartial(SyncMsg::Begin { sync_id, barrier: self.barrier }));
            return;
        }
        if c.finishing {
            self.base.broadcast(fx, Payload::TermToken(TermMsg::Halt));
        } else {
            c.dues_computed = false;
            c.tracker = BarrierTracker::new(self.base.machines, self.barrier + 1);
            self.base.broadcast(fx, Payload::BarrierRelease { barrier: self.barrier });
        }
    }

    /// Coordinator: one machine's share of the sync being collected.
    fn on_acc(&mut self, fx: &mut Effects, sender: u32, sync_id: u32, bytes: Vec<u8>) {
        let c = self.coord.as_mut().expect("sync partial sent to non-coordinator");
        let collect = c.collecting.as_mut().expect("sync partial with no collection open");
        assert_eq!(collect.sync_id, sync_id, "partial for a different sync");
        let slot = &mut collect.partials[sender as usize];
        assert!(slot.is_none(), "machine {sender} sent two partials");
        *slot = Some(bytes);
        if collect.partials.iter().any(|p| p.is_none()) {
            return;
        }
        let done = c.collecting.take().expect("collection just completed");
        let program = self.base.program.clone();
        let def = &program.syncs[done.sync_id as usize];
        let partials: Vec<Vec<u8>> = done.partials.into_iter().map(Option::unwrap).collect();
        let result = def.merge_and_finalize(&partials);
        self.base.log_sync_fire(done.sync_id, &def.key, &result);
        let c = self.coord.as_mut().expect("still coordinator");
        c.sync_results.entry(def.key.clone()).or_default().push(result.clone());
        self.base
            .broadcast(fx, Payload::SyncResult { sync_id: done.sync_id, bytes: result });
        self.continue_barrier(fx);
    }

    fn advance_phase(&mut self, fx: &mut Effects) {
        self.barrier += 1;
        self.color += 1;
        if self.color == self.num_colors {
            self.color = 0;
            self.sweep += 1;
        }
        self.begin_phase(fx);
    }

    fn halt(&mut self, fx: &mut Effects) {
        // A halt at the last color's barrier closes that sweep.
        if self.color + 1 == self.num_colors {
            self.sweep += 1;
        }
        self.base.log_halt();
        self.halted = true;
        fx.halted = true;
    }
}

impl MachineCore for ChromaticCore {
    fn handle(&mut self, event: Event, fx: &mut Effects) {
        match event {
            Event::Start => {
                self.base.log_start();
                self.begin_phase(fx);
            }
            Event::JobDone(outcome) => {
                self.jobs_out -= 1;
                self.base.commit(fx, outcome);
                self.pump(fx);
                self.maybe_park(fx);
            }
            Event::Deliver(env) => {
                self.base.observe(&env);
                let sender = env.sender;
                match env.payload {
                    Payload::DataPush { id, bytes, version } => {
                        self.base.local.apply_push(id, bytes, version);
                        self.re_report(fx);
                    }
                    Payload::TaskPost { vertex, fn_id, priority } => {
                        debug_assert!(self.base.local.is_owned(vertex), "task posted to non-owner");
                        self.base.scheduler.add(UpdateTask { fn_id, vertex }, priority);
                        self.re_report(fx);
                    }
                    Payload::BarrierEnter { barrier, sent, received, updates, pending } => {
                        let c = self.coord.as_mut().expect("park report sent to non-coordinator");
                        c.tracker.record(sender, barrier, sent, received, updates, pending);
                        self.continue_barrier(fx);
                    }
                    Payload::SyncPartial(SyncMsg::Begin { sync_id, barrier }) => {
                        debug_assert!(self.parked, "sync begin while running");
                        debug_assert_eq!(barrier, self.barrier, "sync begin for a different phase");
                        let program = self.base.program.clone();
                        let partial = self.base.fold_partial(&program.syncs[sync_id as usize]);
                        self.base.send(
                            fx,
                            0,
                            Payload::SyncPartial(SyncMsg::Acc { sync_id, barrier, bytes: partial }),
                        );
                    }
                    Payload::SyncPartial(SyncMsg::Acc { sync_id, bytes, .. }) => {
                        self.on_acc(fx, sender, sync_id, bytes);
                    }
                    Payload::SyncResult { sync_id, bytes } => {
                        let key = self.base.program.syncs[sync_id as usize].key.clone();
                        self.base.set_global(&key, bytes);
                    }
                    Payload::BarrierRelease { barrier } => {
                        assert!(self.parked, "release while running");
                        assert_eq!(barrier, self.barrier, "release for a different phase");
                        self.advance_phase(fx);
                    }
                    Payload::TermToken(TermMsg::Halt) => self.halt(fx),
                    other => {
                        panic!("color-stepped engine got a {} envelope", other.kind_name())
                    }
                }
            }
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
        self.base.export(self.sweep, self.jobs_high_water, sync_results)
    }
}
