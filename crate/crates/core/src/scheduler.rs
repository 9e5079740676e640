//! Task schedulers: the dynamic set of pending (update function, vertex)
//! pairs each machine works through.
//!
//! All kinds deduplicate: adding a task that is already pending merges
//! rather than duplicates, keeping the maximum priority. A task currently
//! being executed has already been removed, so re-adding it is permitted.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::graph::VertexId;

/// One unit of pending work: run update function `fn_id` on `vertex`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct UpdateTask {
    pub fn_id: u32,
    pub vertex: VertexId,
}

impl UpdateTask {
    pub fn new(fn_id: u32, vertex: VertexId) -> Self {
        UpdateTask { fn_id, vertex }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    /// Ascending (color, vertex, fn) order; the chromatic engine's ordering.
    Sweep,
    /// Oldest pending task first.
    Fifo,
    /// Highest priority first, ties broken toward the lower vertex id.
    Priority,
}

impl SchedulerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sweep" => Some(SchedulerKind::Sweep),
            "fifo" => Some(SchedulerKind::Fifo),
            "priority" => Some(SchedulerKind::Priority),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SchedulerKind::Sweep => "sweep",
            SchedulerKind::Fifo => "fifo",
            SchedulerKind::Priority => "priority",
        }
    }
}

#[derive(Debug)]
struct PrioEntry {
    priority: f64,
    task: UpdateTask,
}

impl PartialEq for PrioEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PrioEntry {}

impl Ord for PrioEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: higher priority wins, then lower vertex, then lower fn
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.task.vertex.cmp(&self.task.vertex))
            .then_with(|| other.task.fn_id.cmp(&self.task.fn_id))
    }
}

impl PartialOrd for PrioEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
enum Inner {
    Fifo {
        queue: VecDeque<UpdateTask>,
        pending: BTreeSet<UpdateTask>,
    },
    Priority {
        // stale heap entries are skipped when their priority no longer
        // matches the live map (lazy deletion)
        heap: BinaryHeap<PrioEntry>,
        live: BTreeMap<UpdateTask, f64>,
    },
    Sweep {
        colors: Arc<Vec<u32>>,
        set: BTreeSet<(u32, VertexId, u32)>,
    },
}

/// Thread-safe pending-task set. `add` and `remove_next` are linearizable;
/// under concurrency `remove_next` may spuriously return `None` even though
/// another thread is adding.
#[derive(Debug)]
pub struct Scheduler {
    inner: Mutex<Inner>,
}

impl Scheduler {
    pub fn fifo() -> Self {
        Scheduler {
            inner: Mutex::new(Inner::Fifo { queue: VecDeque::new(), pending: BTreeSet::new() }),
        }
    }

    pub fn priority() -> Self {
        Scheduler {
            inner: Mutex::new(Inner::Priority { heap: BinaryHeap::new(), live: BTreeMap::new() }),
        }
    }

    /// Sweep ordering. `colors[v]` is vertex v's color; pass a uniform
    /// coloring for plain ascending-vertex sweeps.
    pub fn sweep(colors: Arc<Vec<u32>>) -> Self {
        Scheduler { inner: Mutex::new(Inner::Sweep { colors, set: BTreeSet::new() }) }
    }

    pub fn new(kind: SchedulerKind, colors: Arc<Vec<u32>>) -> Self {
        match kind {
            SchedulerKind::Fifo => Self::fifo(),
            SchedulerKind::Priority => Self::priority(),
            SchedulerKind::Sweep => Self::sweep(colors),
        }
    }

    /// Adds `task` if absent; if pending, keeps the maximum priority.
    /// Priorities must not be NaN.
    pub fn add(&self, task: UpdateTask, priority: f64) {
        assert!(!priority.is_nan(), "task priority must not be NaN");
        let mut inner = self.inner.lock().unwrap();
        match &mut *inner {
            Inner::Fifo { queue, pending } => {
                if pending.insert(task) {
                    queue.push_back(task);
                }
            }
            Inner::Priority { heap, live } => {
                let stale = live.get(&task).copied();
                match stale {
                    Some(p) if p >= priority => {}
                    _ => {
                        live.insert(task, priority);
                        heap.push(PrioEntry { priority, task });
                    }
                }
            }
            Inner::Sweep { colors, set } => {
                let c = colors.get(task.vertex.0 as usize).copied().unwrap_or(0);
                set.insert((c, task.vertex, task.fn_id));
            }
        }
    }

    /// Removes and returns the next task in this scheduler's order.
    pub fn remove_next(&self) -> Option<UpdateTask> {
        let mut inner = self.inner.lock().unwrap();
        match &mut *inner {
            Inner::Fifo { queue, pending } => {
                let t = queue.pop_front()?;
                pending.remove(&t);
                Some(t)
            }
            Inner::Priority { heap, live } => {
                while let Some(entry) = heap.pop() {
                    match live.get(&entry.task) {
                        Some(p) if p.to_bits() == entry.priority.to_bits() => {
                            live.remove(&entry.task);
                            return Some(entry.task);
                        }
                        _ => {} // stale entry superseded by a later merge
                    }
                }
                None
            }
            Inner::Sweep { set, .. } => {
                let first = *set.iter().next()?;
                set.remove(&first);
                Some(UpdateTask::new(first.2, first.1))
            }
        }
    }

    /// Removes and returns every pending task of `color`, ascending by
    /// vertex. Only meaningful for sweep scheduling.
    pub fn drain_color(&self, color: u32) -> Vec<UpdateTask> {
        let mut inner = self.inner.lock().unwrap();
        match &mut *inner {
            Inner::Sweep { set, .. } => {
                let keys: Vec<(u32, VertexId, u32)> = set
                    .range((color, VertexId(0), 0)..(color + 1, VertexId(0), 0))
                    .copied()
                    .collect();
                for k in &keys {
                    set.remove(k);
                }
                keys.into_iter().map(|(_, v, f)| UpdateTask::new(f, v)).collect()
            }
            _ => panic!("drain_color requires a sweep scheduler"),
        }
    }

    pub fn pending_count(&self) -> usize {
        let inner = self.inner.lock().unwrap();
        match &*inner {
            Inner::Fifo { pending, .. } => pending.len(),
            Inner::Priority { live, .. } => live.len(),
            Inner::Sweep { set, .. } => set.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pending_count() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(f: u32, v: u32) -> UpdateTask {
        UpdateTask::new(f, VertexId(v))
    }

    #[test]
    fn fifo_returns_oldest_first() {
        let s = Scheduler::fifo();
        s.add(t(0, 5), 1.0);
        s.add(t(0, 1), 9.0);
        s.add(t(0, 3), 5.0);
        assert_eq!(s.remove_next(), Some(t(0, 5)));
        assert_eq!(s.remove_next(), Some(t(0, 1)));
        assert_eq!(s.remove_next(), Some(t(0, 3)));
        assert_eq!(s.remove_next(), None);
    }

    #[test]
    fn duplicate_add_keeps_one_instance_with_max_priority() {
        let s = Scheduler::priority();
        s.add(t(0, 2), 1.0);
        s.add(t(0, 2), 3.0);
        s.add(t(0, 2), 2.0);
        assert_eq!(s.pending_count(), 1);
        assert_eq!(s.remove_next(), Some(t(0, 2)));
        assert_eq!(s.remove_next(), None);
    }

    #[test]
    fn priority_orders_by_priority_then_lower_vertex() {
        let s = Scheduler::priority();
        s.add(t(0, 9), 2.0);
        s.add(t(0, 4), 2.0);
        s.add(t(0, 7), 5.0);
        assert_eq!(s.remove_next(), Some(t(0, 7)));
        assert_eq!(s.remove_next(), Some(t(0, 4)), "tie goes to the lower vertex id");
        assert_eq!(s.remove_next(), Some(t(0, 9)));
    }

    #[test]
    fn removed_task_can_be_added_again() {
        let s = Scheduler::fifo();
        s.add(t(0, 1), 1.0);
        assert_eq!(s.remove_next(), Some(t(0, 1)));
        s.add(t(0, 1), 1.0);
        assert_eq!(s.remove_next(), Some(t(0, 1)));
    }

    #[test]
    fn sweep_orders_by_color_then_vertex() {
        let colors = Arc::new(vec![1, 0, 1, 0]);
        let s = Scheduler::sweep(colors);
        for i in 0..4 {
            s.add(t(0, i), 1.0);
        }
        let order: Vec<UpdateTask> = std::iter::from_fn(|| s.remove_next()).collect();
        assert_eq!(order, vec![t(0, 1), t(0, 3), t(0, 0), t(0, 2)]);
    }

    #[test]
    fn drain_color_takes_exactly_one_color_class() {
        let colors = Arc::new(vec![0, 1, 0, 1, 0]);
        let s = Scheduler::sweep(colors);
        for i in 0..5 {
            s.add(t(0, i), 1.0);
        }
        assert_eq!(s.drain_color(0), vec![t(0, 0), t(0, 2), t(0, 4)]);
        assert_eq!(s.pending_count(), 2);
        assert_eq!(s.drain_color(0), vec![]);
        assert_eq!(s.drain_color(1), vec![t(0, 1), t(0, 3)]);
    }

    #[test]
    fn concurrent_adds_and_removes_lose_nothing() {
        use std::sync::atomic::{AtomicUsize, Ordering as AOrd};
        let s = Arc::new(Scheduler::priority());
        let removed = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for th in 0..4u32 {
            let s = Arc::clone(&s);
            handles.push(std::thread::spawn(move || {
                for i in 0..500u32 {
                    s.add(t(0, th * 1000 + i), f64::from(i));
                }
            }));
        }
        for _ in 0..2 {
            let s = Arc::clone(&s);
            let removed = Arc::clone(&removed);
            handles.push(std::thread::spawn(move || {
                for _ in 0..300 {
                    if s.remove_next().is_some() {
                        removed.fetch_add(1, AOrd::SeqCst);
                    }
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        // every add was of a distinct task: removed + still-pending = 2000
        assert_eq!(removed.load(AOrd::SeqCst) + s.pending_count(), 2000);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Add(u32, f64),
            Remove,
        }

        fn arb_ops() -> impl Strategy<Value = Vec<Op>> {
            proptest::collection::vec(
                prop_oneof![
                    (0u32..40, 0.0f64..100.0).prop_map(|(v, p)| Op::Add(v, p)),
                    Just(Op::Remove),
                ],
                0..200,
            )
        }

        proptest! {
            /// Against a reference set model: nothing is lost, nothing is
            /// duplicated, and priority removal always takes a live maximum.
            #[test]
            fn matches_reference_set_model(ops in arb_ops()) {
                let s = Scheduler::priority();
                let mut model: BTreeMap<UpdateTask, f64> = BTreeMap::new();
                for op in ops {
                    match op {
                        Op::Add(v, p) => {
                            let task = t(0, v);
                            s.add(task, p);
                            let e = model.entry(task).or_insert(f64::MIN);
                            *e = e.max(p);
                        }
                        Op::Remove => {
                            let got = s.remove_next();
                            match got {
                                None => prop_assert!(model.is_empty()),
                                Some(task) => {
                                    let expect = model
                                        .iter()
                                        .max_by(|(ta, pa), (tb, pb)| {
                                            pa.total_cmp(pb)
                                                .then_with(|| tb.vertex.cmp(&ta.vertex))
                                        })
                                        .map(|(t, _)| *t)
                                        .unwrap();
                                    prop_assert_eq!(task, expect);
                                    model.remove(&task);
                                }
                            }
                        }
                    }
                }
                prop_assert_eq!(s.pending_count(), model.len());
            }

            /// Priority merge keeps the maximum over 10^4-scale op streams.
            #[test]
            fn merged_priority_is_max(priorities in proptest::collection::vec(0.0f64..1e6, 1..50)) {
                let s = Scheduler::priority();
                for &p in &priorities {
                    s.add(t(1, 7), p);
                }
                s.add(t(1, 8), -1.0); // lower-priority bystander
                prop_assert_eq!(s.remove_next(), Some(t(1, 7)));
            }
        }
    }
}
