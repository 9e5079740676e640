//! Inter-machine protocol: the envelope kinds machines exchange, their wire
//! encoding, Lamport clocks, traffic counters, and the two small distributed
//! control protocols built on them (flush barriers and two-ring idle
//! detection).
//!
//! Counting rules matter here. "Basic" envelopes — lock traffic, data
//! pushes, task posts, and update-count deltas — increment the sent/received
//! counters; barrier, token, and sync control envelopes do not, so the
//! counters can stabilize and `sent == received` witnesses an empty network.

use thiserror::Error;

use crate::bytes::{put_bytes, put_f64, put_u32, put_u64, put_u8, DecodeError, Reader};
use crate::graph::{DatumId, Direction, EdgeKey, VertexId};
use crate::locks::LockMode;
use crate::partition::LocalGraph;

#[derive(Debug, Error)]
pub enum CommError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("unknown envelope kind {0}")]
    UnknownKind(u8),
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("machine {0} unreachable: {1}")]
    PeerUnreachable(u32, String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Sub-messages carried under the sync-partial kind.
#[derive(Debug, Clone, PartialEq)]
pub enum SyncMsg {
    /// Worker -> coordinator: this many more updates committed locally.
    CountDelta { updates: u64 },
    /// Coordinator -> workers: drain for the given quiesce barrier; the
    /// named aggregator will fold once the barrier releases.
    Begin { sync_id: u32, barrier: u64 },
    /// Worker -> coordinator: fold of locally owned vertices.
    Acc { sync_id: u32, barrier: u64, bytes: Vec<u8> },
}

/// Sub-messages carried under the termination-token kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TermMsg {
    /// Circulates machine 0 -> 1 -> ... -> 0, absorbing each machine's
    /// state. `all_idle` uses the strict predicate (nothing running, nothing
    /// scheduled); `all_drained` only requires in-flight work to be done, so
    /// a machine holding deferred tasks during a quiesce still counts.
    Token { ring: u64, all_idle: bool, all_drained: bool, sent: u64, received: u64 },
    /// Coordinator -> workers: flush finished, stop now.
    Halt,
}

/// Everything a machine can say to another machine. Exactly ten kinds cross
/// the wire; richer structure nests inside a kind's payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Ask the owner of `vertex` for a lock. Tickets are issued by the
    /// requesting machine and scope all replies.
    LockRequest { ticket: u64, vertex: VertexId, mode: LockMode },
    /// Owner -> requester. Remote grants carry the vertex payload and its
    /// version so the requester's ghost is fresh before the update runs.
    LockGrant { ticket: u64, vertex: VertexId, data: Option<(Vec<u8>, u64)> },
    LockRelease { ticket: u64, vertex: VertexId },
    /// Replica refresh, applied only if `version` is newer locally.
    DataPush { id: DatumId, bytes: Vec<u8>, version: u64 },
    /// Schedule an update on the machine owning `vertex`.
    TaskPost { vertex: VertexId, fn_id: u32, priority: f64 },
    SyncPartial(SyncMsg),
    /// Coordinator -> workers: finalized global value, also the signal to
    /// resume after a quiesce.
    SyncResult { sync_id: u32, bytes: Vec<u8> },
    /// Worker -> coordinator: parked at `barrier`, with cumulative basic
    /// traffic counters, committed update count, and scheduler backlog.
    /// Re-sent whenever the counters move while parked.
    BarrierEnter { barrier: u64, sent: u64, received: u64, updates: u64, pending: u64 },
    BarrierRelease { barrier: u64 },
    TermToken(TermMsg),
}

impl Payload {
    pub fn kind(&self) -> u8 {
        match self {
            Payload::LockRequest { .. } => 1,
            Payload::LockGrant { .. } => 2,
            Payload::LockRelease { .. } => 3,
            Payload::DataPush { .. } => 4,
            Payload::TaskPost { .. } => 5,
            Payload::SyncPartial(_) => 6,
            Payload::SyncResult { .. } => 7,
            Payload::BarrierEnter { .. } => 8,
            Payload::BarrierRelease { .. } => 9,
            Payload::TermToken(_) => 10,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::LockRequest { .. } => "lock_request",
            Payload::LockGrant { .. } => "lock_grant",
            Payload::LockRelease { .. } => "lock_release",
            Payload::DataPush { .. } => "data_push",
            Payload::TaskPost { .. } => "task_post",
            Payload::SyncPartial(_) => "sync_partial",
            Payload::SyncResult { .. } => "sync_result",
            Payload::BarrierEnter { .. } => "barrier_enter",
            Payload::BarrierRelease { .. } => "barrier_release",
            Payload::TermToken(_) => "term_token",
        }
    }

    /// Whether this envelope increments the basic-traffic counters that
    /// barriers and tokens compare. Control envelopes are excluded so the
    /// counters they report can stabilize.
    pub fn counted(&self) -> bool {
        match self {
            Payload::LockRequest { .. }
            | Payload::LockGrant { .. }
            | Payload::LockRelease { .. }
            | Payload::DataPush { .. }
            | Payload::TaskPost { .. }
            | Payload::SyncPartial(SyncMsg::CountDelta { .. }) => true,
            Payload::SyncPartial(_)
            | Payload::SyncResult { .. }
            | Payload::BarrierEnter { .. }
            | Payload::BarrierRelease { .. }
            | Payload::TermToken(_) => false,
        }
    }
}

/// One message: who sent it, their Lamport clock when they did, and what it
/// says.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub sender: u32,
    pub clock: u64,
    pub payload: Payload,
}

fn put_datum_id(out: &mut Vec<u8>, id: DatumId) {
    match id {
        DatumId::Vertex(v) => {
            put_u8(out, 0);
            put_u32(out, v.0);
        }
        DatumId::Edge(key, dir) => {
            put_u8(out, 1);
            put_u32(out, key.lo.0);
            put_u32(out, key.hi.0);
            put_u8(out, dir.index() as u8);
        }
    }
}

fn read_datum_id(r: &mut Reader) -> Result<DatumId, CommError> {
    match r.u8()? {
        0 => Ok(DatumId::Vertex(VertexId(r.u32()?))),
        1 => {
            let key = EdgeKey::new(VertexId(r.u32()?), VertexId(r.u32()?))
                .map_err(|e| CommError::Malformed(e.to_string()))?;
            let dir = match r.u8()? {
                0 => Direction::LoToHi,
                1 => Direction::HiToLo,
                d => return Err(CommError::Malformed(format!("edge direction {d}"))),
            };
            Ok(DatumId::Edge(key, dir))
        }
        t => Err(CommError::Malformed(format!("datum tag {t}"))),
    }
}

impl Envelope {
    /// Body bytes: kind, sender, clock, then the kind's fields. Everything
    /// little-endian; variable-length fields length-prefixed.
    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_u8(&mut out, self.payload.kind());
        put_u32(&mut out, self.sender);
        put_u64(&mut out, self.clock);
        match &self.payload {
            Payload::LockRequest { ticket, vertex, mode } => {
                put_u64(&mut out, *ticket);
                put_u32(&mut out, vertex.0);
                put_u8(&mut out, matches!(mode, LockMode::Exclusive) as u8);
            }
            Payload::LockGrant { ticket, vertex, data } => {
                put_u64(&mut out, *ticket);
                put_u32(&mut out, vertex.0);
                match data {
                    None => put_u8(&mut out, 0),
                    Some((bytes, version)) => {
                        put_u8(&mut out, 1);
                        put_bytes(&mut out, bytes);
                        put_u64(&mut out, *version);
                    }
                }
            }
            Payload::LockRelease { ticket, vertex } => {
                put_u64(&mut out, *ticket);
                put_u32(&mut out, vertex.0);
            }
            Payload::DataPush { id, bytes, version } => {
                put_datum_id(&mut out, *id);
                put_bytes(&mut out, bytes);
                put_u64(&mut out, *version);
            }
            Payload::TaskPost { vertex, fn_id, priority } => {
                put_u32(&mut out, vertex.0);
                put_u32(&mut out, *fn_id);
                put_f64(&mut out, *priority);
            }
            Payload::SyncPartial(msg) => match msg {
                SyncMsg::CountDelta { updates } => {
                    put_u8(&mut out, 0);
                    put_u64(&mut out, *updates);
                }
                SyncMsg::Begin { sync_id, barrier } => {
                    put_u8(&mut out, 1);
                    put_u32(&mut out, *sync_id);
                    put_u64(&mut out, *barrier);
                }
                SyncMsg::Acc { sync_id, barrier, bytes } => {
                    put_u8(&mut out, 2);
                    put_u32(&mut out, *sync_id);
                    put_u64(&mut out, *barrier);
                    put_bytes(&mut out, bytes);
                }
            },
            Payload::SyncResult { sync_id, bytes } => {
                put_u32(&mut out, *sync_id);
                put_bytes(&mut out, bytes);
            }
            Payload::BarrierEnter { barrier, sent, received, updates, pending } => {
                put_u64(&mut out, *barrier);
                put_u64(&mut out, *sent);
                put_u64(&mut out, *received);
                put_u64(&mut out, *updates);
                put_u64(&mut out, *pending);
            }
            Payload::BarrierRelease { barrier } => put_u64(&mut out, *barrier),
            Payload::TermToken(msg) => match msg {
                TermMsg::Token { ring, all_idle, all_drained, sent, received } => {
                    put_u8(&mut out, 0);
                    put_u64(&mut out, *ring);
                    put_u8(&mut out, *all_idle as u8);
                    put_u8(&mut out, *all_drained as u8);
                    put_u64(&mut out, *sent);
                    put_u64(&mut out, *received);
                }
                TermMsg::Halt => put_u8(&mut out, 1),
            },
        }
        out
    }

    /// Body plus its length prefix, ready to write to a stream.
    pub fn encode_frame(&self) -> Vec<u8> {
        let body = self.encode_body();
        let mut out = Vec::with_capacity(body.len() + 4);
        put_u32(&mut out, body.len() as u32);
        out.extend_from_slice(&body);
        out
    }

    pub fn decode_body(buf: &[u8]) -> Result<Self, CommError> {
        let mut r = Reader::new(buf);
        let kind = r.u8()?;
        let sender = r.u32()?;
        let clock = r.u64()?;
        let payload = match kind {
            1 => Payload::LockRequest {
                ticket: r.u64()?,
                vertex: VertexId(r.u32()?),
                mode: match r.u8()? {
                    0 => LockMode::Shared,
                    1 => LockMode::Exclusive,
                    m => return Err(CommError::Malformed(format!("lock mode {m}"))),
                },
            },
            2 => Payload::LockGrant {
                ticket: r.u64()?,
                vertex: VertexId(r.u32()?),
                data: match r.u8()? {
                    0 => None,
                    1 => Some((r.bytes()?, r.u64()?)),
                    f => return Err(CommError::Malformed(format!("grant data flag {f}"))),
                },
            },
            3 => Payload::LockRelease { ticket: r.u64()?, vertex: VertexId(r.u32()?) },
            4 => Payload::DataPush {
                id: read_datum_id(&mut r)?,
                bytes: r.bytes()?,
                version: r.u64()?,
            },
            5 => Payload::TaskPost {
                vertex: VertexId(r.u32()?),
                fn_id: r.u32()?,
                priority: r.f64()?,
            },
            6 => Payload::SyncPartial(match r.u8()? {
                0 => SyncMsg::CountDelta { updates: r.u64()? },
                1 => SyncMsg::Begin { sync_id: r.u32()?, barrier: r.u64()? },
                2 => SyncMsg::Acc { sync_id: r.u32()?, barrier: r.u64()?, bytes: r.bytes()? },
                t => return Err(CommError::Malformed(format!("sync tag {t}"))),
            }),
            7 => Payload::SyncResult { sync_id: r.u32()?, bytes: r.bytes()? },
            8 => Payload::BarrierEnter {
                barrier: r.u64()?,
                sent: r.u64()?,
                received: r.u64()?,
                updates: r.u64()?,
                pending: r.u64()?,
            },
            9 => Payload::BarrierRelease { barrier: r.u64()? },
            10 => Payload::TermToken(match r.u8()? {
                0 => TermMsg::Token {
                    ring: r.u64()?,
                    all_idle: r.u8()? != 0,
                    all_drained: r.u8()? != 0,
                    sent: r.u64()?,
                    received: r.u64()?,
                },
                1 => TermMsg::Halt,
                t => return Err(CommError::Malformed(format!("token tag {t}"))),
            }),
            k => return Err(CommError::UnknownKind(k)),
        };
        r.finish()?;
        Ok(Envelope { sender, clock, payload })
    }
}

/// Lamport clock: tick before acting, observe on receipt.
#[derive(Debug, Clone, Copy, Default)]
pub struct LamportClock(u64);

impl LamportClock {
    pub fn new() -> Self {
        LamportClock(0)
    }

    pub fn now(&self) -> u64 {
        self.0
    }

    /// Advances for a local event and returns the stamp to use.
    pub fn tick(&mut self) -> u64 {
        self.0 += 1;
        self.0
    }

    /// Folds in a remote stamp; the next `tick` lands after it.
    pub fn observe(&mut self, remote: u64) {
        self.0 = self.0.max(remote);
    }
}

/// Cumulative basic-envelope counters for one machine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommCounters {
    pub sent: u64,
    pub received: u64,
}

impl CommCounters {
    pub fn on_send(&mut self, payload: &Payload) {
        if payload.counted() {
            self.sent += 1;
        }
    }

    pub fn on_receive(&mut self, payload: &Payload) {
        if payload.counted() {
            self.received += 1;
        }
    }
}

/// Coordinator-side view of one flush barrier. Release is safe when every
/// machine has parked and the basic-traffic counters balance: parked
/// machines never originate basic envelopes (data pushes go one hop,
/// straight to every replica holder), so each machine's first park report
/// already carries its final sent count, and `sent == received` then proves
/// nothing is still in flight.
#[derive(Debug, Clone)]
pub struct BarrierTracker {
    barrier: u64,
    entered: Vec<bool>,
    sent: Vec<u64>,
    received: Vec<u64>,
    updates: Vec<u64>,
    pending: Vec<u64>,
}

impl BarrierTracker {
    pub fn new(machines: u32, barrier: u64) -> Self {
        let n = machines as usize;
        BarrierTracker {
            barrier,
            entered: vec![false; n],
            sent: vec![0; n],
            received: vec![0; n],
            updates: vec![0; n],
            pending: vec![0; n],
        }
    }

    pub fn barrier(&self) -> u64 {
        self.barrier
    }

    /// Folds in a park report. Reports for earlier barriers can still be in
    /// flight when a new barrier opens and are ignored; a report from a
    /// future barrier would mean the coordinator released too early.
    pub fn record(
        &mut self,
        machine: u32,
        barrier: u64,
        sent: u64,
        received: u64,
        updates: u64,
        pending: u64,
    ) {
        if barrier != self.barrier {
            assert!(barrier < self.barrier, "machine {machine} entered future barrier {barrier}");
            return;
        }
        let m = machine as usize;
        self.entered[m] = true;
        self.sent[m] = sent;
        self.received[m] = received;
        self.updates[m] = updates;
        self.pending[m] = pending;
    }

    pub fn ready(&self) -> bool {
        self.entered.iter().all(|&e| e)
            && self.sent.iter().sum::<u64>() == self.received.iter().sum::<u64>()
    }

    /// Total updates committed across machines, per the latest reports.
    pub fn total_updates(&self) -> u64 {
        self.updates.iter().sum()
    }

    /// Total tasks still scheduled across machines, per the latest reports.
    pub fn total_pending(&self) -> u64 {
        self.pending.iter().sum()
    }
}

/// Machine 0's two-ring idle test. One completed ring that found every
/// machine idle with balanced counters is not enough — a machine can go busy
/// again after the token passes it — but when a second consecutive ring sees
/// the same balanced counters, no message was sent, received, or in flight
/// anywhere since the first ring, so the system is quiescent.
#[derive(Debug, Clone, Default)]
pub struct TermDetector {
    prev: Option<(u64, u64)>,
    rings: u64,
}

impl TermDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rings_completed(&self) -> u64 {
        self.rings
    }

    /// Feed one completed ring; true means quiescence is proven. The `idle`
    /// flag is whichever predicate the caller is testing (strict idleness
    /// for termination, drained for a quiesce barrier).
    pub fn ring_complete(&mut self, idle: bool, sent: u64, received: u64) -> bool {
        self.rings += 1;
        let quiescent = idle && sent == received && self.prev == Some((sent, received));
        self.prev = if idle { Some((sent, received)) } else { None };
        quiescent
    }

    /// Forget history, e.g. when switching between the strict and drained
    /// predicates so rings under different predicates are never compared.
    pub fn reset(&mut self) {
        self.prev = None;
    }
}

/// Outgoing data pushes for one commit: an envelope per (changed datum,
/// replica holder), in deterministic datum order.
#[derive(Debug, Default, PartialEq)]
pub struct PushPlan {
    /// (destination machine, push payload) pairs.
    pub envelopes: Vec<(u32, Payload)>,
    /// Distinct (datum, version) values published to at least one other
    /// machine — never more than the commit's modification count, however
    /// many replicas each publication fans out to.
    pub publications: u64,
    /// Payload bytes across all envelopes.
    pub bytes: u64,
}

pub fn plan_pushes(local: &LocalGraph, committed: &[(DatumId, Vec<u8>, u64)]) -> PushPlan {
    let mut plan = PushPlan::default();
    for (id, bytes, version) in committed {
        let targets = local.push_targets(*id);
        if targets.is_empty() {
            continue;
        }
        plan.publications += 1;
        for dest in targets {
            plan.bytes += bytes.len() as u64;
            plan.envelopes.push((
                dest,
                Payload::DataPush { id: *id, bytes: bytes.clone(), version: *version },
            ));
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::partition::{build_atoms, load_local, overpartition};

    fn all_payloads() -> Vec<Payload> {
        let edge = EdgeKey::new(VertexId(3), VertexId(9)).unwrap();
        vec![
            Payload::LockRequest { ticket: 7, vertex: VertexId(4), mode: LockMode::Shared },
            Payload::LockRequest { ticket: 8, vertex: VertexId(5), mode: LockMode::Exclusive },
            Payload::LockGrant { ticket: 7, vertex: VertexId(4), data: None },
            Payload::LockGrant { ticket: 8, vertex: VertexId(5), data: Some((vec![1, 2], 6)) },
            Payload::LockRelease { ticket: 8, vertex: VertexId(5) },
            Payload::DataPush { id: DatumId::Vertex(VertexId(2)), bytes: vec![0xAB], version: 4 },
            Payload::DataPush {
                id: DatumId::Edge(edge, Direction::HiToLo),
                bytes: vec![],
                version: 1,
            },
            Payload::TaskPost { vertex: VertexId(11), fn_id: 0, priority: -2.5 },
            Payload::SyncPartial(SyncMsg::CountDelta { updates: 3 }),
            Payload::SyncPartial(SyncMsg::Begin { sync_id: 1, barrier: 12 }),
            Payload::SyncPartial(SyncMsg::Acc { sync_id: 1, barrier: 12, bytes: vec![9, 9] }),
            Payload::SyncResult { sync_id: 1, bytes: vec![7] },
            Payload::BarrierEnter { barrier: 3, sent: 10, received: 9, updates: 5, pending: 2 },
            Payload::BarrierRelease { barrier: 3 },
            Payload::TermToken(TermMsg::Token {
                ring: 2,
                all_idle: true,
                all_drained: false,
                sent: 8,
                received: 8,
            }),
            Payload::TermToken(TermMsg::Halt),
        ]
    }

    #[test]
    fn every_payload_round_trips() {
        for (i, payload) in all_payloads().into_iter().enumerate() {
            let env = Envelope { sender: i as u32, clock: 100 + i as u64, payload };
            let decoded = Envelope::decode_body(&env.encode_body()).unwrap();
            assert_eq!(decoded, env);
        }
    }

    #[test]
    fn kind_bytes_are_stable() {
        let kinds: Vec<u8> = all_payloads().iter().map(Payload::kind).collect();
        assert_eq!(kinds, vec![1, 1, 2, 2, 3, 4, 4, 5, 6, 6, 6, 7, 8, 9, 10, 10]);
    }

    #[test]
    fn push_envelope_bytes_are_pinned() {
        let env = Envelope {
            sender: 1,
            clock: 3,
            payload: Payload::DataPush {
                id: DatumId::Vertex(VertexId(2)),
                bytes: vec![0xAB],
                version: 4,
            },
        };
        assert_eq!(
            env.encode_body(),
            vec![
                4, // kind
                1, 0, 0, 0, // sender
                3, 0, 0, 0, 0, 0, 0, 0, // clock
                0, // datum tag: vertex
                2, 0, 0, 0, // vertex id
                1, 0, 0, 0, 0xAB, // length-prefixed payload
                4, 0, 0, 0, 0, 0, 0, 0, // version
            ]
        );
    }

    #[test]
    fn frame_is_length_prefixed_body() {
        let env = Envelope {
            sender: 0,
            clock: 1,
            payload: Payload::BarrierRelease { barrier: 9 },
        };
        let body = env.encode_body();
        let frame = env.encode_frame();
        assert_eq!(u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize, body.len());
        assert_eq!(&frame[4..], &body[..]);
    }

    #[test]
    fn junk_is_rejected_not_panicked() {
        assert!(matches!(Envelope::decode_body(&[]), Err(CommError::Decode(_))));
        let mut body = Envelope {
            sender: 0,
            clock: 0,
            payload: Payload::LockRelease { ticket: 1, vertex: VertexId(0) },
        }
        .encode_body();
        body[0] = 77;
        assert!(matches!(Envelope::decode_body(&body), Err(CommError::UnknownKind(77))));
        // Trailing garbage after a well-formed payload is an error too.
        let mut ok = Envelope {
            sender: 0,
            clock: 0,
            payload: Payload::BarrierRelease { barrier: 1 },
        }
        .encode_frame();
        ok.push(0);
        assert!(Envelope::decode_body(&ok[4..]).is_err());
    }

    #[test]
    fn lamport_clock_orders_cause_before_effect() {
        let mut a = LamportClock::new();
        let mut b = LamportClock::new();
        for _ in 0..5 {
            a.tick();
        }
        let stamp = a.tick(); // a sends at 6
        b.observe(stamp);
        let reply = b.tick(); // b's next event lands after
        assert!(reply > stamp);
        assert_eq!(reply, 7);
    }

    #[test]
    fn only_basic_envelopes_are_counted() {
        let mut c = CommCounters::default();
        for p in all_payloads() {
            c.on_send(&p);
            c.on_receive(&p);
        }
        // 2 lock requests, 2 grants, 1 release, 2 pushes, 1 task post,
        // 1 count delta; barrier/token/sync control traffic is free.
        assert_eq!(c, CommCounters { sent: 9, received: 9 });
    }

    #[test]
    fn barrier_waits_for_stragglers_and_balanced_counts() {
        let mut t = BarrierTracker::new(3, 5);
        t.record(0, 5, 4, 2, 10, 0);
        t.record(1, 5, 1, 2, 7, 0);
        assert!(!t.ready(), "machine 2 has not parked");
        t.record(2, 5, 0, 0, 3, 1);
        assert!(!t.ready(), "a push is still in flight: 5 sent, 4 received");
        // Machine 2 absorbs the last push and re-reports.
        t.record(2, 5, 0, 1, 3, 2);
        assert!(t.ready());
        assert_eq!(t.total_updates(), 20);
        assert_eq!(t.total_pending(), 2);
        // A straggling report from an already-released barrier is ignored.
        let mut next = BarrierTracker::new(3, 6);
        next.record(1, 5, 9, 9, 99, 0);
        assert!(!next.ready());
    }

    #[test]
    #[should_panic(expected = "future barrier")]
    fn report_from_future_barrier_is_a_bug() {
        BarrierTracker::new(2, 3).record(0, 4, 0, 0, 0, 0);
    }

    #[test]
    fn two_ring_detector_never_fires_early() {
        let mut d = TermDetector::new();
        // Ring 1: everyone idle but a message is in flight.
        assert!(!d.ring_complete(true, 5, 4));
        // Ring 2: the message landed; first balanced sighting.
        assert!(!d.ring_complete(true, 5, 5));
        // Ring 3: unchanged and balanced. Quiescent.
        assert!(d.ring_complete(true, 5, 5));
    }

    #[test]
    fn busy_ring_resets_the_detector() {
        let mut d = TermDetector::new();
        assert!(!d.ring_complete(true, 5, 5));
        assert!(!d.ring_complete(false, 5, 5));
        assert!(!d.ring_complete(true, 5, 5), "history was invalidated by the busy ring");
        assert!(d.ring_complete(true, 5, 5));
        assert_eq!(d.rings_completed(), 4);
    }

    #[test]
    fn resumed_work_with_matching_counts_still_detected_by_count_change() {
        let mut d = TermDetector::new();
        assert!(!d.ring_complete(true, 6, 6));
        // A machine woke up, exchanged a message pair, went idle again.
        assert!(!d.ring_complete(true, 8, 8), "counts moved between rings");
        assert!(d.ring_complete(true, 8, 8));
    }

    #[test]
    fn push_plan_fans_out_but_counts_one_publication_per_datum() {
        // Star: hub 0 replicated on every leaf machine.
        let g = build_graph(4, &[(0, 1), (0, 2), (0, 3)], |_| vec![0], |_| (vec![1], vec![2]))
            .unwrap();
        let atoms = build_atoms(&g, &[0, 1, 2, 3], 4, None).unwrap();
        let hub = load_local(&atoms, &[0, 1, 2, 3], 0, 4).unwrap();
        let committed = vec![
            (DatumId::Vertex(VertexId(0)), vec![0xEE], 1),
            (
                DatumId::Edge(EdgeKey::new(VertexId(0), VertexId(1)).unwrap(), Direction::LoToHi),
                vec![0xDD],
                1,
            ),
        ];
        let plan = plan_pushes(&hub, &committed);
        assert_eq!(plan.publications, 2);
        let dests: Vec<u32> = plan.envelopes.iter().map(|(d, _)| *d).collect();
        assert_eq!(dests, vec![1, 2, 3, 1]); // hub write to 3 holders, edge write to 1
        assert_eq!(plan.bytes, 4);
        assert!(plan.publications <= committed.len() as u64);
    }

    #[test]
    fn all_local_commit_publishes_nothing() {
        let g = build_graph(3, &[(0, 1), (1, 2)], |_| vec![7], |_| (vec![1], vec![2])).unwrap();
        let atoms = build_atoms(&g, &overpartition(&g, 1).unwrap(), 1, None).unwrap();
        let only = load_local(&atoms, &[0], 0, 1).unwrap();
        let committed = vec![(DatumId::Vertex(VertexId(1)), vec![1], 1)];
        assert_eq!(plan_pushes(&only, &committed), PushPlan::default());
    }
}
