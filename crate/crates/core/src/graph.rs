//! The data graph: static undirected structure with mutable, versioned
//! vertex and edge payloads, and scoped staged-write access for update
//! functions.
//!
//! Structure is immutable after construction. Payloads are opaque byte
//! sequences; applications define their own codecs. Every undirected edge
//! carries two payload slots, one per direction, so directed quantities
//! (weights, messages) have a place to live.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locks::ConsistencyModel;

/// Dense vertex identifier in `[0, vertex_count)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct VertexId(pub u32);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Canonical undirected edge key with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub lo: VertexId,
    pub hi: VertexId,
}

impl EdgeKey {
    /// Normalizes endpoint order. Self-loops are rejected.
    pub fn new(a: VertexId, b: VertexId) -> Result<Self, GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        Ok(if a < b { EdgeKey { lo: a, hi: b } } else { EdgeKey { lo: b, hi: a } })
    }

    pub fn other(&self, v: VertexId) -> VertexId {
        if v == self.lo {
            self.hi
        } else {
            self.lo
        }
    }

    /// Payload slot index for the direction `from -> to`.
    pub fn slot(&self, from: VertexId) -> usize {
        if from == self.lo {
            0
        } else {
            1
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

/// Direction along an undirected edge, identifying one payload slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    LoToHi,
    HiToLo,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::LoToHi => 0,
            Direction::HiToLo => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Direction::LoToHi
        } else {
            Direction::HiToLo
        }
    }
}

/// Identity of one mutable datum: a vertex payload or one directed edge
/// payload slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatumId {
    Vertex(VertexId),
    Edge(EdgeKey, Direction),
}

impl fmt::Display for DatumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatumId::Vertex(v) => write!(f, "D[{v}]"),
            DatumId::Edge(e, Direction::LoToHi) => write!(f, "D[{} -> {}]", e.lo, e.hi),
            DatumId::Edge(e, Direction::HiToLo) => write!(f, "D[{} -> {}]", e.hi, e.lo),
        }
    }
}

/// One payload plus its modification counter. Versions start at 0 and each
/// committed write increments by exactly 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Datum {
    pub bytes: Vec<u8>,
    pub version: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(VertexId, VertexId),
    #[error("self loop at vertex {0}")]
    SelfLoop(VertexId),
    #[error("edge ({0}, {1}) endpoint out of range: vertex count is {2}")]
    EndpointOutOfRange(VertexId, VertexId, u32),
    #[error("vertex {0} out of range: vertex count is {1}")]
    VertexOutOfRange(VertexId, u32),
    #[error("access violation: {datum} is not writable under the {model} consistency model")]
    AccessViolation { datum: DatumId, model: ConsistencyModel },
    #[error("datum {0} is not part of the scope of vertex {1}")]
    OutOfScope(DatumId, VertexId),
    #[error("scope of vertex {0} was already committed")]
    DoubleCommit(VertexId),
    #[error("edge list line {line}: {msg}")]
    BadTsv { line: usize, msg: String },
}

/// Staged writes of one scope, keyed by datum, applied atomically at commit.
pub type WriteSet = BTreeMap<DatumId, Vec<u8>>;

/// Immutable snapshot of the global values visible to an update function.
pub type GlobalView = Arc<BTreeMap<String, Vec<u8>>>;

/// Undirected data graph with payloads. See the module docs.
#[derive(Debug, Clone)]
pub struct DataGraph {
    vertex_count: u32,
    /// Per vertex: (neighbor, edge index), ascending by neighbor id.
    adj: Vec<Vec<(VertexId, u32)>>,
    /// All edges, ascending by (lo, hi). Index is the edge id used in `adj`.
    edges: Vec<EdgeKey>,
    vdata: Vec<Datum>,
    /// Two payload slots per edge: `[lo->hi, hi->lo]`.
    edata: Vec<[Datum; 2]>,
}

/// Builds a graph from an edge list, initializing payloads through the two
/// factories. Rejects self-loops, duplicate unordered pairs, and endpoints
/// outside `[0, vertex_count)`; the error names the offending edge.
pub fn build_graph(
    vertex_count: u32,
    edge_list: &[(u32, u32)],
    mut vertex_payload: impl FnMut(VertexId) -> Vec<u8>,
    mut edge_payload: impl FnMut(EdgeKey) -> (Vec<u8>, Vec<u8>),
) -> Result<DataGraph, GraphError> {
    let mut keys = Vec::with_capacity(edge_list.len());
    for &(a, b) in edge_list {
        let (va, vb) = (VertexId(a), VertexId(b));
        if a >= vertex_count || b >= vertex_count {
            return Err(GraphError::EndpointOutOfRange(va, vb, vertex_count));
        }
        keys.push(EdgeKey::new(va, vb)?);
    }
    keys.sort();
    for w in keys.windows(2) {
        if w[0] == w[1] {
            return Err(GraphError::DuplicateEdge(w[0].lo, w[0].hi));
        }
    }
    let mut adj: Vec<Vec<(VertexId, u32)>> = vec![Vec::new(); vertex_count as usize];
    for (i, k) in keys.iter().enumerate() {
        adj[k.lo.0 as usize].push((k.hi, i as u32));
        adj[k.hi.0 as usize].push((k.lo, i as u32));
    }
    for a in &mut adj {
        a.sort_by_key(|(u, _)| *u);
    }
    let vdata = (0..vertex_count)
        .map(|i| Datum { bytes: vertex_payload(VertexId(i)), version: 0 })
        .collect();
    let edata = keys
        .iter()
        .map(|k| {
            let (fwd, rev) = edge_payload(*k);
            [Datum { bytes: fwd, version: 0 }, Datum { bytes: rev, version: 0 }]
        })
        .collect();
    Ok(DataGraph { vertex_count, adj, edges: keys, vdata, edata })
}

impl DataGraph {
    pub fn vertex_count(&self) -> u32 {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[EdgeKey] {
        &self.edges
    }

    /// Neighbors of `v` in ascending id order.
    pub fn neighbors(&self, v: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        self.adj[v.0 as usize].iter().map(|(u, _)| *u)
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.adj[v.0 as usize].len()
    }

    /// (neighbor, edge index) pairs of `v`, ascending by neighbor.
    pub fn adjacency(&self, v: VertexId) -> &[(VertexId, u32)] {
        &self.adj[v.0 as usize]
    }

    pub fn edge_index(&self, key: EdgeKey) -> Option<u32> {
        self.edges.binary_search(&key).ok().map(|i| i as u32)
    }

    pub fn vertex_datum(&self, v: VertexId) -> &Datum {
        &self.vdata[v.0 as usize]
    }

    pub fn edge_datum(&self, idx: u32, dir: Direction) -> &Datum {
        &self.edata[idx as usize][dir.index()]
    }

    pub fn datum(&self, id: DatumId) -> Option<&Datum> {
        match id {
            DatumId::Vertex(v) => self.vdata.get(v.0 as usize),
            DatumId::Edge(key, dir) => {
                let idx = self.edge_index(key)?;
                Some(&self.edata[idx as usize][dir.index()])
            }
        }
    }

    /// Directly overwrite a datum, bumping its version. Used by replay and
    /// initial-state plumbing; scoped computation goes through `open_scope`.
    pub fn apply_write(&mut self, id: DatumId, bytes: Vec<u8>) -> Result<(), GraphError> {
        match id {
            DatumId::Vertex(v) => {
                let d = self
                    .vdata
                    .get_mut(v.0 as usize)
                    .ok_or(GraphError::VertexOutOfRange(v, self.vertex_count))?;
                d.bytes = bytes;
                d.version += 1;
            }
            DatumId::Edge(key, dir) => {
                let idx = self
                    .edge_index(key)
                    .ok_or(GraphError::OutOfScope(id, key.lo))?;
                let d = &mut self.edata[idx as usize][dir.index()];
                d.bytes = bytes;
                d.version += 1;
            }
        }
        Ok(())
    }

    /// Copies the scope of `v`: its payload, its neighbors' payloads, and
    /// both slots of every incident edge.
    pub fn snapshot(&self, v: VertexId) -> Result<ScopeSnapshot, GraphError> {
        if v.0 >= self.vertex_count {
            return Err(GraphError::VertexOutOfRange(v, self.vertex_count));
        }
        let adj = &self.adj[v.0 as usize];
        let mut neighbors = Vec::with_capacity(adj.len());
        let mut neighbor_data = Vec::with_capacity(adj.len());
        let mut edge_toward = Vec::with_capacity(adj.len());
        let mut edge_from = Vec::with_capacity(adj.len());
        for &(u, ei) in adj {
            let key = self.edges[ei as usize];
            neighbors.push(u);
            neighbor_data.push(self.vdata[u.0 as usize].bytes.clone());
            edge_toward.push(self.edata[ei as usize][key.slot(u)].bytes.clone());
            edge_from.push(self.edata[ei as usize][key.slot(v)].bytes.clone());
        }
        Ok(ScopeSnapshot {
            center: v,
            vertex_total: self.vertex_count,
            neighbors,
            center_data: self.vdata[v.0 as usize].bytes.clone(),
            neighbor_data,
            edge_toward,
            edge_from,
        })
    }

    /// Opens a staged-write scope on `v` under `model`. Writes outside the
    /// model's access mask fail with `AccessViolation`; nothing touches the
    /// graph until `commit_scope`.
    pub fn open_scope(&self, v: VertexId, model: ConsistencyModel) -> Result<Scope, GraphError> {
        Ok(Scope::new(self.snapshot(v)?, model, Arc::new(BTreeMap::new())))
    }

    /// Applies a scope's staged writes atomically, incrementing the version
    /// of each written datum by exactly 1. Committing twice is an error.
    pub fn commit_scope(&mut self, scope: &mut Scope) -> Result<(), GraphError> {
        if scope.committed {
            return Err(GraphError::DoubleCommit(scope.snap.center));
        }
        scope.committed = true;
        let writes = std::mem::take(&mut scope.writes);
        for (id, bytes) in writes {
            self.apply_write(id, bytes)?;
        }
        Ok(())
    }
}

/// Owned copy of one scope's data, taken when the scope opens. Snapshots are
/// plain values and can move across worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopeSnapshot {
    pub center: VertexId,
    pub vertex_total: u32,
    /// Ascending neighbor ids; parallel to the three data vectors below.
    pub neighbors: Vec<VertexId>,
    pub center_data: Vec<u8>,
    pub neighbor_data: Vec<Vec<u8>>,
    /// Edge slot carrying data directed neighbor -> center.
    pub edge_toward: Vec<Vec<u8>>,
    /// Edge slot carrying data directed center -> neighbor.
    pub edge_from: Vec<Vec<u8>>,
}

impl ScopeSnapshot {
    fn neighbor_index(&self, u: VertexId) -> Option<usize> {
        self.neighbors.binary_search(&u).ok()
    }

    pub fn edge_key(&self, u: VertexId) -> EdgeKey {
        EdgeKey::new(self.center, u).expect("neighbor distinct from center")
    }
}

/// A read/staged-write view over one scope. Reads see the scope's own staged
/// writes; the underlying graph is untouched until commit.
#[derive(Debug)]
pub struct Scope {
    snap: ScopeSnapshot,
    model: ConsistencyModel,
    globals: GlobalView,
    writes: WriteSet,
    committed: bool,
}

impl Scope {
    pub fn new(snap: ScopeSnapshot, model: ConsistencyModel, globals: GlobalView) -> Self {
        Scope { snap, model, globals, writes: WriteSet::new(), committed: false }
    }

    pub fn center(&self) -> VertexId {
        self.snap.center
    }

    /// Total vertices in the global graph (not just this scope).
    pub fn vertex_total(&self) -> u32 {
        self.snap.vertex_total
    }

    pub fn model(&self) -> ConsistencyModel {
        self.model
    }

    pub fn neighbors(&self) -> &[VertexId] {
        &self.snap.neighbors
    }

    pub fn degree(&self) -> usize {
        self.snap.neighbors.len()
    }

    fn staged_or<'a>(&'a self, id: DatumId, fallback: &'a [u8]) -> &'a [u8] {
        self.writes.get(&id).map(|b| b.as_slice()).unwrap_or(fallback)
    }

    pub fn read_center(&self) -> &[u8] {
        self.staged_or(DatumId::Vertex(self.snap.center), &self.snap.center_data)
    }

    pub fn read_vertex(&self, u: VertexId) -> Result<&[u8], GraphError> {
        if u == self.snap.center {
            return Ok(self.read_center());
        }
        let i = self
            .snap
            .neighbor_index(u)
            .ok_or(GraphError::OutOfScope(DatumId::Vertex(u), self.snap.center))?;
        Ok(self.staged_or(DatumId::Vertex(u), &self.snap.neighbor_data[i]))
    }

    /// Data on the incident edge slot directed `u -> center`.
    pub fn read_edge_toward(&self, u: VertexId) -> Result<&[u8], GraphError> {
        let key = EdgeKey::new(self.snap.center, u)?;
        let i = self
            .snap
            .neighbor_index(u)
            .ok_or(GraphError::OutOfScope(DatumId::Edge(key, Direction::LoToHi), self.snap.center))?;
        let dir = Direction::from_index(key.slot(u));
        Ok(self.staged_or(DatumId::Edge(key, dir), &self.snap.edge_toward[i]))
    }

    /// Data on the incident edge slot directed `center -> u`.
    pub fn read_edge_from(&self, u: VertexId) -> Result<&[u8], GraphError> {
        let key = EdgeKey::new(self.snap.center, u)?;
        let i = self
            .snap
            .neighbor_index(u)
            .ok_or(GraphError::OutOfScope(DatumId::Edge(key, Direction::LoToHi), self.snap.center))?;
        let dir = Direction::from_index(key.slot(self.snap.center));
        Ok(self.staged_or(DatumId::Edge(key, dir), &self.snap.edge_from[i]))
    }

    pub fn global(&self, key: &str) -> Option<&[u8]> {
        self.globals.get(key).map(|b| b.as_slice())
    }

    /// Write permission under the model's access mask:
    /// center vertex always; neighbor vertices only under `Full`; incident
    /// edges under `Full` and `Edge`. `None` checks like `Full`.
    fn writable(&self, id: DatumId) -> bool {
        let permissive = matches!(self.model, ConsistencyModel::Full | ConsistencyModel::None);
        match id {
            DatumId::Vertex(v) if v == self.snap.center => true,
            DatumId::Vertex(_) => permissive,
            DatumId::Edge(..) => permissive || self.model == ConsistencyModel::Edge,
        }
    }

    fn stage(&mut self, id: DatumId, bytes: Vec<u8>) -> Result<(), GraphError> {
        if !self.writable(id) {
            return Err(GraphError::AccessViolation { datum: id, model: self.model });
        }
        self.writes.insert(id, bytes);
        Ok(())
    }

    pub fn write_center(&mut self, bytes: Vec<u8>) -> Result<(), GraphError> {
        self.stage(DatumId::Vertex(self.snap.center), bytes)
    }

    pub fn write_vertex(&mut self, u: VertexId, bytes: Vec<u8>) -> Result<(), GraphError> {
        if u == self.snap.center {
            return self.write_center(bytes);
        }
        if self.snap.neighbor_index(u).is_none() {
            return Err(GraphError::OutOfScope(DatumId::Vertex(u), self.snap.center));
        }
        self.stage(DatumId::Vertex(u), bytes)
    }

    /// Write the incident edge slot directed `u -> center`.
    pub fn write_edge_toward(&mut self, u: VertexId, bytes: Vec<u8>) -> Result<(), GraphError> {
        let key = EdgeKey::new(self.snap.center, u)?;
        if self.snap.neighbor_index(u).is_none() {
            return Err(GraphError::OutOfScope(DatumId::Edge(key, Direction::LoToHi), self.snap.center));
        }
        let dir = Direction::from_index(key.slot(u));
        self.stage(DatumId::Edge(key, dir), bytes)
    }

    /// Write the incident edge slot directed `center -> u`.
    pub fn write_edge_from(&mut self, u: VertexId, bytes: Vec<u8>) -> Result<(), GraphError> {
        let key = EdgeKey::new(self.snap.center, u)?;
        if self.snap.neighbor_index(u).is_none() {
            return Err(GraphError::OutOfScope(DatumId::Edge(key, Direction::LoToHi), self.snap.center));
        }
        let dir = Direction::from_index(key.slot(self.snap.center));
        self.stage(DatumId::Edge(key, dir), bytes)
    }

    pub fn writes(&self) -> &WriteSet {
        &self.writes
    }

    pub fn take_writes(&mut self) -> WriteSet {
        std::mem::take(&mut self.writes)
    }

    pub fn snapshot(&self) -> &ScopeSnapshot {
        &self.snap
    }
}

/// Parses a tab-separated edge list: `src<TAB>dst[<TAB>weight]`, `#` starts
/// a comment line, blank lines ignored. The vertex count is the maximum id
/// plus one.
pub fn parse_edge_tsv(text: &str) -> Result<(u32, Vec<(u32, u32, Option<f64>)>), GraphError> {
    let mut edges = Vec::new();
    let mut max_id: Option<u32> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let bad = |msg: &str| GraphError::BadTsv { line: lineno + 1, msg: msg.to_string() };
        let src: u32 = fields
            .next()
            .ok_or_else(|| bad("missing source"))?
            .trim()
            .parse()
            .map_err(|_| bad("source is not a non-negative integer"))?;
        let dst: u32 = fields
            .next()
            .ok_or_else(|| bad("missing destination"))?
            .trim()
            .parse()
            .map_err(|_| bad("destination is not a non-negative integer"))?;
        let weight = match fields.next() {
            None => None,
            Some(w) => {
                Some(w.trim().parse::<f64>().map_err(|_| bad("weight is not a number"))?)
            }
        };
        if fields.next().is_some() {
            return Err(bad("too many fields"));
        }
        max_id = Some(max_id.map_or(src.max(dst), |m| m.max(src).max(dst)));
        edges.push((src, dst, weight));
    }
    Ok((max_id.map_or(0, |m| m + 1), edges))
}

/// Renders an edge list in the same TSV dialect `parse_edge_tsv` accepts.
pub fn render_edge_tsv(edges: &[(u32, u32, Option<f64>)]) -> String {
    let mut out = String::new();
    for (a, b, w) in edges {
        match w {
            Some(w) => out.push_str(&format!("{a}\t{b}\t{w}\n")),
            None => out.push_str(&format!("{a}\t{b}\n")),
        }
    }
    out
}
