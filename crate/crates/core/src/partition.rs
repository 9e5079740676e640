//! Two-phase graph placement: cut the graph into more atoms than machines,
//! then map atoms onto machines by weight. Changing the machine count reuses
//! the same atom files; only the cheap second phase reruns.
//!
//! An atom holds everything one part needs at run time: its owned vertices
//! (payload and color), every edge incident to an owned vertex, and the ids
//! of remote endpoints (ghosts) whose owners it will exchange data with.
//! Boundary edges are stored by both endpoint atoms and must agree byte for
//! byte; `load_local` cross-checks the whole atom set before building the
//! per-machine runtime graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use thiserror::Error;

use crate::bytes::{put_bytes, put_str, put_u32, put_u64, DecodeError, Reader};
use crate::coloring::Coloring;
use crate::graph::{
    DataGraph, Datum, DatumId, Direction, EdgeKey, GraphError, ScopeSnapshot, VertexId, WriteSet,
};

const ATOM_MAGIC: &str = "GLAB1";
const FINAL_MAGIC: &str = "GFIN1";

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("cannot cut {n} vertices into {k} parts")]
    KOutOfRange { k: u32, n: u32 },
    #[error("machine count must be at least 1")]
    NoMachines,
    #[error("bad assignment: {0}")]
    BadAssignment(String),
    #[error("atom set: {0}")]
    InconsistentAtoms(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Cuts `[0, n)` into `k` parts of near-equal size by growing breadth-first
/// regions from evenly spaced seed vertices. Parts take turns claiming one
/// vertex each; a part whose frontier is exhausted restarts from the lowest
/// unclaimed id, so every vertex is claimed and part sizes always land on
/// `floor(n/k)` or `ceil(n/k)`. Deterministic in the graph and `k`.
pub fn overpartition(g: &DataGraph, k: u32) -> Result<Vec<u32>, PartitionError> {
    let n = g.vertex_count();
    if k == 0 || k > n {
        return Err(PartitionError::KOutOfRange { k, n });
    }
    let mut quota: Vec<u32> = (0..k).map(|i| n / k + u32::from(i < n % k)).collect();
    let mut assign = vec![u32::MAX; n as usize];
    let mut frontier: Vec<VecDeque<VertexId>> = (0..k).map(|_| VecDeque::new()).collect();
    // Lowest unclaimed id, advanced lazily; also supplies the spaced seeds.
    let mut cursor = 0u32;
    for p in 0..k {
        let seed = VertexId((p as u64 * n as u64 / k as u64) as u32);
        frontier[p as usize].push_back(seed);
    }
    let mut remaining = n;
    while remaining > 0 {
        for p in 0..k {
            if quota[p as usize] == 0 {
                continue;
            }
            let v = loop {
                match frontier[p as usize].pop_front() {
                    Some(v) if assign[v.0 as usize] == u32::MAX => break v,
                    Some(_) => continue,
                    None => {
                        while assign[cursor as usize] != u32::MAX {
                            cursor += 1;
                        }
                        break VertexId(cursor);
                    }
                }
            };
            assign[v.0 as usize] = p;
            quota[p as usize] -= 1;
            remaining -= 1;
            for u in g.neighbors(v) {
                if assign[u.0 as usize] == u32::MAX {
                    frontier[p as usize].push_back(u);
                }
            }
        }
    }
    Ok(assign)
}

/// Validates an externally supplied part assignment: right length, all part
/// ids below `k`.
pub fn check_assignment(assignment: &[u32], n: u32, k: u32) -> Result<(), PartitionError> {
    if assignment.len() != n as usize {
        return Err(PartitionError::BadAssignment(format!(
            "length {} does not match vertex count {n}",
            assignment.len()
        )));
    }
    if let Some((v, &p)) = assignment.iter().enumerate().find(|(_, &p)| p >= k) {
        return Err(PartitionError::BadAssignment(format!(
            "vertex {v} assigned to part {p}, but only {k} parts exist"
        )));
    }
    Ok(())
}

/// Summary graph over parts: node weight is the bytes an atom stores (owned
/// vertex payloads plus both slots of every incident edge), edge weight is
/// the number of graph edges crossing between two parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaGraph {
    pub parts: u32,
    pub vertex_weight: Vec<u64>,
    pub edge_weight: BTreeMap<(u32, u32), u64>,
}

pub fn meta_graph(
    g: &DataGraph,
    assignment: &[u32],
    parts: u32,
) -> Result<MetaGraph, PartitionError> {
    check_assignment(assignment, g.vertex_count(), parts)?;
    let mut vertex_weight = vec![0u64; parts as usize];
    let mut edge_weight = BTreeMap::new();
    for v in 0..g.vertex_count() {
        vertex_weight[assignment[v as usize] as usize] +=
            g.vertex_datum(VertexId(v)).bytes.len() as u64;
    }
    for (idx, key) in g.edges().iter().enumerate() {
        let bytes = g.edge_datum(idx as u32, Direction::LoToHi).bytes.len() as u64
            + g.edge_datum(idx as u32, Direction::HiToLo).bytes.len() as u64;
        let (pa, pb) = (assignment[key.lo.0 as usize], assignment[key.hi.0 as usize]);
        if pa == pb {
            vertex_weight[pa as usize] += bytes;
        } else {
            // Boundary edges are stored by both atoms.
            vertex_weight[pa as usize] += bytes;
            vertex_weight[pb as usize] += bytes;
            *edge_weight.entry((pa.min(pb), pa.max(pb))).or_insert(0) += 1;
        }
    }
    Ok(MetaGraph { parts, vertex_weight, edge_weight })
}

/// Rebuilds the part summary straight from atom files, so placement for a
/// new machine count never needs the original graph or a fresh cut. Weights
/// match `meta_graph` exactly: bytes stored per atom, crossings per part
/// pair (each boundary record is counted once, from its lower endpoint's
/// atom).
pub fn meta_from_atoms(atoms: &[Atom]) -> Result<MetaGraph, PartitionError> {
    let first = atoms
        .first()
        .ok_or_else(|| PartitionError::InconsistentAtoms("no atoms".into()))?;
    let parts = first.part_count;
    let mut part_of = vec![u32::MAX; first.vertex_total as usize];
    for atom in atoms {
        for v in &atom.owned {
            part_of[v.id.0 as usize] = atom.part;
        }
    }
    let mut vertex_weight = vec![0u64; parts as usize];
    let mut edge_weight = BTreeMap::new();
    for atom in atoms {
        if atom.part >= parts {
            return Err(PartitionError::InconsistentAtoms(format!(
                "part {} out of range", atom.part
            )));
        }
        let w = &mut vertex_weight[atom.part as usize];
        *w += atom.owned.iter().map(|v| v.payload.len() as u64).sum::<u64>();
        for e in atom.interior.iter().chain(&atom.boundary) {
            *w += (e.payload[0].len() + e.payload[1].len()) as u64;
        }
        for e in &atom.boundary {
            let (pa, pb) = (part_of[e.key.lo.0 as usize], part_of[e.key.hi.0 as usize]);
            if pa == atom.part {
                *edge_weight.entry((pa.min(pb), pa.max(pb))).or_insert(0) += 1;
            }
        }
    }
    Ok(MetaGraph { parts, vertex_weight, edge_weight })
}

/// Maps parts onto machines: heaviest part first, each onto the machine with
/// the least total weight so far (ties to the lower machine id). Returns the
/// part -> machine table.
pub fn place(meta: &MetaGraph, machines: u32) -> Result<Vec<u32>, PartitionError> {
    if machines == 0 {
        return Err(PartitionError::NoMachines);
    }
    let mut order: Vec<u32> = (0..meta.parts).collect();
    order.sort_by_key(|&p| (std::cmp::Reverse(meta.vertex_weight[p as usize]), p));
    let mut load = vec![0u64; machines as usize];
    let mut placement = vec![0u32; meta.parts as usize];
    for p in order {
        let m = (0..machines).min_by_key(|&m| (load[m as usize], m)).unwrap();
        placement[p as usize] = m;
        load[m as usize] += meta.vertex_weight[p as usize];
    }
    Ok(placement)
}

/// One vertex as stored in an atom: global id, color, initial payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnedVertex {
    pub id: VertexId,
    pub color: u32,
    pub payload: Vec<u8>,
}

/// One edge as stored in an atom, with both direction slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomEdge {
    pub key: EdgeKey,
    /// `[lo -> hi, hi -> lo]` payloads.
    pub payload: [Vec<u8>; 2],
}

/// Self-contained slice of the graph for one part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub part: u32,
    pub part_count: u32,
    pub vertex_total: u32,
    /// Owned vertices, ascending by id.
    pub owned: Vec<OwnedVertex>,
    /// Edges with both endpoints owned, ascending by key.
    pub interior: Vec<AtomEdge>,
    /// Edges with exactly one endpoint owned, ascending by key. The same
    /// record appears in the other endpoint's atom.
    pub boundary: Vec<AtomEdge>,
    /// Remote endpoints of boundary edges: (vertex, owning part), ascending.
    pub ghosts: Vec<(VertexId, u32)>,
}

impl Atom {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_str(&mut out, ATOM_MAGIC);
        put_u32(&mut out, self.part);
        put_u32(&mut out, self.part_count);
        put_u32(&mut out, self.vertex_total);
        put_u32(&mut out, self.owned.len() as u32);
        for v in &self.owned {
            put_u32(&mut out, v.id.0);
            put_u32(&mut out, v.color);
            put_bytes(&mut out, &v.payload);
        }
        for list in [&self.interior, &self.boundary] {
            put_u32(&mut out, list.len() as u32);
            for e in list {
                put_u32(&mut out, e.key.lo.0);
                put_u32(&mut out, e.key.hi.0);
                put_bytes(&mut out, &e.payload[0]);
                put_bytes(&mut out, &e.payload[1]);
            }
        }
        put_u32(&mut out, self.ghosts.len() as u32);
        for &(v, p) in &self.ghosts {
            put_u32(&mut out, v.0);
            put_u32(&mut out, p);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, PartitionError> {
        let mut r = Reader::new(buf);
        if r.str()? != ATOM_MAGIC {
            return Err(DecodeError::BadMagic.into());
        }
        let part = r.u32()?;
        let part_count = r.u32()?;
        let vertex_total = r.u32()?;
        let owned = (0..r.u32()?)
            .map(|_| {
                Ok(OwnedVertex {
                    id: VertexId(r.u32()?),
                    color: r.u32()?,
                    payload: r.bytes()?,
                })
            })
            .collect::<Result<Vec<_>, DecodeError>>()?;
        let read_edges = |r: &mut Reader| -> Result<Vec<AtomEdge>, PartitionError> {
            (0..r.u32()?)
                .map(|_| {
                    let key = EdgeKey::new(VertexId(r.u32()?), VertexId(r.u32()?))?;
                    Ok(AtomEdge { key, payload: [r.bytes()?, r.bytes()?] })
                })
                .collect()
        };
        let interior = read_edges(&mut r)?;
        let boundary = read_edges(&mut r)?;
        let ghosts = (0..r.u32()?)
            .map(|_| Ok((VertexId(r.u32()?), r.u32()?)))
            .collect::<Result<Vec<_>, DecodeError>>()?;
        r.finish()?;
        Ok(Atom { part, part_count, vertex_total, owned, interior, boundary, ghosts })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), PartitionError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read_from(path: &Path) -> Result<Self, PartitionError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Conventional file name for a part's atom within an atom directory.
    pub fn file_name(part: u32) -> String {
        format!("atom-{part:04}.bin")
    }
}

/// Splits a graph into one atom per part. Colors default to 0 when no
/// coloring is supplied (the locking engine does not need one).
pub fn build_atoms(
    g: &DataGraph,
    assignment: &[u32],
    parts: u32,
    coloring: Option<&Coloring>,
) -> Result<Vec<Atom>, PartitionError> {
    check_assignment(assignment, g.vertex_count(), parts)?;
    if let Some(c) = coloring {
        if c.len() != g.vertex_count() as usize {
            return Err(PartitionError::BadAssignment(format!(
                "coloring covers {} vertices, graph has {}",
                c.len(),
                g.vertex_count()
            )));
        }
    }
    let mut atoms: Vec<Atom> = (0..parts)
        .map(|part| Atom {
            part,
            part_count: parts,
            vertex_total: g.vertex_count(),
            owned: Vec::new(),
            interior: Vec::new(),
            boundary: Vec::new(),
            ghosts: Vec::new(),
        })
        .collect();
    for v in 0..g.vertex_count() {
        let id = VertexId(v);
        atoms[assignment[v as usize] as usize].owned.push(OwnedVertex {
            id,
            color: coloring.map_or(0, |c| c.color(id)),
            payload: g.vertex_datum(id).bytes.clone(),
        });
    }
    for (idx, &key) in g.edges().iter().enumerate() {
        let record = AtomEdge {
            key,
            payload: [
                g.edge_datum(idx as u32, Direction::LoToHi).bytes.clone(),
                g.edge_datum(idx as u32, Direction::HiToLo).bytes.clone(),
            ],
        };
        let (pa, pb) = (assignment[key.lo.0 as usize], assignment[key.hi.0 as usize]);
        if pa == pb {
            atoms[pa as usize].interior.push(record);
        } else {
            atoms[pa as usize].boundary.push(record.clone());
            atoms[pb as usize].boundary.push(record);
            atoms[pa as usize].ghosts.push((key.hi, pb));
            atoms[pb as usize].ghosts.push((key.lo, pa));
        }
    }
    for atom in &mut atoms {
        atom.ghosts.sort();
        atom.ghosts.dedup();
    }
    Ok(atoms)
}

/// The slice of the graph one machine works on: the vertices it owns (full
/// adjacency and payloads), ghost copies of remote neighbors, and both slots
/// of every edge incident to an owned vertex. Global ids throughout.
#[derive(Debug, Clone, Default)]
pub struct LocalGraph {
    machine: u32,
    machine_count: u32,
    vertex_total: u32,
    num_colors: u32,
    /// Owning machine of every global vertex.
    owner_of: Vec<u32>,
    owned: Vec<VertexId>,
    ghosts: Vec<VertexId>,
    colors: BTreeMap<VertexId, u32>,
    /// Ascending neighbor lists; complete for owned vertices, restricted to
    /// locally present edges for ghosts.
    adj: BTreeMap<VertexId, Vec<VertexId>>,
    /// Every machine holding a replica of a local vertex (its owner plus the
    /// owners of all its neighbors, graph-wide), ascending. Lets a writer
    /// push a changed vertex to every replica in one hop, so machines parked
    /// at a barrier never originate traffic.
    holders: BTreeMap<VertexId, Vec<u32>>,
    vdata: BTreeMap<VertexId, Datum>,
    edata: BTreeMap<EdgeKey, [Datum; 2]>,
}

/// Builds machine `me`'s runtime graph from the full atom set and a part ->
/// machine table. Every atom is read so ghost payloads can be taken from
/// their owners; the set is cross-checked first (each vertex owned exactly
/// once, boundary records present in exactly two atoms and byte-identical).
pub fn load_local(
    atoms: &[Atom],
    placement: &[u32],
    me: u32,
    machine_count: u32,
) -> Result<LocalGraph, PartitionError> {
    if machine_count == 0 {
        return Err(PartitionError::NoMachines);
    }
    if me >= machine_count {
        return Err(PartitionError::BadAssignment(format!(
            "machine {me} out of range for {machine_count} machines"
        )));
    }
    let first = atoms
        .first()
        .ok_or_else(|| PartitionError::InconsistentAtoms("no atoms".into()))?;
    let (parts, n) = (first.part_count, first.vertex_total);
    if atoms.len() != parts as usize {
        return Err(PartitionError::InconsistentAtoms(format!(
            "have {} atoms, headers declare {parts} parts",
            atoms.len()
        )));
    }
    if placement.len() != parts as usize {
        return Err(PartitionError::BadAssignment(format!(
            "placement covers {} parts, atoms declare {parts}",
            placement.len()
        )));
    }
    if let Some(&m) = placement.iter().find(|&&m| m >= machine_count) {
        return Err(PartitionError::BadAssignment(format!(
            "placement names machine {m}, but only {machine_count} machines exist"
        )));
    }
    let mut seen_parts = vec![false; parts as usize];
    let mut part_of = vec![u32::MAX; n as usize];
    let mut num_colors = 1;
    for atom in atoms {
        if atom.part_count != parts || atom.vertex_total != n {
            return Err(PartitionError::InconsistentAtoms(format!(
                "atom {} disagrees on graph shape", atom.part
            )));
        }
        if atom.part >= parts || std::mem::replace(&mut seen_parts[atom.part as usize], true) {
            return Err(PartitionError::InconsistentAtoms(format!(
                "part {} missing or duplicated", atom.part
            )));
        }
        for v in &atom.owned {
            if v.id.0 >= n {
                return Err(PartitionError::InconsistentAtoms(format!(
                    "atom {} owns out-of-range vertex {}", atom.part, v.id
                )));
            }
            if part_of[v.id.0 as usize] != u32::MAX {
                return Err(PartitionError::InconsistentAtoms(format!(
                    "vertex {} owned by two atoms", v.id
                )));
            }
            part_of[v.id.0 as usize] = atom.part;
            num_colors = num_colors.max(v.color + 1);
        }
    }
    if let Some(v) = part_of.iter().position(|&p| p == u32::MAX) {
        return Err(PartitionError::InconsistentAtoms(format!("vertex {v} owned by no atom")));
    }
    // Boundary records must appear exactly twice (once per endpoint atom)
    // and agree byte for byte; ghost entries must name the true owner part.
    let mut boundary_seen: BTreeMap<EdgeKey, (&AtomEdge, u32)> = BTreeMap::new();
    for atom in atoms {
        for e in &atom.boundary {
            match boundary_seen.entry(e.key) {
                std::collections::btree_map::Entry::Vacant(slot) => {
                    slot.insert((e, 1));
                }
                std::collections::btree_map::Entry::Occupied(mut slot) => {
                    let (seen, count) = slot.get_mut();
                    if seen.payload != e.payload {
                        return Err(PartitionError::InconsistentAtoms(format!(
                            "boundary edge {} differs between its two atoms", e.key
                        )));
                    }
                    *count += 1;
                }
            }
        }
        for &(v, p) in &atom.ghosts {
            if v.0 >= n || part_of[v.0 as usize] != p {
                return Err(PartitionError::InconsistentAtoms(format!(
                    "atom {} lists ghost {} under part {p}, owner is part {}",
                    atom.part,
                    v,
                    part_of.get(v.0 as usize).copied().unwrap_or(u32::MAX)
                )));
            }
        }
    }
    if let Some((key, _)) = boundary_seen.iter().find(|(_, (_, count))| *count != 2) {
        return Err(PartitionError::InconsistentAtoms(format!(
            "boundary edge {key} recorded {} times, expected 2", boundary_seen[key].1
        )));
    }

    let owner_of: Vec<u32> = part_of.iter().map(|&p| placement[p as usize]).collect();
    let mut owned = Vec::new();
    let mut colors = BTreeMap::new();
    let mut vdata = BTreeMap::new();
    let mut edata = BTreeMap::new();
    let mut ghost_set = BTreeSet::new();
    for atom in atoms.iter().filter(|a| placement[a.part as usize] == me) {
        for v in &atom.owned {
            owned.push(v.id);
            colors.insert(v.id, v.color);
            vdata.insert(v.id, Datum { bytes: v.payload.clone(), version: 0 });
        }
        for e in atom.interior.iter().chain(&atom.boundary) {
            edata.entry(e.key).or_insert_with(|| {
                [
                    Datum { bytes: e.payload[0].clone(), version: 0 },
                    Datum { bytes: e.payload[1].clone(), version: 0 },
                ]
            });
        }
        for &(v, _) in &atom.ghosts {
            if owner_of[v.0 as usize] != me {
                ghost_set.insert(v);
            }
        }
    }
    owned.sort();
    // Ghost payloads come from the owning atoms, and the holder set of every
    // local vertex is computed from the graph-wide edge records (interior
    // edges of remote atoms included, since a ghost's neighborhood extends
    // beyond the edges stored here).
    let mut holder_sets: BTreeMap<VertexId, BTreeSet<u32>> = vdata
        .keys()
        .chain(ghost_set.iter())
        .map(|&v| (v, BTreeSet::from([owner_of[v.0 as usize]])))
        .collect();
    for atom in atoms {
        for v in &atom.owned {
            if ghost_set.contains(&v.id) {
                vdata.insert(v.id, Datum { bytes: v.payload.clone(), version: 0 });
            }
        }
        for e in atom.interior.iter().chain(&atom.boundary) {
            for (a, b) in [(e.key.lo, e.key.hi), (e.key.hi, e.key.lo)] {
                if let Some(set) = holder_sets.get_mut(&a) {
                    set.insert(owner_of[b.0 as usize]);
                }
            }
        }
    }
    let mut adj: BTreeMap<VertexId, Vec<VertexId>> = BTreeMap::new();
    for key in edata.keys() {
        adj.entry(key.lo).or_default().push(key.hi);
        adj.entry(key.hi).or_default().push(key.lo);
    }
    for list in adj.values_mut() {
        list.sort();
    }
    Ok(LocalGraph {
        machine: me,
        machine_count,
        vertex_total: n,
        num_colors,
        owner_of,
        owned,
        ghosts: ghost_set.into_iter().collect(),
        colors,
        adj,
        holders: holder_sets.into_iter().map(|(v, s)| (v, s.into_iter().collect())).collect(),
        vdata,
        edata,
    })
}

impl LocalGraph {
    pub fn machine(&self) -> u32 {
        self.machine
    }

    pub fn machine_count(&self) -> u32 {
        self.machine_count
    }

    pub fn vertex_total(&self) -> u32 {
        self.vertex_total
    }

    /// Number of distinct sweep phases: one past the highest color seen.
    pub fn num_colors(&self) -> u32 {
        self.num_colors
    }

    pub fn owned(&self) -> &[VertexId] {
        &self.owned
    }

    pub fn ghosts(&self) -> &[VertexId] {
        &self.ghosts
    }

    pub fn owner(&self, v: VertexId) -> u32 {
        self.owner_of[v.0 as usize]
    }

    pub fn is_owned(&self, v: VertexId) -> bool {
        self.owner(v) == self.machine
    }

    /// True when the datum has a local replica (owned or ghost).
    pub fn is_local(&self, v: VertexId) -> bool {
        self.vdata.contains_key(&v)
    }

    pub fn color(&self, v: VertexId) -> u32 {
        self.colors[&v]
    }

    /// Neighbor list: complete for owned vertices, local edges only for
    /// ghosts.
    pub fn neighbors(&self, v: VertexId) -> &[VertexId] {
        self.adj.get(&v).map_or(&[], Vec::as_slice)
    }

    pub fn datum(&self, id: DatumId) -> Option<&Datum> {
        match id {
            DatumId::Vertex(v) => self.vdata.get(&v),
            DatumId::Edge(key, dir) => self.edata.get(&key).map(|d| &d[dir.index()]),
        }
    }

    pub fn local_edges(&self) -> impl Iterator<Item = EdgeKey> + '_ {
        self.edata.keys().copied()
    }

    /// Copies the scope of an owned vertex, mirroring the single-machine
    /// snapshot layout exactly.
    pub fn scope_snapshot(&self, v: VertexId) -> ScopeSnapshot {
        assert!(self.is_owned(v), "scope opened on non-owned vertex {v}");
        let neighbors = self.neighbors(v).to_vec();
        let mut neighbor_data = Vec::with_capacity(neighbors.len());
        let mut edge_toward = Vec::with_capacity(neighbors.len());
        let mut edge_from = Vec::with_capacity(neighbors.len());
        for &u in &neighbors {
            let key = EdgeKey::new(v, u).expect("adjacency has no self loops");
            let slots = &self.edata[&key];
            neighbor_data.push(self.vdata[&u].bytes.clone());
            edge_toward.push(slots[key.slot(u)].bytes.clone());
            edge_from.push(slots[key.slot(v)].bytes.clone());
        }
        ScopeSnapshot {
            center: v,
            vertex_total: self.vertex_total,
            neighbors,
            center_data: self.vdata[&v].bytes.clone(),
            neighbor_data,
            edge_toward,
            edge_from,
        }
    }

    /// Applies one scope's writes locally, bumping each datum's version by
    /// exactly 1, and returns what must be pushed (datum, bytes, version).
    pub fn commit_writes(&mut self, writes: WriteSet) -> Vec<(DatumId, Vec<u8>, u64)> {
        let mut pushed = Vec::with_capacity(writes.len());
        for (id, bytes) in writes {
            let d = match id {
                DatumId::Vertex(v) => self.vdata.get_mut(&v),
                DatumId::Edge(key, dir) => self.edata.get_mut(&key).map(|d| &mut d[dir.index()]),
            }
            .unwrap_or_else(|| panic!("commit to {id}, which has no local replica"));
            d.bytes = bytes.clone();
            d.version += 1;
            pushed.push((id, bytes, d.version));
        }
        pushed
    }

    /// Applies a pushed replica value if it is newer than the local copy.
    /// Returns false when the push is stale and was dropped.
    pub fn apply_push(&mut self, id: DatumId, bytes: Vec<u8>, version: u64) -> bool {
        let d = match id {
            DatumId::Vertex(v) => self.vdata.get_mut(&v),
            DatumId::Edge(key, dir) => self.edata.get_mut(&key).map(|d| &mut d[dir.index()]),
        }
        .unwrap_or_else(|| panic!("push to {id}, which has no local replica"));
        if version > d.version {
            d.bytes = bytes;
            d.version = version;
            true
        } else {
            false
        }
    }

    /// Machines a changed datum must be pushed to: every other holder of a
    /// replica, reached in a single hop. A vertex lives at its owner and at
    /// the owners of all its neighbors; an edge lives at its two endpoint
    /// owners.
    pub fn push_targets(&self, id: DatumId) -> Vec<u32> {
        let mut out: Vec<u32> = match id {
            DatumId::Vertex(v) => self.holders[&v].clone(),
            DatumId::Edge(key, _) => vec![self.owner(key.lo), self.owner(key.hi)],
        };
        out.retain(|&m| m != self.machine);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Final payloads of every datum, assembled owner-side. The byte encoding is
/// canonical, so two runs agree exactly when their serialized forms do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalData {
    pub vertex_total: u32,
    pub vdata: Vec<Datum>,
    pub edges: Vec<(EdgeKey, [Datum; 2])>,
}

impl FinalData {
    pub fn from_graph(g: &DataGraph) -> Self {
        FinalData {
            vertex_total: g.vertex_count(),
            vdata: (0..g.vertex_count()).map(|v| g.vertex_datum(VertexId(v)).clone()).collect(),
            edges: g
                .edges()
                .iter()
                .enumerate()
                .map(|(i, &key)| {
                    (
                        key,
                        [
                            g.edge_datum(i as u32, Direction::LoToHi).clone(),
                            g.edge_datum(i as u32, Direction::HiToLo).clone(),
                        ],
                    )
                })
                .collect(),
        }
    }

    /// Stitches the authoritative copies back together: each vertex from its
    /// owner, each edge from the owner of its lower endpoint.
    pub fn assemble(locals: &[&LocalGraph]) -> Result<Self, PartitionError> {
        let first = locals
            .first()
            .ok_or_else(|| PartitionError::InconsistentAtoms("no machines".into()))?;
        let n = first.vertex_total;
        let mut vdata = Vec::with_capacity(n as usize);
        for v in 0..n {
            let id = VertexId(v);
            let owner = first.owner(id);
            let lg = locals
                .iter()
                .find(|lg| lg.machine == owner)
                .ok_or_else(|| PartitionError::InconsistentAtoms(format!(
                    "no machine {owner} present for vertex {id}"
                )))?;
            vdata.push(lg.vdata[&id].clone());
        }
        let mut edges = BTreeMap::new();
        for lg in locals {
            for key in lg.local_edges() {
                if lg.owner(key.lo) == lg.machine {
                    edges.insert(key, lg.edata[&key].clone());
                }
            }
        }
        Ok(FinalData { vertex_total: n, vdata, edges: edges.into_iter().collect() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_str(&mut out, FINAL_MAGIC);
        put_u32(&mut out, self.vertex_total);
        for d in &self.vdata {
            put_u64(&mut out, d.version);
            put_bytes(&mut out, &d.bytes);
        }
        put_u32(&mut out, self.edges.len() as u32);
        for (key, slots) in &self.edges {
            put_u32(&mut out, key.lo.0);
            put_u32(&mut out, key.hi.0);
            for d in slots {
                put_u64(&mut out, d.version);
                put_bytes(&mut out, &d.bytes);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, PartitionError> {
        let mut r = Reader::new(buf);
        if r.str()? != FINAL_MAGIC {
            return Err(DecodeError::BadMagic.into());
        }
        let vertex_total = r.u32()?;
        let vdata = (0..vertex_total)
            .map(|_| Ok(Datum { version: r.u64()?, bytes: r.bytes()? }))
            .collect::<Result<Vec<_>, DecodeError>>()?;
        let edges = (0..r.u32()?)
            .map(|_| {
                let key = EdgeKey::new(VertexId(r.u32()?), VertexId(r.u32()?))?;
                let fwd = Datum { version: r.u64()?, bytes: r.bytes()? };
                let rev = Datum { version: r.u64()?, bytes: r.bytes()? };
                Ok((key, [fwd, rev]))
            })
            .collect::<Result<Vec<_>, PartitionError>>()?;
        r.finish()?;
        Ok(FinalData { vertex_total, vdata, edges })
    }
}
