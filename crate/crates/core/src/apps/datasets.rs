//! Seeded dataset generation and loading. A dataset on disk is a pair of
//! files, `{base}.tsv` (the edge list) and `{base}.json` (the metadata):
//! which generator produced it, the app it is meant to drive, and the
//! payload scheme that turns the bare topology back into initialized
//! vertex and edge bytes. Generation is deterministic in `(kind, seed)`,
//! down to the file bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::EngineError;
use crate::graph::{build_graph, parse_edge_tsv, render_edge_tsv, DataGraph, VertexId};

use super::als::encode_latent;
use super::coem::encode_table;
use super::fixtures::encode_count;
use super::lbp::{encode_message, encode_vertex as encode_mrf_vertex};
use super::pagerank::encode_rank;
use super::AppSpec;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Ring plus independent random chords: connected, sparse, irregular.
    PagerankRandom { n: u32, p: f64 },
    /// Complete bipartite user/movie graph whose ratings are exact dot
    /// products of hidden rank-`rank` factors, so a perfect fit exists.
    AlsSynthetic { n_users: u32, n_movies: u32, rank: u32 },
    /// Two noun phrases and two contexts with asymmetric co-occurrence
    /// counts and one labeled seed.
    CoemToy,
    /// 4-connected lattice with random unary potentials.
    GridMrf { rows: u32, cols: u32, labels: u32 },
    /// Hub-and-spokes for the contended counter.
    CounterStar { spokes: u32, rounds: u64 },
    /// Ring carrying one charge for the relay.
    CounterRing { n: u32, charge: u64 },
}

/// How to rebuild initial payloads from the bare edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum PayloadInit {
    /// Every rank starts at `1/n`; the directed slot away from a vertex
    /// carries `1/degree`, so each vertex spreads its rank evenly.
    DegreeNormalizedRanks,
    /// Vertices below `n_users` are users, the rest movies; each starts
    /// at a seeded positive latent vector. Edge weights are ratings,
    /// stored on both slots.
    AlsLatents { n_users: u32, d: u32, latent_seed: u64 },
    /// Uniform distributions except the listed `(vertex, type)` seeds,
    /// which are frozen one-hot. Edge weights are co-occurrence counts,
    /// stored on both slots.
    CoemTables { types: u32, seeds: Vec<(u32, u32)> },
    /// Seeded unary potentials, uniform beliefs and messages, one
    /// smoothing strength on every edge.
    LbpPotentials { labels: u32, smoothing: f64, potential_seed: u64 },
    /// Bare counters: vertex 0 starts at `first`, the rest at `start`.
    Counters { start: u64, first: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    pub seed: u64,
    pub vertex_count: u32,
    pub app: AppSpec,
    pub payload: PayloadInit,
}

fn tsv_path(base: &Path) -> PathBuf {
    base.with_extension("tsv")
}

fn json_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

fn config(msg: impl Into<String>) -> EngineError {
    EngineError::Config(msg.into())
}

/// Generates the dataset named by `kind` and writes `{base}.tsv` plus
/// `{base}.json`. Same kind and seed, same bytes.
pub fn make_dataset(
    kind: &DatasetKind,
    seed: u64,
    base: &Path,
) -> Result<DatasetMeta, EngineError> {
    let (edges, meta) = generate(kind, seed)?;
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(tsv_path(base), render_edge_tsv(&edges))?;
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| config(format!("metadata does not serialize: {e}")))?;
    fs::write(json_path(base), json + "\n")?;
    Ok(meta)
}

/// Reads `{base}.tsv` + `{base}.json` back into an initialized graph.
pub fn load_dataset(base: &Path) -> Result<(DataGraph, DatasetMeta), EngineError> {
    let json = fs::read_to_string(json_path(base))?;
    let meta: DatasetMeta = serde_json::from_str(&json)
        .map_err(|e| config(format!("{}: {e}", json_path(base).display())))?;
    let tsv = fs::read_to_string(tsv_path(base))?;
    let (parsed_count, edges) = parse_edge_tsv(&tsv)?;
    if parsed_count > meta.vertex_count {
        return Err(config(format!(
            "edge list names vertex {}, but metadata declares only {}",
            parsed_count - 1,
            meta.vertex_count
        )));
    }
    let g = build_payloads(&meta, &edges)?;
    Ok((g, meta))
}

type WeightedEdges = Vec<(u32, u32, Option<f64>)>;

fn generate(kind: &DatasetKind, seed: u64) -> Result<(WeightedEdges, DatasetMeta), EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (edges, vertex_count, app, payload) = match *kind {
        DatasetKind::PagerankRandom { n, p } => {
            if n < 3 {
                return Err(config("pagerank-random needs at least 3 vertices"));
            }
            if !(0.0..1.0).contains(&p) {
                return Err(config("chord probability must lie in [0, 1)"));
            }
            let mut pairs = BTreeSet::new();
            for v in 0..n {
                let u = (v + 1) % n;
                pairs.insert((v.min(u), v.max(u)));
            }
            for lo in 0..n {
                for hi in lo + 1..n {
                    if rng.gen_bool(p) {
                        pairs.insert((lo, hi));
                    }
                }
            }
            let edges = pairs.into_iter().map(|(a, b)| (a, b, None)).collect();
            let app = AppSpec::Pagerank { alpha: 0.15, eps: 1e-5, tau: n as u64 };
            (edges, n, app, PayloadInit::DegreeNormalizedRanks)
        }
        DatasetKind::AlsSynthetic { n_users, n_movies, rank } => {
            if n_users == 0 || n_movies == 0 || rank == 0 {
                return Err(config("als-synthetic needs users, movies, and a positive rank"));
            }
            let draw = |rng: &mut ChaCha8Rng, count: u32| -> Vec<Vec<f64>> {
                (0..count)
                    .map(|_| (0..rank).map(|_| rng.gen_range(0.1..1.1)).collect())
                    .collect()
            };
            let users = draw(&mut rng, n_users);
            let movies = draw(&mut rng, n_movies);
            let mut edges = Vec::with_capacity((n_users * n_movies) as usize);
            for (u, fu) in users.iter().enumerate() {
                for (m, fm) in movies.iter().enumerate() {
                    let rating: f64 = fu.iter().zip(fm).map(|(a, b)| a * b).sum();
                    edges.push((u as u32, n_users + m as u32, Some(rating)));
                }
            }
            let app = AppSpec::Als { d: rank, lambda: 0.0, eps: 0.0 };
            let payload = PayloadInit::AlsLatents {
                n_users,
                d: rank,
                latent_seed: seed.wrapping_add(GOLDEN),
            };
            (edges, n_users + n_movies, app, payload)
        }
        DatasetKind::CoemToy => {
            let edges = vec![
                (0, 2, Some(2.0)),
                (0, 3, Some(1.0)),
                (1, 2, Some(1.0)),
                (1, 3, Some(2.0)),
            ];
            let app = AppSpec::Coem { eps: 1e-9 };
            (edges, 4, app, PayloadInit::CoemTables { types: 2, seeds: vec![(0, 0)] })
        }
        DatasetKind::GridMrf { rows, cols, labels } => {
            if rows == 0 || cols == 0 || rows * cols < 2 {
                return Err(config("grid-mrf needs at least two cells"));
            }
            if labels < 2 {
                return Err(config("grid-mrf needs at least two labels"));
            }
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let id = r * cols + c;
                    if c + 1 < cols {
                        edges.push((id, id + 1, None));
                    }
                    if r + 1 < rows {
                        edges.push((id, id + cols, None));
                    }
                }
            }
            let app = AppSpec::Lbp { eps: 1e-7 };
            let payload = PayloadInit::LbpPotentials {
                labels,
                smoothing: 0.5,
                potential_seed: seed.wrapping_add(GOLDEN),
            };
            (edges, rows * cols, app, payload)
        }
        DatasetKind::CounterStar { spokes, rounds } => {
            if spokes == 0 || rounds == 0 {
                return Err(config("counter-star needs spokes and rounds"));
            }
            let edges = (1..=spokes).map(|s| (0, s, None)).collect();
            let app = AppSpec::Contended { rounds };
            (edges, spokes + 1, app, PayloadInit::Counters { start: 0, first: 0 })
        }
        DatasetKind::CounterRing { n, charge } => {
            if n < 3 {
                return Err(config("counter-ring needs at least 3 vertices"));
            }
            if charge == 0 {
                return Err(config("counter-ring needs a positive charge"));
            }
            let edges = (0..n).map(|v| (v.min((v + 1) % n), v.max((v + 1) % n), None)).collect();
            let app = AppSpec::Relay { hops: charge - 1 };
            (edges, n, app, PayloadInit::Counters { start: 0, first: charge })
        }
    };
    let meta = DatasetMeta { kind: kind.clone(), seed, vertex_count, app, payload };
    Ok((edges, meta))
}

/// Per-vertex generator decorrelated from its neighbors but fixed by
/// `(seed, v)` alone, so payloads never depend on generation order.
fn vertex_rng(seed: u64, v: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((v as u64 + 1).wrapping_mul(GOLDEN)))
}

fn build_payloads(meta: &DatasetMeta, edges: &WeightedEdges) -> Result<DataGraph, EngineError> {
    let n = meta.vertex_count;
    let pairs: Vec<(u32, u32)> = edges.iter().map(|&(a, b, _)| (a, b)).collect();
    let mut degree = vec![0u32; n as usize];
    let mut weights: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for &(a, b, w) in edges {
        if a >= n || b >= n {
            return Err(config(format!("edge ({a}, {b}) exceeds {n} vertices")));
        }
        degree[a as usize] += 1;
        degree[b as usize] += 1;
        if let Some(w) = w {
            weights.insert((a.min(b), a.max(b)), w);
        }
    }

    // Schemes that interpret the TSV weight need one on every edge.
    let weight_of = |lo: VertexId, hi: VertexId| -> Result<f64, EngineError> {
        weights
            .get(&(lo.0, hi.0))
            .copied()
            .ok_or_else(|| config(format!("edge ({}, {}) is missing its weight", lo.0, hi.0)))
    };

    let g = match meta.payload {
        PayloadInit::DegreeNormalizedRanks => build_graph(
            n,
            &pairs,
            |_| encode_rank(1.0 / n as f64),
            |k| {
                let out_of = |v: VertexId| encode_rank(1.0 / degree[v.0 as usize] as f64);
                (out_of(k.lo), out_of(k.hi))
            },
        )?,
        PayloadInit::AlsLatents { n_users, d, latent_seed } => {
            for &(a, b, w) in edges {
                match w {
                    Some(w) if w.is_finite() => {}
                    _ => return Err(config(format!("rating on ({a}, {b}) must be finite"))),
                }
            }
            build_graph(
                n,
                &pairs,
                |v| {
                    let side = if v.0 < n_users { super::als::USER } else { super::als::MOVIE };
                    let mut rng = vertex_rng(latent_seed, v.0);
                    let latent: Vec<f64> =
                        (0..d).map(|_| rng.gen_range(0.1..1.0)).collect();
                    encode_latent(side, &latent)
                },
                |k| {
                    let r = encode_rank(weights[&(k.lo.0, k.hi.0)]);
                    (r.clone(), r)
                },
            )?
        }
        PayloadInit::CoemTables { types, ref seeds } => {
            if types == 0 {
                return Err(config("coem needs at least one type"));
            }
            for &(v, t) in seeds {
                if v >= n || t >= types {
                    return Err(config(format!("seed ({v}, {t}) out of range")));
                }
            }
            for &(a, b, _) in edges {
                let w = weight_of(VertexId(a.min(b)), VertexId(a.max(b)))?;
                if !(w > 0.0) {
                    return Err(config(format!(
                        "co-occurrence count on ({a}, {b}) must be positive"
                    )));
                }
            }
            let seed_type: BTreeMap<u32, u32> = seeds.iter().copied().collect();
            build_graph(
                n,
                &pairs,
                |v| match seed_type.get(&v.0) {
                    Some(&t) => {
                        let mut one_hot = vec![0.0; types as usize];
                        one_hot[t as usize] = 1.0;
                        encode_table(true, &one_hot)
                    }
                    None => encode_table(false, &vec![1.0 / types as f64; types as usize]),
                },
                |k| {
                    let c = encode_rank(weights[&(k.lo.0, k.hi.0)]);
                    (c.clone(), c)
                },
            )?
        }
        PayloadInit::LbpPotentials { labels, smoothing, potential_seed } => {
            let uniform = vec![1.0 / labels as f64; labels as usize];
            build_graph(
                n,
                &pairs,
                |v| {
                    let mut rng = vertex_rng(potential_seed, v.0);
                    let mut phi: Vec<f64> =
                        (0..labels).map(|_| rng.gen_range(0.2..1.0)).collect();
                    let z: f64 = phi.iter().sum();
                    phi.iter_mut().for_each(|p| *p /= z);
                    encode_mrf_vertex(&phi, &uniform)
                },
                |_| {
                    let m = encode_message(smoothing, &uniform);
                    (m.clone(), m)
                },
            )?
        }
        PayloadInit::Counters { start, first } => build_graph(
            n,
            &pairs,
            |v| encode_count(if v.0 == 0 { first } else { start }),
            |_| (Vec::new(), Vec::new()),
        )?,
    };
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{als, coem, lbp};
    use crate::locks::ConsistencyModel;

    fn make_and_load(kind: &DatasetKind, seed: u64) -> (DataGraph, DatasetMeta) {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("data");
        let made = make_dataset(kind, seed, &base).unwrap();
        let (g, loaded) = load_dataset(&base).unwrap();
        assert_eq!(made, loaded);
        (g, loaded)
    }

    #[test]
    fn als_synthetic_is_complete_bipartite() {
        let kind = DatasetKind::AlsSynthetic { n_users: 20, n_movies: 20, rank: 3 };
        let (g, meta) = make_and_load(&kind, 7);
        assert_eq!(g.vertex_count(), 40);
        assert_eq!(g.edge_count(), 400);
        assert_eq!(meta.app, AppSpec::Als { d: 3, lambda: 0.0, eps: 0.0 });
        for v in 0..40u32 {
            let (side, latent) =
                als::decode_latent(&g.vertex_datum(VertexId(v)).bytes).unwrap();
            assert_eq!(side, if v < 20 { als::USER } else { als::MOVIE });
            assert_eq!(latent.len(), 3);
            assert!(latent.iter().all(|x| (0.1..1.0).contains(x)));
        }
        // Every rating is positive and identical on both slots.
        let scope = g.open_scope(VertexId(0), ConsistencyModel::Full).unwrap();
        for &m in scope.neighbors().to_vec().iter() {
            let toward = super::super::pagerank::decode_rank(
                scope.read_edge_toward(m).unwrap(),
            )
            .unwrap();
            let from =
                super::super::pagerank::decode_rank(scope.read_edge_from(m).unwrap()).unwrap();
            assert_eq!(toward, from);
            assert!(toward > 0.0);
        }
    }

    #[test]
    fn grid_mrf_has_lattice_shape_and_normalized_potentials() {
        let kind = DatasetKind::GridMrf { rows: 4, cols: 4, labels: 3 };
        let (g, _) = make_and_load(&kind, 11);
        assert_eq!(g.vertex_count(), 16);
        assert_eq!(g.edge_count(), 24);
        for v in 0..16u32 {
            let (phi, belief) = lbp::decode_vertex(&g.vertex_datum(VertexId(v)).bytes).unwrap();
            assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(belief, vec![1.0 / 3.0; 3]);
        }
    }

    #[test]
    fn pagerank_random_spreads_each_vertex_evenly() {
        let kind = DatasetKind::PagerankRandom { n: 24, p: 0.2 };
        let (g, meta) = make_and_load(&kind, 3);
        assert_eq!(meta.app, AppSpec::Pagerank { alpha: 0.15, eps: 1e-5, tau: 24 });
        for v in 0..24u32 {
            let scope = g.open_scope(VertexId(v), ConsistencyModel::Full).unwrap();
            let out: f64 = scope
                .neighbors()
                .to_vec()
                .iter()
                .map(|&u| {
                    super::super::pagerank::decode_rank(scope.read_edge_from(u).unwrap())
                        .unwrap()
                })
                .sum();
            assert!((out - 1.0).abs() < 1e-12, "vertex {v} spreads {out}");
        }
    }

    #[test]
    fn coem_toy_freezes_its_seed() {
        let (g, _) = make_and_load(&DatasetKind::CoemToy, 0);
        let (is_seed, dist) = coem::decode_table(&g.vertex_datum(VertexId(0)).bytes).unwrap();
        assert!(is_seed);
        assert_eq!(dist, vec![1.0, 0.0]);
        let (is_seed, dist) = coem::decode_table(&g.vertex_datum(VertexId(1)).bytes).unwrap();
        assert!(!is_seed);
        assert_eq!(dist, vec![0.5, 0.5]);
    }

    #[test]
    fn counter_ring_charges_vertex_zero_only() {
        let kind = DatasetKind::CounterRing { n: 6, charge: 4 };
        let (g, meta) = make_and_load(&kind, 0);
        assert_eq!(meta.app, AppSpec::Relay { hops: 3 });
        for v in 0..6u32 {
            let c = super::super::fixtures::decode_count(&g.vertex_datum(VertexId(v)).bytes)
                .unwrap();
            assert_eq!(c, if v == 0 { 4 } else { 0 });
        }
    }

    #[test]
    fn generation_is_deterministic_down_to_file_bytes() {
        let kind = DatasetKind::PagerankRandom { n: 30, p: 0.3 };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        make_dataset(&kind, 42, &a).unwrap();
        make_dataset(&kind, 42, &b).unwrap();
        let read = |p: &Path, ext: &str| fs::read(p.with_extension(ext)).unwrap();
        assert_eq!(read(&a, "tsv"), read(&b, "tsv"));
        assert_eq!(read(&a, "json"), read(&b, "json"));
        let c = dir.path().join("c");
        make_dataset(&kind, 43, &c).unwrap();
        assert_ne!(read(&a, "tsv"), read(&c, "tsv"));
    }

    #[test]
    fn missing_ratings_are_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("data");
        let kind = DatasetKind::AlsSynthetic { n_users: 3, n_movies: 3, rank: 2 };
        make_dataset(&kind, 5, &base).unwrap();
        // Strip every weight from the edge list and reload.
        let (_, edges) = parse_edge_tsv(&fs::read_to_string(tsv_path(&base)).unwrap()).unwrap();
        let stripped: WeightedEdges = edges.iter().map(|&(a, b, _)| (a, b, None)).collect();
        fs::write(tsv_path(&base), render_edge_tsv(&stripped)).unwrap();
        let err = load_dataset(&base).unwrap_err();
        assert!(matches!(err, EngineError::Config(_)), "got {err}");
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("never");
        for kind in [
            DatasetKind::PagerankRandom { n: 2, p: 0.5 },
            DatasetKind::PagerankRandom { n: 10, p: 1.0 },
            DatasetKind::GridMrf { rows: 1, cols: 1, labels: 2 },
            DatasetKind::GridMrf { rows: 2, cols: 2, labels: 1 },
            DatasetKind::CounterRing { n: 6, charge: 0 },
            DatasetKind::CounterStar { spokes: 0, rounds: 1 },
            DatasetKind::AlsSynthetic { n_users: 0, n_movies: 3, rank: 1 },
        ] {
            let err = make_dataset(&kind, 1, &base).unwrap_err();
            assert!(matches!(err, EngineError::Config(_)), "{kind:?} gave {err}");
        }
        assert!(!tsv_path(&base).exists());
    }
}
