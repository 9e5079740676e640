//! Label-distribution propagation over a bipartite noun-phrase/context
//! graph. Each vertex holds a probability table over the label types plus
//! a seed flag; edges carry co-occurrence counts. Seed vertices keep their
//! hand-labeled table forever.

use crate::bytes::{put_f64s, read_f64s, Reader};
use crate::engine::{UpdateError, UpdateFn};
use crate::graph::{Scope, VertexId};
use crate::scheduler::UpdateTask;

use super::bad;
use super::pagerank::decode_rank as decode_count;

pub fn encode_table(seed: bool, dist: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + 4 + 8 * dist.len());
    out.push(seed as u8);
    put_f64s(&mut out, dist);
    out
}

pub fn decode_table(bytes: &[u8]) -> Result<(bool, Vec<f64>), UpdateError> {
    let mut r = Reader::new(bytes);
    let seed = r.u8().map_err(bad)?;
    let dist = read_f64s(&mut r).map_err(bad)?;
    r.finish().map_err(bad)?;
    Ok((seed != 0, dist))
}

/// Replaces the center's table with the count-weighted, renormalized sum
/// of its neighbors' tables; seeds are left untouched. Neighbors are
/// rescheduled at the L1 change when it exceeds `eps`.
#[derive(Debug, Clone)]
pub struct Coem {
    pub eps: f64,
}

impl UpdateFn for Coem {
    fn execute(&self, scope: &mut Scope) -> Result<Vec<(UpdateTask, f64)>, UpdateError> {
        let (is_seed, old) = decode_table(scope.read_center())?;
        if is_seed {
            return Ok(Vec::new());
        }
        let neighbors: Vec<VertexId> = scope.neighbors().to_vec();
        let mut acc = vec![0.0; old.len()];
        for &u in &neighbors {
            let (_, table) = decode_table(scope.read_vertex(u).map_err(bad)?)?;
            if table.len() != old.len() {
                return Err(UpdateError(format!(
                    "neighbor {u} table over {} types, center has {}",
                    table.len(),
                    old.len()
                )));
            }
            let count = decode_count(scope.read_edge_toward(u).map_err(bad)?)?;
            for (slot, p) in acc.iter_mut().zip(&table) {
                *slot += count * p;
            }
        }
        let mass: f64 = acc.iter().sum();
        if !(mass > 0.0) {
            return Err(UpdateError(
                "zero probability mass flowed in; input tables are malformed".to_string(),
            ));
        }
        for slot in &mut acc {
            *slot /= mass;
        }
        let l1: f64 = acc.iter().zip(&old).map(|(a, b)| (a - b).abs()).sum();
        if acc != old {
            scope.write_center(encode_table(false, &acc)).map_err(bad)?;
        }
        if l1 > self.eps {
            Ok(neighbors
                .into_iter()
                .map(|u| (UpdateTask { fn_id: 0, vertex: u }, l1))
                .collect())
        } else {
            Ok(Vec::new())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, DataGraph, DatumId};
    use crate::locks::ConsistencyModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_neighbor_graph(
        center: (bool, Vec<f64>),
        tables: [Vec<f64>; 2],
        counts: [f64; 2],
    ) -> DataGraph {
        build_graph(
            3,
            &[(0, 1), (0, 2)],
            |v| match v.0 {
                0 => encode_table(center.0, &center.1),
                i => encode_table(false, &tables[i as usize - 1]),
            },
            |e| {
                let c = counts[e.hi.0 as usize - 1];
                (c.to_le_bytes().to_vec(), c.to_le_bytes().to_vec())
            },
        )
        .unwrap()
    }

    #[test]
    fn unit_counts_average_to_seven_three() {
        let g = two_neighbor_graph(
            (false, vec![0.5, 0.5]),
            [vec![0.8, 0.2], vec![0.6, 0.4]],
            [1.0, 1.0],
        );
        let mut scope = g.open_scope(VertexId(0), ConsistencyModel::Edge).unwrap();
        Coem { eps: 1e-9 }.execute(&mut scope).unwrap();
        let written = scope.writes().get(&DatumId::Vertex(VertexId(0))).unwrap();
        let (_, dist) = decode_table(written).unwrap();
        assert!((dist[0] - 0.7).abs() < 1e-15);
        assert!((dist[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn seeds_never_move_or_post() {
        let g = two_neighbor_graph(
            (true, vec![1.0, 0.0]),
            [vec![0.0, 1.0], vec![0.0, 1.0]],
            [5.0, 5.0],
        );
        let mut scope = g.open_scope(VertexId(0), ConsistencyModel::Edge).unwrap();
        let posts = Coem { eps: 1e-9 }.execute(&mut scope).unwrap();
        assert!(posts.is_empty());
        assert!(scope.writes().is_empty());
    }

    #[test]
    fn zero_inflow_is_an_error() {
        let g = two_neighbor_graph(
            (false, vec![0.5, 0.5]),
            [vec![0.0, 0.0], vec![0.0, 0.0]],
            [1.0, 1.0],
        );
        let mut scope = g.open_scope(VertexId(0), ConsistencyModel::Edge).unwrap();
        let err = Coem { eps: 1e-9 }.execute(&mut scope).unwrap_err();
        assert!(err.to_string().contains("zero probability mass"));
    }

    #[test]
    fn output_stays_a_probability_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let t1: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t2: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let counts = [rng.gen_range(1.0..9.0f64).round(), rng.gen_range(1.0..9.0f64).round()];
            let g = two_neighbor_graph((false, vec![1.0 / 3.0; 3]), [t1, t2], counts);
            let mut scope = g.open_scope(VertexId(0), ConsistencyModel::Edge).unwrap();
            Coem { eps: 0.0 }.execute(&mut scope).unwrap();
            let written = scope.writes().get(&DatumId::Vertex(VertexId(0))).unwrap();
            let (_, dist) = decode_table(written).unwrap();
            assert!(dist.iter().all(|p| *p >= 0.0));
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
