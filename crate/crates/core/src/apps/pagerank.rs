//! Damped random-surfer ranking. The vertex payload is one f64 rank; each
//! directed edge slot u -> v carries the weight w(u, v), row-normalized so
//! a vertex's outgoing weights sum to one.

use crate::engine::{UpdateError, UpdateFn};
use crate::graph::{Scope, VertexId};
use crate::scheduler::UpdateTask;

use super::bad;

pub fn encode_rank(r: f64) -> Vec<u8> {
    r.to_le_bytes().to_vec()
}

pub fn decode_rank(bytes: &[u8]) -> Result<f64, UpdateError> {
    let arr: [u8; 8] = bytes
        .try_into()
        .map_err(|_| UpdateError(format!("rank payload of {} bytes", bytes.len())))?;
    Ok(f64::from_le_bytes(arr))
}

/// Recomputes the center's rank from its neighbors:
/// `R(v) = alpha / n + (1 - alpha) * sum_u w(u, v) * R(u)`.
/// Reschedules the neighborhood at priority `|delta R|` when the rank moved
/// more than `eps`.
#[derive(Debug, Clone)]
pub struct Pagerank {
    pub alpha: f64,
    pub eps: f64,
}

impl UpdateFn for Pagerank {
    fn execute(&self, scope: &mut Scope) -> Result<Vec<(UpdateTask, f64)>, UpdateError> {
        let n = scope.vertex_total() as f64;
        let old = decode_rank(scope.read_center())?;
        let neighbors: Vec<VertexId> = scope.neighbors().to_vec();
        let mut flowing = 0.0;
        for &u in &neighbors {
            let rank = decode_rank(scope.read_vertex(u).map_err(bad)?)?;
            let weight = decode_rank(scope.read_edge_toward(u).map_err(bad)?)?;
            flowing += weight * rank;
        }
        let new = self.alpha / n + (1.0 - self.alpha) * flowing;
        if new != old {
            scope.write_center(encode_rank(new)).map_err(bad)?;
        }
        let delta = (new - old).abs();
        if delta > self.eps {
            Ok(neighbors
                .into_iter()
                .map(|u| (UpdateTask { fn_id: 0, vertex: u }, delta))
                .collect())
        } else {
            Ok(Vec::new())
        }
    }
}
