//! Residual-prioritized loopy belief propagation on a pairwise MRF with
//! Potts potentials `psi(a, b) = exp(-smoothing * [a != b])`. The vertex
//! payload is the unary potential plus the current belief; each directed
//! edge slot u -> v carries the edge's smoothing strength and the message
//! m(u -> v). All tables are kept normalized.

use crate::bytes::{put_f64, put_f64s, read_f64s, Reader};
use crate::engine::{UpdateError, UpdateFn};
use crate::graph::{Scope, VertexId};
use crate::scheduler::UpdateTask;

use super::bad;

pub fn encode_vertex(potential: &[f64], belief: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 16 * potential.len());
    put_f64s(&mut out, potential);
    put_f64s(&mut out, belief);
    out
}

pub fn decode_vertex(bytes: &[u8]) -> Result<(Vec<f64>, Vec<f64>), UpdateError> {
    let mut r = Reader::new(bytes);
    let potential = read_f64s(&mut r).map_err(bad)?;
    let belief = read_f64s(&mut r).map_err(bad)?;
    r.finish().map_err(bad)?;
    Ok((potential, belief))
}

pub fn encode_message(smoothing: f64, message: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * message.len());
    put_f64(&mut out, smoothing);
    put_f64s(&mut out, message);
    out
}

pub fn decode_message(bytes: &[u8]) -> Result<(f64, Vec<f64>), UpdateError> {
    let mut r = Reader::new(bytes);
    let smoothing = r.f64().map_err(bad)?;
    let message = read_f64s(&mut r).map_err(bad)?;
    r.finish().map_err(bad)?;
    Ok((smoothing, message))
}

fn normalize(table: &mut [f64]) -> Result<(), UpdateError> {
    let mass: f64 = table.iter().sum();
    if !(mass > 0.0) {
        return Err(UpdateError("table mass vanished; potentials are malformed".to_string()));
    }
    for p in table.iter_mut() {
        *p /= mass;
    }
    Ok(())
}

/// Recomputes the center's belief and every outgoing message by
/// sum-product, rescheduling each neighbor at the largest coordinate move
/// of its incoming message when that residual exceeds `eps`.
#[derive(Debug, Clone)]
pub struct Lbp {
    pub eps: f64,
}

impl UpdateFn for Lbp {
    fn execute(&self, scope: &mut Scope) -> Result<Vec<(UpdateTask, f64)>, UpdateError> {
        let (potential, old_belief) = decode_vertex(scope.read_center())?;
        let labels = potential.len();
        let neighbors: Vec<VertexId> = scope.neighbors().to_vec();

        let mut incoming = Vec::with_capacity(neighbors.len());
        let mut outgoing = Vec::with_capacity(neighbors.len());
        for &u in &neighbors {
            let (_, inc) = decode_message(scope.read_edge_toward(u).map_err(bad)?)?;
            let (smoothing, out) = decode_message(scope.read_edge_from(u).map_err(bad)?)?;
            if inc.len() != labels || out.len() != labels {
                return Err(UpdateError(format!(
                    "message over {} labels on edge to {u}, potentials have {labels}",
                    inc.len().max(out.len())
                )));
            }
            incoming.push(inc);
            outgoing.push((smoothing, out));
        }

        let mut belief = potential.clone();
        for inc in &incoming {
            for (b, m) in belief.iter_mut().zip(inc) {
                *b *= m;
            }
        }
        normalize(&mut belief)?;

        let mut posts = Vec::new();
        for (i, &u) in neighbors.iter().enumerate() {
            // Cavity table: the belief with u's own message left out.
            let mut cavity = potential.clone();
            for (j, inc) in incoming.iter().enumerate() {
                if j == i {
                    continue;
                }
                for (c, m) in cavity.iter_mut().zip(inc) {
                    *c *= m;
                }
            }
            normalize(&mut cavity)?;
            // Potts pairwise: agreement passes whole, disagreement damped.
            let (smoothing, ref old_message) = outgoing[i];
            let damp = (-smoothing).exp();
            let mut message: Vec<f64> =
                cavity.iter().map(|c| c + damp * (1.0 - c)).collect();
            normalize(&mut message)?;
            let residual = message
                .iter()
                .zip(old_message)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if &message != old_message {
                scope.write_edge_from(u, encode_message(smoothing, &message)).map_err(bad)?;
            }
            if residual > self.eps {
                posts.push((UpdateTask { fn_id: 0, vertex: u }, residual));
            }
        }

        if belief != old_belief {
            scope.write_center(encode_vertex(&potential, &belief)).map_err(bad)?;
        }
        Ok(posts)
    }
}
