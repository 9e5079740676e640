//! Alternating least squares on a bipartite rating graph: users on one
//! side, movies on the other, each holding a d-dimensional latent vector.
//! The vertex payload is a side byte plus the latent vector; each edge
//! carries the observed rating on both directed slots.

use crate::bytes::{put_f64s, read_f64s, Reader};
use crate::engine::{UpdateError, UpdateFn};
use crate::graph::{Scope, VertexId};
use crate::partition::FinalData;
use crate::scheduler::UpdateTask;

use super::bad;
use super::pagerank::decode_rank as decode_rating;

pub const USER: u8 = 0;
pub const MOVIE: u8 = 1;

pub fn encode_latent(side: u8, latent: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + 4 + 8 * latent.len());
    out.push(side);
    put_f64s(&mut out, latent);
    out
}

pub fn decode_latent(bytes: &[u8]) -> Result<(u8, Vec<f64>), UpdateError> {
    let mut r = Reader::new(bytes);
    let side = r.u8().map_err(bad)?;
    let latent = read_f64s(&mut r).map_err(bad)?;
    r.finish().map_err(bad)?;
    Ok((side, latent))
}

/// Solves the symmetric positive (semi-)definite system `a x = b` in place
/// via an LDLᵀ factorization; `a` is row-major d×d with at least the lower
/// triangle filled. Fails when a pivot collapses, i.e. the normal matrix is
/// rank-deficient and unregularized.
pub fn solve_spd(a: &mut [f64], b: &mut [f64], d: usize) -> Result<(), UpdateError> {
    assert_eq!(a.len(), d * d);
    assert_eq!(b.len(), d);
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(1.0f64, f64::max);
    let tol = 1e-12 * scale;
    // Factor: a[i][j] below the diagonal becomes L, diag[j] holds D.
    let mut diag = vec![0.0; d];
    for j in 0..d {
        let mut dj = a[j * d + j];
        for k in 0..j {
            dj -= a[j * d + k] * a[j * d + k] * diag[k];
        }
        if dj.abs() <= tol {
            return Err(UpdateError(
                "singular normal system; raise the regularizer".to_string(),
            ));
        }
        diag[j] = dj;
        for i in j + 1..d {
            let mut lij = a[i * d + j];
            for k in 0..j {
                lij -= a[i * d + k] * a[j * d + k] * diag[k];
            }
            a[i * d + j] = lij / dj;
        }
    }
    // Forward solve L z = b, scale by D, back solve Lᵀ x = z.
    for i in 0..d {
        for k in 0..i {
            b[i] = b[i] - a[i * d + k] * b[k];
        }
    }
    for i in 0..d {
        b[i] /= diag[i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            b[i] = b[i] - a[k * d + i] * b[k];
        }
    }
    Ok(())
}

/// Refits the center's latent vector to its neighbors' ratings by solving
/// the regularized normal equations
/// `(sum_u x_u x_uᵀ + lambda I) x = sum_u r(u, v) x_u`.
/// With `eps > 0`, reschedules neighbors when the vector moved more than
/// `eps` in any coordinate; with `eps = 0` it posts nothing and leaves
/// ordering to sweep scheduling.
#[derive(Debug, Clone)]
pub struct Als {
    pub d: usize,
    pub lambda: f64,
    pub eps: f64,
}

impl UpdateFn for Als {
    fn execute(&self, scope: &mut Scope) -> Result<Vec<(UpdateTask, f64)>, UpdateError> {
        let d = self.d;
        let (side, old) = decode_latent(scope.read_center())?;
        if old.len() != d {
            return Err(UpdateError(format!(
                "latent of dimension {}, program expects {d}",
                old.len()
            )));
        }
        let neighbors: Vec<VertexId> = scope.neighbors().to_vec();
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for &u in &neighbors {
            let (_, xu) = decode_latent(scope.read_vertex(u).map_err(bad)?)?;
            if xu.len() != d {
                return Err(UpdateError(format!(
                    "neighbor {u} latent of dimension {}, program expects {d}",
                    xu.len()
                )));
            }
            let rating = decode_rating(scope.read_edge_toward(u).map_err(bad)?)?;
            for i in 0..d {
                b[i] += rating * xu[i];
                for j in 0..=i {
                    a[i * d + j] += xu[i] * xu[j];
                }
            }
        }
        for i in 0..d {
            a[i * d + i] += self.lambda;
        }
        solve_spd(&mut a, &mut b, d)?;
        let new = b;
        let moved = new
            .iter()
            .zip(&old)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        if new != old {
            scope.write_center(encode_latent(side, &new)).map_err(bad)?;
        }
        if self.eps > 0.0 && moved > self.eps {
            Ok(neighbors
                .into_iter()
                .map(|u| (UpdateTask { fn_id: 0, vertex: u }, moved))
                .collect())
        } else {
            Ok(Vec::new())
        }
    }
}

/// Root-mean-square error of the fitted latents against every observed
/// rating — the training objective, computed from a finished run's data.
pub fn train_rmse(data: &FinalData) -> Result<f64, UpdateError> {
    if data.edges.is_empty() {
        return Ok(0.0);
    }
    let mut latents = Vec::with_capacity(data.vdata.len());
    for datum in &data.vdata {
        latents.push(decode_latent(&datum.bytes)?.1);
    }
    let mut total = 0.0;
    for (key, slots) in &data.edges {
        let rating = decode_rating(&slots[0].bytes)?;
        let predicted: f64 = latents[key.lo.0 as usize]
            .iter()
            .zip(&latents[key.hi.0 as usize])
            .map(|(x, y)| x * y)
            .sum();
        total += (rating - predicted) * (rating - predicted);
    }
    Ok((total / data.edges.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, DataGraph, DatumId};
    use crate::locks::ConsistencyModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent linear solver for the oracle: Gaussian elimination with
    /// partial pivoting, no shared code with `solve_spd`.
    fn gauss_solve(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
        let mut m: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut row: Vec<f64> = (0..d).map(|j| a[i * d + j]).collect();
                row.push(b[i]);
                row
            })
            .collect();
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
                .unwrap();
            m.swap(col, pivot);
            for row in col + 1..d {
                let f = m[row][col] / m[col][col];
                for k in col..=d {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
        let mut x = vec![0.0; d];
        for row in (0..d).rev() {
            let mut acc = m[row][d];
            for k in row + 1..d {
                acc -= m[row][k] * x[k];
            }
            x[row] = acc / m[row][row];
        }
        x
    }

    /// Fills a symmetric positive definite matrix (lower triangle is what
    /// `solve_spd` reads; the oracle wants it mirrored).
    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
        let cols: Vec<Vec<f64>> = (0..d + 2)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut a = vec![0.0; d * d];
        for c in &cols {
            for i in 0..d {
                for j in 0..d {
                    a[i * d + j] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            a[i * d + i] += 0.1;
        }
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (a, b)
    }

    #[test]
    fn solver_matches_gaussian_elimination_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 1..=6 {
            for _ in 0..20 {
                let (a, b) = random_spd(&mut rng, d);
                let want = gauss_solve(&a, &b, d);
                let mut a2 = a.clone();
                let mut x = b.clone();
                solve_spd(&mut a2, &mut x, d).unwrap();
                for i in 0..d {
                    assert!(
                        (x[i] - want[i]).abs() <= 1e-10,
                        "d={d} component {i}: {} vs {}",
                        x[i],
                        want[i]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_matrix_is_reported_singular() {
        let mut a = vec![0.0; 4];
        let mut b = vec![1.0; 2];
        let err = solve_spd(&mut a, &mut b, 2).unwrap_err();
        assert!(err.to_string().contains("singular"));
    }

    fn star(center_side: u8, neighbor_latents: &[f64], ratings: &[f64]) -> DataGraph {
        let n = 1 + neighbor_latents.len() as u32;
        let edges: Vec<(u32, u32)> = (1..n).map(|i| (0, i)).collect();
        build_graph(
            n,
            &edges,
            |v| {
                if v.0 == 0 {
                    encode_latent(center_side, &[0.0])
                } else {
                    encode_latent(1 - center_side, &[neighbor_latents[v.0 as usize - 1]])
                }
            },
            |e| {
                let r = ratings[e.hi.0 as usize - 1];
                (r.to_le_bytes().to_vec(), r.to_le_bytes().to_vec())
            },
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_fit_gives_nine_fifths() {
        let g = star(MOVIE, &[1.0, 2.0], &[1.0, 4.0]);
        let mut scope = g.open_scope(VertexId(0), ConsistencyModel::Edge).unwrap();
        let update = Als { d: 1, lambda: 0.0, eps: 0.0 };
        update.execute(&mut scope).unwrap();
        let written = scope.writes().get(&DatumId::Vertex(VertexId(0))).unwrap();
        let (_, latent) = decode_latent(written).unwrap();
        assert_eq!(latent, vec![1.8]);
    }

    #[test]
    fn isolated_vertex_with_regularizer_goes_to_zero() {
        let g = build_graph(
            2,
            &[],
            |v| encode_latent(if v.0 == 0 { USER } else { MOVIE }, &[3.0, -1.0]),
            |_| (Vec::new(), Vec::new()),
        )
        .unwrap();
        let mut scope = g.open_scope(VertexId(0), ConsistencyModel::Edge).unwrap();
        let update = Als { d: 2, lambda: 0.5, eps: 0.0 };
        update.execute(&mut scope).unwrap();
        let written = scope.writes().get(&DatumId::Vertex(VertexId(0))).unwrap();
        assert_eq!(decode_latent(written).unwrap().1, vec![0.0, 0.0]);
    }

    #[test]
    fn isolated_vertex_without_regularizer_is_singular() {
        let g = build_graph(1, &[], |_| encode_latent(USER, &[1.0]), |_| (Vec::new(), Vec::new()))
            .unwrap();
        let mut scope = g.open_scope(VertexId(0), ConsistencyModel::Edge).unwrap();
        let update = Als { d: 1, lambda: 0.0, eps: 0.0 };
        assert!(update.execute(&mut scope).is_err());
    }

    #[test]
    fn fit_matches_closed_form_normal_equations() {
        // Oracle: build A and b densely, solve with the independent
        // elimination routine, compare against the update's write.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 3;
        let latents: Vec<Vec<f64>> =
            (0..5).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ratings: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lambda = 0.3;

        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for (xu, r) in latents.iter().zip(&ratings) {
            for i in 0..d {
                b[i] += r * xu[i];
                for j in 0..d {
                    a[i * d + j] += xu[i] * xu[j];
                }
            }
        }
        for i in 0..d {
            a[i * d + i] += lambda;
        }
        let want = gauss_solve(&a, &b, d);

        let n = 1 + latents.len() as u32;
        let edges: Vec<(u32, u32)> = (1..n).map(|i| (0, i)).collect();
        let g = build_graph(
            n,
            &edges,
            |v| {
                if v.0 == 0 {
                    encode_latent(USER, &vec![0.0; d])
                } else {
                    encode_latent(MOVIE, &latents[v.0 as usize - 1])
                }
            },
            |e| {
                let r = ratings[e.hi.0 as usize - 1];
                (r.to_le_bytes().to_vec(), r.to_le_bytes().to_vec())
            },
        )
        .unwrap();
        let mut scope = g.open_scope(VertexId(0), ConsistencyModel::Edge).unwrap();
        let update = Als { d, lambda, eps: 0.0 };
        update.execute(&mut scope).unwrap();
        let written = scope.writes().get(&DatumId::Vertex(VertexId(0))).unwrap();
        let (_, got) = decode_latent(written).unwrap();
        for i in 0..d {
            assert!((got[i] - want[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn rmse_of_exact_factorization_is_zero() {
        let g = star(USER, &[2.0], &[6.0]);
        let mut data = FinalData::from_graph(&g);
        // Set the center latent to the exact solution 3.0.
        data.vdata[0].bytes = encode_latent(USER, &[3.0]);
        assert!(train_rmse(&data).unwrap() < 1e-12);
    }
}
