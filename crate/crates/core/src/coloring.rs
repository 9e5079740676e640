//! Graph coloring for the chromatic engine.
//!
//! `greedy_color` produces a proper first-order coloring (adjacent vertices
//! differ); `square_color` colors the square graph so that any two vertices
//! within distance two differ, which the chromatic engine needs to run
//! full-consistency updates safely. Both visit vertices in BFS order from
//! the lowest-id vertex of each component and assign the smallest color not
//! used by an already-colored neighbor, so results are deterministic.

use std::collections::VecDeque;

use thiserror::Error;

use crate::graph::{DataGraph, VertexId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ColoringError {
    #[error("coloring has {got} entries but the graph has {want} vertices")]
    WrongLength { got: usize, want: usize },
    #[error("vertices {0} and {1} are within distance {2} but share color {3}")]
    Conflict(VertexId, VertexId, u32, u32),
    #[error("coloring file line {line}: {msg}")]
    BadFile { line: usize, msg: String },
}

/// Which separation a coloring must provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorOrder {
    /// Adjacent vertices get distinct colors.
    First,
    /// Vertices within distance two get distinct colors.
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    colors: Vec<u32>,
}

impl Coloring {
    pub fn new(colors: Vec<u32>) -> Self {
        Coloring { colors }
    }

    /// All vertices share color 0; valid for vertex-consistency execution.
    pub fn uniform(n: u32) -> Self {
        Coloring { colors: vec![0; n as usize] }
    }

    pub fn color(&self, v: VertexId) -> u32 {
        self.colors[v.0 as usize]
    }

    pub fn colors(&self) -> &[u32] {
        &self.colors
    }

    pub fn into_colors(self) -> Vec<u32> {
        self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn num_colors(&self) -> u32 {
        self.colors.iter().max().map_or(0, |m| m + 1)
    }

    /// One integer per line, line i carrying the color of vertex i.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.colors {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ColoringError> {
        let mut colors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let c: u32 = line.parse().map_err(|_| ColoringError::BadFile {
                line: lineno + 1,
                msg: format!("not a non-negative integer: {line:?}"),
            })?;
            colors.push(c);
        }
        Ok(Coloring { colors })
    }
}

/// Neighbors of `v` within distance two (excluding `v`), ascending.
fn two_hop(g: &DataGraph, v: VertexId) -> Vec<VertexId> {
    let mut out: Vec<VertexId> = Vec::new();
    for u in g.neighbors(v) {
        out.push(u);
        for w in g.neighbors(u) {
            if w != v {
                out.push(w);
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Greedy BFS coloring over an arbitrary symmetric neighbor relation.
fn greedy_bfs(n: u32, neighbors_of: impl Fn(VertexId) -> Vec<VertexId>) -> Coloring {
    const UNSET: u32 = u32::MAX;
    let mut colors = vec![UNSET; n as usize];
    let mut queue = VecDeque::new();
    for root in 0..n {
        if colors[root as usize] != UNSET {
            continue;
        }
        // mark enqueued vertices with a reserved sentinel so they are not
        // enqueued twice; real colors are assigned on dequeue
        const QUEUED: u32 = u32::MAX - 1;
        colors[root as usize] = QUEUED;
        queue.push_back(VertexId(root));
        while let Some(v) = queue.pop_front() {
            let nbrs = neighbors_of(v);
            let mut used: Vec<u32> = nbrs
                .iter()
                .filter_map(|u| {
                    let c = colors[u.0 as usize];
                    (c != UNSET && c != QUEUED).then_some(c)
                })
                .collect();
            used.sort_unstable();
            used.dedup();
            let mut c = 0u32;
            for u in used {
                if u == c {
                    c += 1;
                } else if u > c {
                    break;
                }
            }
            colors[v.0 as usize] = c;
            for u in nbrs {
                if colors[u.0 as usize] == UNSET {
                    colors[u.0 as usize] = QUEUED;
                    queue.push_back(u);
                }
            }
        }
    }
    Coloring { colors }
}

/// Deterministic greedy first-order coloring.
pub fn greedy_color(g: &DataGraph) -> Coloring {
    greedy_bfs(g.vertex_count(), |v| g.neighbors(v).collect())
}

/// Deterministic greedy coloring of the square graph (distance <= 2).
pub fn square_color(g: &DataGraph) -> Coloring {
    greedy_bfs(g.vertex_count(), |v| two_hop(g, v))
}

/// Checks that `coloring` separates vertices at the given order's distance.
pub fn validate_coloring(
    g: &DataGraph,
    coloring: &Coloring,
    order: ColorOrder,
) -> Result<(), ColoringError> {
    if coloring.len() != g.vertex_count() as usize {
        return Err(ColoringError::WrongLength {
            got: coloring.len(),
            want: g.vertex_count() as usize,
        });
    }
    for key in g.edges() {
        if coloring.color(key.lo) == coloring.color(key.hi) {
            return Err(ColoringError::Conflict(key.lo, key.hi, 1, coloring.color(key.lo)));
        }
    }
    if order == ColorOrder::Second {
        for i in 0..g.vertex_count() {
            let v = VertexId(i);
            for u in two_hop(g, v) {
                if u > v && coloring.color(u) == coloring.color(v) {
                    return Err(ColoringError::Conflict(v, u, 2, coloring.color(v)));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn graph(n: u32, edges: &[(u32, u32)]) -> DataGraph {
        build_graph(n, edges, |_| vec![], |_| (vec![], vec![])).unwrap()
    }

    /// Brute-force chromatic number oracle over an explicit neighbor
    /// relation; practical only for tiny graphs.
    fn chromatic_number(n: u32, adjacent: impl Fn(u32, u32) -> bool) -> u32 {
        for k in 1..=n {
            let mut assign = vec![0u32; n as usize];
            loop {
                let proper = (0..n).all(|i| {
                    (0..i).all(|j| !adjacent(i, j) || assign[i as usize] != assign[j as usize])
                });
                if proper {
                    return k;
                }
                // advance the base-k odometer; stop when it wraps
                let mut pos = 0usize;
                while pos < n as usize {
                    assign[pos] += 1;
                    if assign[pos] < k {
                        break;
                    }
                    assign[pos] = 0;
                    pos += 1;
                }
                if pos == n as usize {
                    break;
                }
            }
        }
        n
    }

    #[test]
    fn path_colors_alternate() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let c = greedy_color(&g);
        assert_eq!(c.colors(), &[0, 1, 0]);
        assert_eq!(c.num_colors(), 2);
        validate_coloring(&g, &c, ColorOrder::First).unwrap();
    }

    #[test]
    fn complete_bipartite_uses_two_colors() {
        let g = graph(4, &[(0, 2), (0, 3), (1, 2), (1, 3)]);
        let c = greedy_color(&g);
        assert_eq!(c.num_colors(), 2);
        validate_coloring(&g, &c, ColorOrder::First).unwrap();
    }

    #[test]
    fn complete_graph_needs_all_colors() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let c = greedy_color(&g);
        assert_eq!(c.num_colors(), 4);
        validate_coloring(&g, &c, ColorOrder::First).unwrap();
    }

    #[test]
    fn square_coloring_of_path_needs_three() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let c = square_color(&g);
        assert_eq!(c.num_colors(), 3);
        validate_coloring(&g, &c, ColorOrder::Second).unwrap();
    }

    #[test]
    fn single_vertex_gets_one_color() {
        let g = graph(1, &[]);
        let c = greedy_color(&g);
        assert_eq!(c.colors(), &[0]);
        assert_eq!(c.num_colors(), 1);
    }

    #[test]
    fn star_square_coloring_matches_brute_force_oracle() {
        // star K1,4: all leaves are within distance two of each other, so
        // the square graph is complete on five vertices
        let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let c = square_color(&g);
        validate_coloring(&g, &c, ColorOrder::Second).unwrap();
        let adj2 = |i: u32, j: u32| {
            let vi = VertexId(i);
            two_hop(&g, vi).contains(&VertexId(j))
        };
        let oracle = chromatic_number(5, adj2);
        assert_eq!(oracle, 5, "square of K1,4 is K5");
        assert_eq!(c.num_colors(), oracle);
    }

    #[test]
    fn coloring_is_deterministic() {
        let edges = [(0, 3), (1, 4), (2, 4), (0, 1), (3, 4)];
        let g = graph(5, &edges);
        assert_eq!(greedy_color(&g), greedy_color(&g));
        assert_eq!(square_color(&g), square_color(&g));
    }

    #[test]
    fn validate_rejects_bad_coloring() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let bad = Coloring::new(vec![0, 0, 1]);
        assert!(matches!(
            validate_coloring(&g, &bad, ColorOrder::First),
            Err(ColoringError::Conflict(..))
        ));
        let short = Coloring::new(vec![0, 1]);
        assert!(matches!(
            validate_coloring(&g, &short, ColorOrder::First),
            Err(ColoringError::WrongLength { got: 2, want: 3 })
        ));
        // first-order-valid but not second-order: endpoints of the path
        let first_only = Coloring::new(vec![0, 1, 0]);
        validate_coloring(&g, &first_only, ColorOrder::First).unwrap();
        assert!(matches!(
            validate_coloring(&g, &first_only, ColorOrder::Second),
            Err(ColoringError::Conflict(VertexId(0), VertexId(2), 2, 0))
        ));
    }

    #[test]
    fn file_roundtrip() {
        let c = Coloring::new(vec![0, 2, 1, 0]);
        let text = c.render();
        assert_eq!(text, "0\n2\n1\n0\n");
        assert_eq!(Coloring::parse(&text).unwrap(), c);
        assert!(matches!(Coloring::parse("0\nx\n"), Err(ColoringError::BadFile { line: 2, .. })));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_graph() -> impl Strategy<Value = (u32, Vec<(u32, u32)>)> {
            (2u32..24).prop_flat_map(|n| {
                let pairs: Vec<(u32, u32)> =
                    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
                proptest::sample::subsequence(pairs.clone(), 0..=pairs.len())
                    .prop_map(move |es| (n, es))
            })
        }

        proptest! {
            #[test]
            fn greedy_always_proper((n, edges) in arb_graph()) {
                let g = graph(n, &edges);
                let c = greedy_color(&g);
                prop_assert!(validate_coloring(&g, &c, ColorOrder::First).is_ok());
            }

            #[test]
            fn square_always_second_order((n, edges) in arb_graph()) {
                let g = graph(n, &edges);
                let c = square_color(&g);
                prop_assert!(validate_coloring(&g, &c, ColorOrder::Second).is_ok());
            }
        }
    }
}
