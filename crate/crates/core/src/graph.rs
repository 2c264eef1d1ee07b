//! Communication graph: incidence matrix, Kronecker lifting, Laplacian and
//! connectivity queries.
//!
//! Vertices and edges are given 1-based at the public boundary (matching
//! the scenario format) and stored 0-based. Each edge is an ordered pair
//! `(tail, head)`; an undirected graph is represented with an arbitrary but
//! fixed orientation, conventionally `tail < head`. Flipping an edge's
//! orientation flips the sign of its incidence column and therefore of the
//! corresponding edge spring state.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    num_vertices: usize,
    agent_dim: usize,
    edges: Vec<Edge>,
    incidence: DMatrix<f64>,
    directed: bool,
}

/// Wire form of the graph section of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub num_vertices: usize,
    pub agent_dim: usize,
    pub edges: Vec<[usize; 2]>,
    /// Whether edge orientation is meaningful; undirected by default.
    #[serde(default)]
    pub directed: bool,
}

impl NetworkGraph {
    /// Builds a graph from 1-based `[tail, head]` pairs.
    pub fn new(num_vertices: usize, agent_dim: usize, edges: &[[usize; 2]]) -> Result<Self> {
        if num_vertices == 0 {
            return Err(Error::InvalidGraph("graph needs at least one vertex".into()));
        }
        if agent_dim == 0 {
            return Err(Error::InvalidGraph("agent dimension must be positive".into()));
        }
        let mut stored = Vec::with_capacity(edges.len());
        for (k, &[tail, head]) in edges.iter().enumerate() {
            for vertex in [tail, head] {
                if vertex == 0 || vertex > num_vertices {
                    return Err(Error::VertexOutOfRange {
                        edge: k + 1,
                        vertex,
                        num_vertices,
                    });
                }
            }
            if tail == head {
                return Err(Error::SelfLoop { edge: k + 1, vertex: tail });
            }
            stored.push(Edge {
                tail: tail - 1,
                head: head - 1,
            });
        }
        let incidence = build_incidence(num_vertices, &stored);
        Ok(NetworkGraph {
            num_vertices,
            agent_dim,
            edges: stored,
            incidence,
            directed: false,
        })
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        Ok(Self::new(spec.num_vertices, spec.agent_dim, &spec.edges)?.with_directed(spec.directed))
    }

    pub fn with_directed(mut self, directed: bool) -> Self {
        self.directed = directed;
        self
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            num_vertices: self.num_vertices,
            agent_dim: self.agent_dim,
            edges: self.edges.iter().map(|e| [e.tail + 1, e.head + 1]).collect(),
            directed: self.directed,
        }
    }

    /// Undirected ring `1-2-…-N-1`, each edge oriented from the smaller index.
    pub fn ring(num_vertices: usize, agent_dim: usize) -> Result<Self> {
        let edges: Vec<[usize; 2]> = match num_vertices {
            0 | 1 => vec![],
            2 => vec![[1, 2]],
            n => (1..=n)
                .map(|i| {
                    let j = i % n + 1;
                    [i.min(j), i.max(j)]
                })
                .collect(),
        };
        Self::new(num_vertices, agent_dim, &edges)
    }

    pub fn path(num_vertices: usize, agent_dim: usize) -> Result<Self> {
        let edges: Vec<[usize; 2]> = (1..num_vertices).map(|i| [i, i + 1]).collect();
        Self::new(num_vertices, agent_dim, &edges)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn agent_dim(&self) -> usize {
        self.agent_dim
    }

    /// 0-based edges.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// N×M incidence matrix: −1 at the tail, +1 at the head.
    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// `B ⊗ I_n`.
    pub fn lifted_incidence(&self) -> DMatrix<f64> {
        kron_lift(&self.incidence, self.agent_dim)
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        &self.incidence * self.incidence.transpose()
    }

    /// Vertices sharing an edge with `vertex` (0-based), either orientation.
    pub fn neighbors(&self, vertex: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|e| {
                if e.tail == vertex {
                    Some(e.head)
                } else if e.head == vertex {
                    Some(e.tail)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn is_weakly_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.num_vertices];
        for e in &self.edges {
            adj[e.tail].push(e.head);
            adj[e.head].push(e.tail);
        }
        reachable_from_zero(&adj) == self.num_vertices
    }

    /// Directed connectivity: every vertex reaches every other along edge
    /// orientations.
    pub fn is_strongly_connected(&self) -> bool {
        let mut fwd = vec![Vec::new(); self.num_vertices];
        let mut rev = vec![Vec::new(); self.num_vertices];
        for e in &self.edges {
            fwd[e.tail].push(e.head);
            rev[e.head].push(e.tail);
        }
        reachable_from_zero(&fwd) == self.num_vertices && reachable_from_zero(&rev) == self.num_vertices
    }

    /// Rank of the incidence matrix (numerical, via SVD).
    pub fn incidence_rank(&self) -> usize {
        matrix_rank(&self.incidence)
    }
}

fn reachable_from_zero(adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count
}

fn build_incidence(num_vertices: usize, edges: &[Edge]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(num_vertices, edges.len());
    for (k, e) in edges.iter().enumerate() {
        b[(e.tail, k)] = -1.0;
        b[(e.head, k)] = 1.0;
    }
    b
}

/// `matrix ⊗ I_dim`.
pub fn kron_lift(matrix: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    assert!(dim >= 1, "lift dimension must be positive");
    if dim == 1 {
        return matrix.clone();
    }
    matrix.kronecker(&DMatrix::<f64>::identity(dim, dim))
}

pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * m.nrows().max(m.ncols()) as f64;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DVector};
    use proptest::prelude::*;

    /// Row-echelon rank with partial pivoting; independent of the SVD path.
    fn gaussian_rank(m: &DMatrix<f64>) -> usize {
        let mut a = m.clone();
        let (rows, cols) = a.shape();
        let mut rank = 0;
        for c in 0..cols {
            if rank == rows {
                break;
            }
            let pivot = (rank..rows).max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs())).unwrap();
            if a[(pivot, c)].abs() < 1e-9 {
                continue;
            }
            a.swap_rows(pivot, rank);
            for r in (rank + 1)..rows {
                let f = a[(r, c)] / a[(rank, c)];
                for cc in c..cols {
                    a[(r, cc)] -= f * a[(rank, cc)];
                }
            }
            rank += 1;
        }
        rank
    }

    fn components_union_find(n: usize, edges: &[[usize; 2]]) -> usize {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        for &[a, b] in edges {
            let (ra, rb) = (find(&mut parent, a - 1), find(&mut parent, b - 1));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    #[test]
    fn single_edge_column() {
        let g = NetworkGraph::new(2, 1, &[[1, 2]]).unwrap();
        assert_eq!(g.incidence(), &dmatrix![-1.0; 1.0]);
    }

    #[test]
    fn path_incidence() {
        let g = NetworkGraph::path(3, 1).unwrap();
        assert_eq!(g.incidence(), &dmatrix![-1.0, 0.0; 1.0, -1.0; 0.0, 1.0]);
    }

    #[test]
    fn ring_incidence_rank_and_row_sums() {
        let g = NetworkGraph::new(6, 1, &[[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 1]]).unwrap();
        let b = g.incidence();
        assert_eq!(b.shape(), (6, 6));
        for i in 0..6 {
            assert_eq!(b.row(i).sum(), 0.0);
        }
        assert_eq!(gaussian_rank(b), 5);
        assert_eq!(g.incidence_rank(), 5);
    }

    #[test]
    fn rejects_out_of_range_and_self_loops() {
        assert!(matches!(
            NetworkGraph::new(6, 1, &[[1, 7]]),
            Err(Error::VertexOutOfRange { edge: 1, vertex: 7, .. })
        ));
        assert!(matches!(NetworkGraph::new(3, 1, &[[0, 2]]), Err(Error::VertexOutOfRange { .. })));
        assert!(matches!(NetworkGraph::new(3, 1, &[[2, 2]]), Err(Error::SelfLoop { .. })));
    }

    #[test]
    fn kron_examples() {
        let col = dmatrix![-1.0; 1.0];
        let lifted = kron_lift(&col, 2);
        assert_eq!(lifted, dmatrix![-1.0, 0.0; 0.0, -1.0; 1.0, 0.0; 0.0, 1.0]);
        assert_eq!(kron_lift(&col, 1), col);

        let ring = NetworkGraph::ring(6, 3).unwrap();
        let bl = ring.lifted_incidence();
        assert_eq!(bl.shape(), (18, 18));
        assert_eq!(gaussian_rank(&bl), 15);
    }

    #[test]
    fn laplacian_examples() {
        let g = NetworkGraph::new(2, 1, &[[1, 2]]).unwrap();
        assert_eq!(g.laplacian(), dmatrix![1.0, -1.0; -1.0, 1.0]);

        let ring = NetworkGraph::ring(6, 1).unwrap();
        let l = ring.laplacian();
        // explicit product, entry by entry
        let b = ring.incidence();
        for i in 0..6 {
            for j in 0..6 {
                let expected: f64 = (0..6).map(|k| b[(i, k)] * b[(j, k)]).sum();
                assert_eq!(l[(i, j)], expected);
                let circ = if i == j {
                    2.0
                } else if (i + 1) % 6 == j || (j + 1) % 6 == i {
                    -1.0
                } else {
                    0.0
                };
                assert_eq!(l[(i, j)], circ);
            }
        }

        let split = NetworkGraph::new(4, 1, &[[1, 2], [3, 4]]).unwrap();
        let l = split.laplacian();
        assert_eq!(l[(0, 2)], 0.0);
        assert_eq!(l[(1, 3)], 0.0);
        let zeros = crate::linalg::sym_eigenvalues(&l).iter().filter(|e| e.abs() < 1e-12).count();
        assert_eq!(zeros, 2);
    }

    #[test]
    fn connectivity_examples() {
        assert!(NetworkGraph::ring(6, 1).unwrap().is_weakly_connected());
        assert!(!NetworkGraph::new(4, 1, &[[1, 2], [3, 4]]).unwrap().is_weakly_connected());
        let single = NetworkGraph::new(1, 1, &[]).unwrap();
        assert!(single.is_weakly_connected());
        assert!(single.is_strongly_connected());
    }

    #[test]
    fn strong_connectivity_is_directional() {
        let path = NetworkGraph::path(3, 1).unwrap();
        assert!(path.is_weakly_connected());
        assert!(!path.is_strongly_connected());
        let cycle = NetworkGraph::new(3, 1, &[[1, 2], [2, 3], [3, 1]]).unwrap();
        assert!(cycle.is_strongly_connected());
    }

    #[test]
    fn ring_orientation_uses_smaller_tail() {
        let g = NetworkGraph::ring(6, 1).unwrap();
        assert!(g.edges().iter().all(|e| e.tail < e.head));
        assert_eq!(g.neighbors(0), vec![1, 5]);
    }

    fn random_graph() -> impl Strategy<Value = (usize, Vec<[usize; 2]>)> {
        (1usize..=20).prop_flat_map(|n| {
            let edge = (1..=n, 1..=n).prop_filter_map("self-loop", |(a, b)| (a != b).then_some([a, b]));
            let edges = if n == 1 {
                Just(vec![]).boxed()
            } else {
                proptest::collection::vec(edge, 0..40).boxed()
            };
            (Just(n), edges)
        })
    }

    proptest! {
        #[test]
        fn row_sums_are_exactly_zero((n, edges) in random_graph()) {
            let g = NetworkGraph::new(n, 1, &edges).unwrap();
            let ones = DVector::from_element(n, 1.0);
            let s = g.incidence().transpose() * ones;
            prop_assert!(s.iter().all(|&x| x == 0.0));
        }

        #[test]
        fn rank_matches_component_count((n, edges) in random_graph()) {
            let g = NetworkGraph::new(n, 1, &edges).unwrap();
            let comps = components_union_find(n, &edges);
            prop_assert_eq!(g.incidence_rank(), n - comps);
            prop_assert_eq!(gaussian_rank(g.incidence()), n - comps);
            prop_assert_eq!(g.is_weakly_connected(), comps == 1);
        }

        #[test]
        fn lifted_product_is_lifted_laplacian((n, edges) in random_graph(), dim in 1usize..4) {
            let g = NetworkGraph::new(n, dim, &edges).unwrap();
            let bl = g.lifted_incidence();
            let lhs = &bl * kron_lift(&g.incidence().transpose(), dim);
            let rhs = kron_lift(&g.laplacian(), dim);
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }

        #[test]
        fn consensus_is_in_coincidence_kernel(
            (n, edges) in random_graph(),
            x in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let g = NetworkGraph::new(n, 3, &edges).unwrap();
            let stacked = crate::linalg::stack_copies(&DVector::from_vec(x), n);
            let r = g.lifted_incidence().transpose() * stacked;
            prop_assert!(r.iter().all(|v| v.abs() <= 1e-12));
        }
    }
}
