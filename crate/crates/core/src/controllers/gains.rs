use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{kron_lift, NetworkGraph};
use crate::linalg::{block_diagonal, ensure_spd};

/// Controller gains for a network of `N` agents of dimension `n` with `M`
/// edges.
///
/// `pi` and `k` are `N·n × N·n` block-diagonal with SPD `n × n` blocks, so
/// each agent only uses its own gains. `delta` holds the positive diagonal of
/// the `M × M` edge weighting Δ. `k_zeta` is the `n × n` edge spring
/// stiffness shared by every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct GainConfig {
    pub pi: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub k_zeta: DMatrix<f64>,
}

impl GainConfig {
    /// Scalar gains expanded to `π·I`, `k·I`, `δ·I`, `k_ζ·I`.
    pub fn uniform(graph: &NetworkGraph, pi: f64, k: f64, delta: f64, k_zeta: f64) -> Self {
        let nn = graph.num_vertices() * graph.agent_dim();
        let n = graph.agent_dim();
        GainConfig {
            pi: DMatrix::identity(nn, nn) * pi,
            k: DMatrix::identity(nn, nn) * k,
            delta: DVector::from_element(graph.num_edges(), delta),
            k_zeta: DMatrix::identity(n, n) * k_zeta,
        }
    }

    pub fn from_blocks(
        pi_blocks: &[DMatrix<f64>],
        k_blocks: &[DMatrix<f64>],
        delta: DVector<f64>,
        k_zeta: DMatrix<f64>,
    ) -> Self {
        GainConfig {
            pi: block_diagonal(pi_blocks),
            k: block_diagonal(k_blocks),
            delta,
            k_zeta,
        }
    }

    pub fn validate(&self, graph: &NetworkGraph) -> Result<()> {
        let n = graph.agent_dim();
        let nn = graph.num_vertices() * n;
        for (name, m) in [("Pi", &self.pi), ("K", &self.k)] {
            if m.shape() != (nn, nn) {
                return Err(Error::shape(name, format!("{nn}x{nn}"), format!("{}x{}", m.nrows(), m.ncols())));
            }
            for i in 0..nn {
                for j in 0..nn {
                    if i / n != j / n && m[(i, j)] != 0.0 {
                        return Err(Error::Validation(format!(
                            "{name} must be block diagonal with {n}x{n} blocks (entry ({i},{j}) couples agents)"
                        )));
                    }
                }
            }
            for a in 0..graph.num_vertices() {
                let block = m.view((a * n, a * n), (n, n)).into_owned();
                ensure_spd(&block, &format!("{name} block of agent {}", a + 1))?;
            }
        }
        if self.delta.len() != graph.num_edges() {
            return Err(Error::shape("Delta", graph.num_edges(), self.delta.len()));
        }
        if let Some((k, d)) = self.delta.iter().enumerate().find(|(_, d)| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::param(format!("Delta[{}]", k + 1), *d, "edge weights must be positive"));
        }
        if self.k_zeta.shape() != (n, n) {
            return Err(Error::shape("K_zeta", format!("{n}x{n}"), format!("{}x{}", self.k_zeta.nrows(), self.k_zeta.ncols())));
        }
        ensure_spd(&self.k_zeta, "K_zeta")
    }

    pub fn pi_block(&self, agent: usize, n: usize) -> DMatrix<f64> {
        self.pi.view((agent * n, agent * n), (n, n)).into_owned()
    }

    pub fn k_block(&self, agent: usize, n: usize) -> DMatrix<f64> {
        self.k.view((agent * n, agent * n), (n, n)).into_owned()
    }

    /// `(BΔBᵀ) ⊗ I_n`.
    pub fn weighted_laplacian_lifted(&self, graph: &NetworkGraph) -> DMatrix<f64> {
        let b = graph.incidence();
        let ldelta = b * DMatrix::from_diagonal(&self.delta) * b.transpose();
        kron_lift(&ldelta, graph.agent_dim())
    }

    /// `Π + (BΔBᵀ ⊗ I_n)`, the position-error gain of the synchronized laws.
    pub fn sync_coupling(&self, graph: &NetworkGraph) -> DMatrix<f64> {
        &self.pi + self.weighted_laplacian_lifted(graph)
    }

    /// `K_ζ` repeated on every edge: `I_M ⊗ K_ζ`.
    pub fn edge_stiffness(&self, num_edges: usize) -> DMatrix<f64> {
        block_diagonal(&vec![self.k_zeta.clone(); num_edges])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_gains_validate() {
        let g = NetworkGraph::ring(6, 1).unwrap();
        let gains = GainConfig::uniform(&g, 3.5, 12.0, 1.0, 5.0);
        gains.validate(&g).unwrap();
        assert_eq!(gains.pi_block(2, 1)[(0, 0)], 3.5);
    }

    #[test]
    fn rejects_coupled_or_indefinite_gains() {
        let g = NetworkGraph::path(2, 1).unwrap();
        let mut gains = GainConfig::uniform(&g, 1.0, 1.0, 1.0, 1.0);
        gains.k[(0, 1)] = 0.1;
        gains.k[(1, 0)] = 0.1;
        assert!(gains.validate(&g).is_err());

        let mut gains = GainConfig::uniform(&g, 1.0, 1.0, 1.0, 1.0);
        gains.pi[(1, 1)] = -1.0;
        assert!(matches!(gains.validate(&g), Err(Error::NotSpd { .. })));

        let mut gains = GainConfig::uniform(&g, 1.0, 1.0, 1.0, 1.0);
        gains.delta[0] = 0.0;
        assert!(gains.validate(&g).is_err());
    }

    #[test]
    fn sync_coupling_on_ring() {
        let g = NetworkGraph::ring(6, 2).unwrap();
        let gains = GainConfig::uniform(&g, 3.5, 12.0, 1.0, 5.0);
        let a = gains.sync_coupling(&g);
        assert_eq!(a.shape(), (12, 12));
        assert_eq!(a[(0, 0)], 5.5);
        assert_eq!(a[(0, 2)], -1.0);
        assert_eq!(a[(0, 1)], 0.0);
    }
}
