//! Artificial spring systems on the edges and the skew interconnection that
//! couples them to the node loops.
//!
//! Each edge `k` carries a state `ζ_k ∈ ℝⁿ` with dynamics
//! `ζ̇_k = μ_k − ∂P_ζ/∂ζ_k` and output `τ_k = ∂P_ζ/∂ζ_k`. The node outputs
//! `y` enter as `μ = (Bᵀ ⊗ I_n) y` and the edge outputs return as
//! `u = −(B ⊗ I_n) τ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::block_diagonal;

/// Stacked edge states and their targets, both of length `M·n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpringState {
    pub zeta: DVector<f64>,
    pub zeta_d: DVector<f64>,
}

/// A C² convex potential on the stacked edge states.
pub trait EdgePotential {
    fn potential(&self, zeta: &DVector<f64>) -> f64;
    fn gradient(&self, zeta: &DVector<f64>) -> DVector<f64>;
}

/// `P_ζ(ζ) = Σ_k ½ (ζ_k − ζ_d,k)ᵀ K_ζ (ζ_k − ζ_d,k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEdgePotential {
    stiffness: DMatrix<f64>,
    zeta_d: DVector<f64>,
}

impl QuadraticEdgePotential {
    pub fn new(k_zeta: &DMatrix<f64>, zeta_d: DVector<f64>) -> Result<Self> {
        let n = k_zeta.nrows();
        if n == 0 || !zeta_d.len().is_multiple_of(n) {
            return Err(Error::shape("zeta_d", format!("multiple of {n}"), zeta_d.len()));
        }
        let stiffness = block_diagonal(&vec![k_zeta.clone(); zeta_d.len() / n]);
        Ok(QuadraticEdgePotential { stiffness, zeta_d })
    }

    pub fn zeta_d(&self) -> &DVector<f64> {
        &self.zeta_d
    }
}

impl EdgePotential for QuadraticEdgePotential {
    fn potential(&self, zeta: &DVector<f64>) -> f64 {
        let e = zeta - &self.zeta_d;
        0.5 * e.dot(&(&self.stiffness * &e))
    }

    fn gradient(&self, zeta: &DVector<f64>) -> DVector<f64> {
        &self.stiffness * (zeta - &self.zeta_d)
    }
}

/// `(ζ̇, τ_edge)` for an arbitrary edge potential.
pub fn spring_edge_rhs_with(
    zeta: &DVector<f64>,
    mu: &DVector<f64>,
    potential: &dyn EdgePotential,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if mu.len() != zeta.len() {
        return Err(Error::shape("mu", zeta.len(), mu.len()));
    }
    let tau_edge = potential.gradient(zeta);
    Ok((mu - &tau_edge, tau_edge))
}

/// `(ζ̇, τ_edge)` for the quadratic potential with stiffness `K_ζ` on every edge.
pub fn spring_edge_rhs(
    espring: &EdgeSpringState,
    mu: &DVector<f64>,
    k_zeta: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if espring.zeta.len() != espring.zeta_d.len() {
        return Err(Error::shape("zeta_d", espring.zeta.len(), espring.zeta_d.len()));
    }
    let potential = QuadraticEdgePotential::new(k_zeta, espring.zeta_d.clone())?;
    spring_edge_rhs_with(&espring.zeta, mu, &potential)
}

/// `μ = (Bᵀ ⊗ I) y`, `u = −(B ⊗ I) τ_edge`.
pub fn interconnect(
    b_lift: &DMatrix<f64>,
    y: &DVector<f64>,
    tau_edge: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if y.len() != b_lift.nrows() {
        return Err(Error::shape("node outputs y", b_lift.nrows(), y.len()));
    }
    if tau_edge.len() != b_lift.ncols() {
        return Err(Error::shape("edge outputs tau", b_lift.ncols(), tau_edge.len()));
    }
    let mu = b_lift.tr_mul(y);
    let u = -(b_lift * tau_edge);
    Ok((mu, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NetworkGraph;
    use crate::linalg::stack_copies;
    use nalgebra::dvector;
    use proptest::prelude::*;

    #[test]
    fn spring_equilibrium() {
        let es = EdgeSpringState {
            zeta: dvector![0.4, -1.0],
            zeta_d: dvector![0.4, -1.0],
        };
        let (zdot, tau) = spring_edge_rhs(&es, &DVector::zeros(2), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(zdot, DVector::zeros(2));
        assert_eq!(tau, DVector::zeros(2));
    }

    #[test]
    fn consensus_outputs_produce_no_edge_input() {
        let g = NetworkGraph::ring(5, 2).unwrap();
        let y = stack_copies(&dvector![0.3, -1.7], 5);
        let (mu, _) = interconnect(&g.lifted_incidence(), &y, &DVector::zeros(10)).unwrap();
        assert_eq!(mu, DVector::zeros(10));
    }

    #[test]
    fn single_edge_signs() {
        let g = NetworkGraph::new(2, 1, &[[1, 2]]).unwrap();
        let (mu, u) = interconnect(&g.lifted_incidence(), &dvector![1.5, 4.0], &dvector![2.0]).unwrap();
        assert_eq!(mu, dvector![2.5]);
        assert_eq!(u, dvector![2.0, -2.0]);
    }

    #[test]
    fn interconnect_shape_mismatch() {
        let g = NetworkGraph::ring(4, 1).unwrap();
        assert!(interconnect(&g.lifted_incidence(), &DVector::zeros(3), &DVector::zeros(4)).is_err());
        assert!(interconnect(&g.lifted_incidence(), &DVector::zeros(4), &DVector::zeros(5)).is_err());
    }

    proptest! {
        #[test]
        fn interconnection_is_power_preserving(
            y in proptest::collection::vec(-10.0f64..10.0, 12),
            tau in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let g = NetworkGraph::ring(6, 2).unwrap();
            let y = DVector::from_vec(y);
            let tau = DVector::from_vec(tau);
            let (mu, u) = interconnect(&g.lifted_incidence(), &y, &tau).unwrap();
            let scale = y.abs().dot(&(g.lifted_incidence().abs() * tau.abs()));
            prop_assert!((y.dot(&u) + mu.dot(&tau)).abs() <= 1e-13 * scale.max(1.0));
        }
    }
}
