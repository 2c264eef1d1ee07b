//! Synchronized tracking laws built on the network sliding variable.
//!
//! With `A = Π + (BΔBᵀ ⊗ I_n)`, `q̃ = q − 1_N ⊗ q_d` and
//! `v_r = 1_N ⊗ q̇_d − A q̃`, the sliding variable is `s = v − v_r`. On the
//! manifold `s = 0` the position error obeys `q̃̇ = −A q̃`.

use nalgebra::{DMatrix, DVector};

use super::gains::GainConfig;
use super::reference::RefSample;
use crate::dynamics::{Network, NetworkState};
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::linalg::stack_copies;

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingVariables {
    pub q_tilde: DVector<f64>,
    pub v_r: DVector<f64>,
    /// `1 ⊗ q̈_d − A (v − 1 ⊗ q̇_d)`, from the measured velocity.
    pub v_r_dot: DVector<f64>,
    pub s: DVector<f64>,
}

/// Sliding variables for an arbitrary stacked position-error gain `coupling`.
pub fn sliding_variables(
    coupling: &DMatrix<f64>,
    q: &DVector<f64>,
    v: &DVector<f64>,
    reference: &RefSample,
    num_agents: usize,
) -> SlidingVariables {
    let qd_stack = stack_copies(&reference.qd, num_agents);
    let q_tilde = q - stack_copies(&reference.q, num_agents);
    let v_r = &qd_stack - coupling * &q_tilde;
    let v_r_dot = stack_copies(&reference.qdd, num_agents) - coupling * (v - &qd_stack);
    let s = v - &v_r;
    SlidingVariables {
        q_tilde,
        v_r,
        v_r_dot,
        s,
    }
}

pub fn sync_sliding(
    graph: &NetworkGraph,
    gains: &GainConfig,
    state: &NetworkState,
    reference: &RefSample,
) -> SlidingVariables {
    let laplacian = gains.weighted_laplacian_lifted(graph);
    let consensus = stack_copies(&reference.q, graph.num_vertices());
    debug_assert!(
        (&laplacian * &consensus).amax() <= 1e-12 * (1.0 + consensus.amax()) * (1.0 + laplacian.amax()),
        "weighted Laplacian must annihilate the common reference"
    );
    let coupling = &gains.pi + laplacian;
    sliding_variables(&coupling, &state.q, &state.v, reference, graph.num_vertices())
}

/// `M(q) v̇_r + C(q, v) v_r + g(q) − K s [− A q̃] + u` given precomputed
/// sliding variables.
pub(crate) fn sync_torque(
    network: &Network,
    coupling: &DMatrix<f64>,
    k: &DMatrix<f64>,
    state: &NetworkState,
    sv: &SlidingVariables,
    u: &DVector<f64>,
    backstepping: bool,
) -> Result<DVector<f64>> {
    network.check_stacked("u", u)?;
    let mut tau = network.mass_times(&state.q, &sv.v_r_dot)
        + network.coriolis_times(&state.q, &state.v, &sv.v_r)
        + network.gravity_vector(&state.q)
        - k * &sv.s
        + u;
    if backstepping {
        tau -= coupling * &sv.q_tilde;
    }
    if tau.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "control torque".into() });
    }
    Ok(tau)
}

fn checked(network: &Network, gains: &GainConfig, state: &NetworkState) -> Result<DMatrix<f64>> {
    network.check_stacked("q", &state.q)?;
    network.check_stacked("v", &state.v)?;
    let nn = network.stacked_len();
    if gains.k.shape() != (nn, nn) {
        return Err(Error::shape("K", format!("{nn}x{nn}"), format!("{}x{}", gains.k.nrows(), gains.k.ncols())));
    }
    Ok(gains.sync_coupling(network.graph()))
}

/// Synchronized Slotine-Li law.
pub fn sync_slotine_li_control(
    network: &Network,
    gains: &GainConfig,
    state: &NetworkState,
    reference: &RefSample,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let coupling = checked(network, gains, state)?;
    let sv = sliding_variables(&coupling, &state.q, &state.v, reference, network.num_agents());
    sync_torque(network, &coupling, &gains.k, state, &sv, u, false)
}

/// Synchronized backstepping law: Slotine-Li plus `−A q̃`.
pub fn sync_backstepping_control(
    network: &Network,
    gains: &GainConfig,
    state: &NetworkState,
    reference: &RefSample,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let coupling = checked(network, gains, state)?;
    let sv = sliding_variables(&coupling, &state.q, &state.v, reference, network.num_agents());
    sync_torque(network, &coupling, &gains.k, state, &sv, u, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::ReferenceTrajectory;
    use crate::models::TwoLink;
    use std::sync::Arc;

    fn arm_ring() -> (Network, GainConfig) {
        let g = NetworkGraph::ring(4, 2).unwrap();
        let gains = GainConfig::uniform(&g, 2.0, 6.0, 0.5, 1.0);
        let net = Network::homogeneous(g, Arc::new(TwoLink::new(1.0, 0.8, 0.6, 0.5, 9.81).unwrap())).unwrap();
        (net, gains)
    }

    fn reference() -> ReferenceTrajectory {
        ReferenceTrajectory::Sinusoid {
            offset: vec![0.1, 0.4],
            amplitude: vec![0.3, -0.2],
            frequency: 1.0,
            phase: 0.2,
        }
    }

    #[test]
    fn on_reference_sliding_variable_vanishes() {
        let (net, gains) = arm_ring();
        let r = reference().eval(1.3);
        let state = NetworkState::new(stack_copies(&r.q, 4), stack_copies(&r.qd, 4), 1.3);
        let sv = sync_sliding(net.graph(), &gains, &state, &r);
        assert!(sv.s.amax() < 1e-15);
        assert!(sv.q_tilde.amax() < 1e-15);

        let u = DVector::from_fn(8, |i, _| 0.1 * i as f64);
        let tau = sync_slotine_li_control(&net, &gains, &state, &r, &u).unwrap();
        let ff = net.mass_times(&state.q, &stack_copies(&r.qdd, 4))
            + net.coriolis_times(&state.q, &state.v, &state.v)
            + net.gravity_vector(&state.q)
            + &u;
        assert!((tau - ff).amax() < 1e-13);
    }

    #[test]
    fn backstepping_difference_is_coupled_position_feedback() {
        let (net, gains) = arm_ring();
        let r = reference().eval(0.4);
        let q = DVector::from_fn(8, |i, _| 0.2 * i as f64 - 0.5);
        let v = DVector::from_fn(8, |i, _| (i as f64).sin());
        let state = NetworkState::new(q, v, 0.4);
        let u = DVector::zeros(8);
        let sl = sync_slotine_li_control(&net, &gains, &state, &r, &u).unwrap();
        let bs = sync_backstepping_control(&net, &gains, &state, &r, &u).unwrap();
        let sv = sync_sliding(net.graph(), &gains, &state, &r);
        let expected = -(gains.sync_coupling(net.graph()) * sv.q_tilde);
        assert!((bs - sl - expected).amax() < 1e-12);
    }
}
