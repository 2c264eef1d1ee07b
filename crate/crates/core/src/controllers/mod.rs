//! Distributed control laws and their closed loops.
//!
//! [`ClosedLoop`] packs the plant and one protocol into a single vector
//! field on `x = [q; v]` (plus `ζ` for the spring protocol) that the
//! integrators consume. Every law is distributed by construction: agent
//! `i`'s torque reads its own state, the reference, and quantities on its
//! incident edges or neighbors only.

mod gains;
mod reference;
mod single;
mod spring;
mod sync;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use gains::GainConfig;
pub use reference::{RefSample, ReferenceTrajectory};
pub use single::{backstepping_single, slotine_li_single, tracking_error, TrackingError};
pub use spring::{
    interconnect, spring_edge_rhs, spring_edge_rhs_with, EdgePotential, EdgeSpringState, QuadraticEdgePotential,
};
pub use sync::{
    sliding_variables, sync_backstepping_control, sync_sliding, sync_slotine_li_control, SlidingVariables,
};

use crate::dynamics::{network_rhs, Network, NetworkState};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, stack_copies};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Backstepping node loops coupled through edge spring systems.
    NodeEdgeSpring,
    SyncSlotineLi,
    SyncBackstepping,
    /// Independent per-agent tracking, no communication.
    SingleSlotineLi,
    SingleBackstepping,
}

impl Protocol {
    pub fn has_edge_states(self) -> bool {
        self == Protocol::NodeEdgeSpring
    }

    pub fn is_networked(self) -> bool {
        matches!(self, Protocol::NodeEdgeSpring | Protocol::SyncSlotineLi | Protocol::SyncBackstepping)
    }

    pub fn is_synchronized(self) -> bool {
        matches!(self, Protocol::SyncSlotineLi | Protocol::SyncBackstepping)
    }

    /// Whether the position error appears in the protocol's storage function.
    pub fn is_backstepping(self) -> bool {
        matches!(
            self,
            Protocol::NodeEdgeSpring | Protocol::SyncBackstepping | Protocol::SingleBackstepping
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::NodeEdgeSpring => "node_edge_spring",
            Protocol::SyncSlotineLi => "sync_slotine_li",
            Protocol::SyncBackstepping => "sync_backstepping",
            Protocol::SingleSlotineLi => "single_slotine_li",
            Protocol::SingleBackstepping => "single_backstepping",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// External input `u` for the protocols that leave it free. The only
/// shipped passive map is linear damping `u = −γ s`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ExternalInput {
    #[default]
    Zero,
    Damping(f64),
}

impl ExternalInput {
    pub fn apply(self, s: &DVector<f64>) -> DVector<f64> {
        match self {
            ExternalInput::Zero => DVector::zeros(s.len()),
            ExternalInput::Damping(gamma) => s * -gamma,
        }
    }
}

/// Everything a protocol computes at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub tau: DVector<f64>,
    /// Input entering the velocity-error loop: the interconnection term
    /// `−(B⊗I)τ_edge` for the spring protocol, the external input otherwise.
    pub u: DVector<f64>,
    pub q_tilde: DVector<f64>,
    pub v_r: DVector<f64>,
    pub v_r_dot: DVector<f64>,
    pub s: DVector<f64>,
    pub tau_edge: Option<DVector<f64>>,
    pub mu: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    network: Network,
    gains: GainConfig,
    reference: ReferenceTrajectory,
    protocol: Protocol,
    external: ExternalInput,
    potential: QuadraticEdgePotential,
    b_lift: DMatrix<f64>,
    /// Position-error gain of the velocity reference: `Π + (BΔBᵀ⊗I)` for the
    /// synchronized laws, `Π` otherwise.
    coupling: DMatrix<f64>,
    warnings: Vec<String>,
}

impl ClosedLoop {
    pub fn new(
        network: Network,
        gains: GainConfig,
        reference: ReferenceTrajectory,
        protocol: Protocol,
        zeta_d: Option<DVector<f64>>,
        external: ExternalInput,
    ) -> Result<Self> {
        let graph = network.graph();
        gains.validate(graph)?;
        reference.validate(graph.agent_dim())?;
        let mut warnings = Vec::new();
        if protocol.is_networked() && !graph.is_weakly_connected() {
            return Err(Error::Validation(format!("protocol {protocol} needs a connected graph")));
        }
        if protocol.is_synchronized() && graph.is_directed() && !graph.is_strongly_connected() {
            warnings.push(format!(
                "directed graph is weakly but not strongly connected; {protocol} assumes strong connectivity"
            ));
        }
        if let ExternalInput::Damping(gamma) = external {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::param("external_damping", gamma, "must be nonnegative"));
            }
        }
        let mn = graph.num_edges() * graph.agent_dim();
        let zeta_d = zeta_d.unwrap_or_else(|| DVector::zeros(mn));
        if zeta_d.len() != mn {
            return Err(Error::shape("zeta_d", mn, zeta_d.len()));
        }
        let potential = QuadraticEdgePotential::new(&gains.k_zeta, zeta_d)?;
        let b_lift = graph.lifted_incidence();
        let coupling = if protocol.is_synchronized() {
            gains.sync_coupling(graph)
        } else {
            gains.pi.clone()
        };
        Ok(ClosedLoop {
            network,
            gains,
            reference,
            protocol,
            external,
            potential,
            b_lift,
            coupling,
            warnings,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn gains(&self) -> &GainConfig {
        &self.gains
    }

    pub fn reference(&self) -> &ReferenceTrajectory {
        &self.reference
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn external(&self) -> ExternalInput {
        self.external
    }

    pub fn zeta_d(&self) -> &DVector<f64> {
        self.potential.zeta_d()
    }

    pub fn edge_potential(&self) -> &QuadraticEdgePotential {
        &self.potential
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn lifted_incidence(&self) -> &DMatrix<f64> {
        &self.b_lift
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn edge_len(&self) -> usize {
        if self.protocol.has_edge_states() {
            self.network.graph().num_edges() * self.network.dim()
        } else {
            0
        }
    }

    pub fn state_len(&self) -> usize {
        2 * self.network.stacked_len() + self.edge_len()
    }

    /// `(q, v, ζ)` out of a packed state; `ζ` is empty without edge states.
    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let nn = self.network.stacked_len();
        (
            x.rows(0, nn).into_owned(),
            x.rows(nn, nn).into_owned(),
            x.rows(2 * nn, self.edge_len()).into_owned(),
        )
    }

    pub fn pack(&self, q: &DVector<f64>, v: &DVector<f64>, zeta: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(q.len() + v.len() + zeta.len());
        x.rows_mut(0, q.len()).copy_from(q);
        x.rows_mut(q.len(), v.len()).copy_from(v);
        x.rows_mut(q.len() + v.len(), zeta.len()).copy_from(zeta);
        x
    }

    /// Packs initial conditions. Edge states default to `(Bᵀ⊗I) q(0)`.
    pub fn initial_state(&self, q0: &DVector<f64>, v0: &DVector<f64>, zeta0: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        self.network.check_stacked("q0", q0)?;
        self.network.check_stacked("v0", v0)?;
        let zeta = if self.protocol.has_edge_states() {
            match zeta0 {
                Some(z) if z.len() != self.edge_len() => return Err(Error::shape("zeta0", self.edge_len(), z.len())),
                Some(z) => z.clone(),
                None => self.b_lift.tr_mul(q0),
            }
        } else {
            DVector::zeros(0)
        };
        let x = self.pack(q0, v0, &zeta);
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                what: "initial state".into(),
            });
        }
        Ok(x)
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_len() {
            return Err(Error::shape("closed-loop state", self.state_len(), x.len()));
        }
        Ok(())
    }

    /// Evaluates the protocol at `(t, x)`.
    pub fn evaluate(&self, t: f64, x: &DVector<f64>) -> Result<ControlOutput> {
        self.check_state(x)?;
        let (q, v, zeta) = self.split(x);
        let r = self.reference.eval(t);
        let n = self.network.dim();
        let num_agents = self.network.num_agents();
        let sv = sliding_variables(&self.coupling, &q, &v, &r, num_agents);
        let (u, tau_edge, mu) = if self.protocol.has_edge_states() {
            let tau_edge = self.potential.gradient(&zeta);
            let (mu, u) = interconnect(&self.b_lift, &sv.s, &tau_edge)?;
            (u, Some(tau_edge), Some(mu))
        } else {
            (self.external.apply(&sv.s), None, None)
        };

        let tau = if self.protocol.is_synchronized() {
            let state = NetworkState::new(q, v, t);
            sync::sync_torque(
                &self.network,
                &self.coupling,
                &self.gains.k,
                &state,
                &sv,
                &u,
                self.protocol == Protocol::SyncBackstepping,
            )?
        } else {
            let law = if self.protocol.is_backstepping() {
                backstepping_single
            } else {
                slotine_li_single
            };
            let mut tau = DVector::zeros(self.network.stacked_len());
            for i in 0..num_agents {
                let tau_i = law(
                    self.network.models()[i].as_ref(),
                    self.network.agent(&q, i),
                    self.network.agent(&v, i),
                    &r,
                    &self.gains.pi_block(i, n),
                    &self.gains.k_block(i, n),
                    self.network.agent(&u, i),
                )
                .map_err(|e| e.at_agent(i + 1))?;
                tau.rows_mut(i * n, n).copy_from(&tau_i);
            }
            tau
        };
        Ok(ControlOutput {
            tau,
            u,
            q_tilde: sv.q_tilde,
            v_r: sv.v_r,
            v_r_dot: sv.v_r_dot,
            s: sv.s,
            tau_edge,
            mu,
        })
    }

    pub fn control(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(t, x)?.tau)
    }

    /// `ẋ` of the closed loop.
    pub fn rhs(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.evaluate(t, x)?;
        let (q, v, _) = self.split(x);
        let (qdot, vdot) = network_rhs(&self.network, &NetworkState::new(q, v, t), &out.tau)?;
        let zdot = match (&out.mu, &out.tau_edge) {
            (Some(mu), Some(te)) => mu - te,
            _ => DVector::zeros(0),
        };
        Ok(self.pack(&qdot, &vdot, &zdot))
    }

    /// Largest absolute residual of the protocol's error-coordinate closed
    /// loop when the torque `tau` is applied to the plant at `(t, x)`:
    ///
    /// - `q̃̇ + A q̃ − s`
    /// - `M ṡ + C s + K s − (u [− A q̃])`
    /// - `ζ̇ + ∂P_ζ/∂ζ − (Bᵀ⊗I) s` for the spring protocol.
    pub fn residual(&self, t: f64, x: &DVector<f64>, tau: &DVector<f64>) -> Result<f64> {
        let out = self.evaluate(t, x)?;
        let (q, v, zeta) = self.split(x);
        let r = self.reference.eval(t);
        let state = NetworkState::new(q, v, t);
        let (_, vdot) = network_rhs(&self.network, &state, tau)?;

        let q_tilde_dot = &state.v - stack_copies(&r.qd, self.network.num_agents());
        let position = q_tilde_dot + &self.coupling * &out.q_tilde - &out.s;

        let s_dot = vdot - &out.v_r_dot;
        let mut forcing = out.u.clone();
        if self.protocol.is_backstepping() {
            forcing -= &self.coupling * &out.q_tilde;
        }
        let velocity = self.network.mass_times(&state.q, &s_dot)
            + self.network.coriolis_times(&state.q, &state.v, &out.s)
            + &self.gains.k * &out.s
            - forcing;

        let mut worst = position.amax().max(velocity.amax());
        if let (Some(mu), Some(te)) = (&out.mu, &out.tau_edge) {
            let zeta_dot = mu - te;
            let edge = zeta_dot + self.potential.gradient(&zeta) - self.b_lift.tr_mul(&out.s);
            worst = worst.max(edge.amax());
        }
        Ok(worst)
    }
}

/// `(q̇, v̇, ζ̇)` of the spring protocol: per-node backstepping laws driven by
/// `u = −(B⊗I) ∂P_ζ/∂ζ`, edge springs driven by `μ = (Bᵀ⊗I) s`.
pub fn node_edge_closed_loop_rhs(
    network: &Network,
    state: &NetworkState,
    espring: &EdgeSpringState,
    gains: &GainConfig,
    reference: &RefSample,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    network.check_stacked("q", &state.q)?;
    network.check_stacked("v", &state.v)?;
    let graph = network.graph();
    let n = graph.agent_dim();
    let b_lift = graph.lifted_incidence();
    let potential = QuadraticEdgePotential::new(&gains.k_zeta, espring.zeta_d.clone())?;
    if espring.zeta.len() != graph.num_edges() * n {
        return Err(Error::shape("zeta", graph.num_edges() * n, espring.zeta.len()));
    }
    let tau_edge = potential.gradient(&espring.zeta);

    let mut s = DVector::zeros(network.stacked_len());
    for i in 0..network.num_agents() {
        let e = tracking_error(network.agent(&state.q, i), network.agent(&state.v, i), reference, &gains.pi_block(i, n));
        s.rows_mut(i * n, n).copy_from(&e.s);
    }
    let (mu, u) = interconnect(&b_lift, &s, &tau_edge)?;
    let (zeta_dot, _) = spring_edge_rhs_with(&espring.zeta, &mu, &potential)?;

    let mut tau = DVector::zeros(network.stacked_len());
    for i in 0..network.num_agents() {
        let tau_i = backstepping_single(
            network.models()[i].as_ref(),
            network.agent(&state.q, i),
            network.agent(&state.v, i),
            reference,
            &gains.pi_block(i, n),
            &gains.k_block(i, n),
            network.agent(&u, i),
        )?;
        tau.rows_mut(i * n, n).copy_from(&tau_i);
    }
    let (qdot, vdot) = network_rhs(network, state, &tau)?;
    Ok((qdot, vdot, zeta_dot))
}
