//! Euler-Lagrange mechanics of single agents, of the stacked network and of
//! the virtual system parametrized by an actual agent trajectory.
//!
//! Agent `i` obeys `q̇_i = v_i`, `M_i(q_i) v̇_i + C_i(q_i, v_i) v_i + g_i(q_i) = τ_i`.
//! The network stacks agents in vertex order, so every stacked vector has
//! length `N·n` and agent `i` owns the slice `[i·n, (i+1)·n)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::linalg::block_diagonal;

/// Mass matrices with a condition number above this are treated as singular.
pub const MAX_MASS_CONDITION: f64 = 1e12;

/// Step used for the directional finite difference of `M` in [`mass_derivative`].
pub const MASS_FD_STEP: f64 = 1e-6;

/// A fully actuated mechanical system on an `n`-dimensional configuration
/// space.
///
/// Evaluators must be pure. The Coriolis matrix must be the
/// Christoffel-symbol parametrization so that `Ṁ − 2C` is skew-symmetric.
pub trait AgentModel: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    fn dof(&self) -> usize;

    fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64>;

    fn coriolis_matrix(&self, q: &[f64], v: &[f64]) -> DMatrix<f64>;

    /// `∂P/∂q`.
    fn gravity_vector(&self, q: &[f64]) -> DVector<f64>;

    fn potential(&self, q: &[f64]) -> f64;

    /// `(m_low, m_high)` with `m_low·I ⪯ M(q) ⪯ m_high·I` over the whole
    /// working range, if the model knows them.
    fn mass_eig_bounds(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Solves `M x = rhs` through a Cholesky factorization, refusing
/// ill-conditioned or indefinite mass matrices.
pub fn solve_mass(mass: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = mass.nrows();
    if n == 1 {
        let m = mass[(0, 0)];
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::SingularMass {
                agent: 0,
                condition: f64::INFINITY,
            });
        }
        return Ok(rhs / m);
    }
    let eig = SymmetricEigen::new(mass.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_MASS_CONDITION) {
        return Err(Error::SingularMass { agent: 0, condition });
    }
    let chol = mass.clone().cholesky().ok_or(Error::SingularMass { agent: 0, condition })?;
    Ok(chol.solve(rhs))
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::shape(what, expected, got))
    }
}

/// `(q̇_i, v̇_i)` for a single agent.
pub fn agent_rhs(
    model: &dyn AgentModel,
    q: &[f64],
    v: &[f64],
    tau: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.dof();
    check_len("q_i", q.len(), n)?;
    check_len("v_i", v.len(), n)?;
    check_len("tau_i", tau.len(), n)?;
    let vv = DVector::from_column_slice(v);
    let force = DVector::from_column_slice(tau) - model.coriolis_matrix(q, v) * &vv - model.gravity_vector(q);
    let accel = solve_mass(&model.mass_matrix(q), &force)?;
    Ok((vv, accel))
}

/// Stacked positions and velocities of the whole network at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
}

impl NetworkState {
    pub fn new(q: DVector<f64>, v: DVector<f64>, t: f64) -> Self {
        NetworkState { q, v, t }
    }
}

/// The agents and their communication graph.
#[derive(Debug, Clone)]
pub struct Network {
    graph: NetworkGraph,
    models: Vec<Arc<dyn AgentModel>>,
}

impl Network {
    pub fn new(graph: NetworkGraph, models: Vec<Arc<dyn AgentModel>>) -> Result<Self> {
        check_len("model list", models.len(), graph.num_vertices())?;
        for (i, m) in models.iter().enumerate() {
            if m.dof() != graph.agent_dim() {
                return Err(Error::shape(
                    format!("dof of agent {} ({})", i + 1, m.name()),
                    graph.agent_dim(),
                    m.dof(),
                ));
            }
        }
        Ok(Network { graph, models })
    }

    pub fn homogeneous(graph: NetworkGraph, model: Arc<dyn AgentModel>) -> Result<Self> {
        let models = vec![model; graph.num_vertices()];
        Self::new(graph, models)
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn models(&self) -> &[Arc<dyn AgentModel>] {
        &self.models
    }

    pub fn num_agents(&self) -> usize {
        self.graph.num_vertices()
    }

    pub fn dim(&self) -> usize {
        self.graph.agent_dim()
    }

    /// `N·n`.
    pub fn stacked_len(&self) -> usize {
        self.num_agents() * self.dim()
    }

    pub fn agent<'a>(&self, x: &'a DVector<f64>, i: usize) -> &'a [f64] {
        let n = self.dim();
        &x.as_slice()[i * n..(i + 1) * n]
    }

    pub fn check_stacked(&self, what: &str, x: &DVector<f64>) -> Result<()> {
        check_len(what, x.len(), self.stacked_len())
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let blocks: Vec<_> = (0..self.num_agents())
            .map(|i| self.models[i].mass_matrix(self.agent(q, i)))
            .collect();
        block_diagonal(&blocks)
    }

    pub fn coriolis_matrix(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let blocks: Vec<_> = (0..self.num_agents())
            .map(|i| self.models[i].coriolis_matrix(self.agent(q, i), self.agent(v, i)))
            .collect();
        block_diagonal(&blocks)
    }

    pub fn gravity_vector(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.stacked_len());
        let n = self.dim();
        for i in 0..self.num_agents() {
            g.rows_mut(i * n, n).copy_from(&self.models[i].gravity_vector(self.agent(q, i)));
        }
        g
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        (0..self.num_agents()).map(|i| self.models[i].potential(self.agent(q, i))).sum()
    }

    /// `M(q)⁻¹ rhs`, block by block.
    pub fn solve_mass(&self, q: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dim();
        let mut out = DVector::zeros(self.stacked_len());
        for i in 0..self.num_agents() {
            let m = self.models[i].mass_matrix(self.agent(q, i));
            let x = solve_mass(&m, &rhs.rows(i * n, n).into_owned()).map_err(|e| e.at_agent(i + 1))?;
            out.rows_mut(i * n, n).copy_from(&x);
        }
        Ok(out)
    }

    /// `M(q) x`, block by block.
    pub fn mass_times(&self, q: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(self.stacked_len());
        for i in 0..self.num_agents() {
            let m = self.models[i].mass_matrix(self.agent(q, i));
            out.rows_mut(i * n, n).copy_from(&(m * x.rows(i * n, n)));
        }
        out
    }

    /// `C(q, v) x`, block by block.
    pub fn coriolis_times(&self, q: &DVector<f64>, v: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(self.stacked_len());
        for i in 0..self.num_agents() {
            let c = self.models[i].coriolis_matrix(self.agent(q, i), self.agent(v, i));
            out.rows_mut(i * n, n).copy_from(&(c * x.rows(i * n, n)));
        }
        out
    }

    /// Global `(m_low, m_high)` over all agents.
    pub fn mass_bounds(&self) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for m in &self.models {
            let (l, h) = m.mass_eig_bounds().ok_or_else(|| Error::MissingMassBounds {
                model: m.name().to_string(),
            })?;
            lo = lo.min(l);
            hi = hi.max(h);
        }
        Ok((lo, hi))
    }
}

/// `(q̇, v̇)` of the network; agent `i`'s block equals [`agent_rhs`] of agent `i`.
pub fn network_rhs(
    network: &Network,
    state: &NetworkState,
    tau: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    network.check_stacked("q", &state.q)?;
    network.check_stacked("v", &state.v)?;
    network.check_stacked("tau", tau)?;
    let n = network.dim();
    let mut vdot = DVector::zeros(network.stacked_len());
    for (i, model) in network.models().iter().enumerate() {
        let (_, a) = agent_rhs(
            model.as_ref(),
            network.agent(&state.q, i),
            network.agent(&state.v, i),
            network.agent(tau, i),
        )
        .map_err(|e| e.at_agent(i + 1))?;
        vdot.rows_mut(i * n, n).copy_from(&a);
    }
    Ok((state.v.clone(), vdot))
}

/// `Ṁ(q)` along velocity `v`: central difference of `q ↦ M(q)` in
/// direction `v`, Richardson-extrapolated once.
pub fn mass_derivative(model: &dyn AgentModel, q: &[f64], v: &[f64]) -> DMatrix<f64> {
    let central = |h: f64| {
        let plus: Vec<f64> = q.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = q.iter().zip(v).map(|(a, b)| a - h * b).collect();
        (model.mass_matrix(&plus) - model.mass_matrix(&minus)) / (2.0 * h)
    };
    let coarse = central(MASS_FD_STEP);
    let fine = central(MASS_FD_STEP / 2.0);
    (fine * 4.0 - coarse) / 3.0
}

/// `wᵀ(Ṁ − 2C)w`; zero up to finite-difference error for Christoffel
/// parametrizations.
pub fn skew_defect(model: &dyn AgentModel, q: &[f64], v: &[f64], w: &[f64]) -> f64 {
    if w.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let w = DVector::from_column_slice(w);
    let n_mat = mass_derivative(model, q, v) - model.coriolis_matrix(q, v) * 2.0;
    w.dot(&(n_mat * &w))
}

/// `H*(q, v) = ½ vᵀM(q)v + Σ P_i(q_i)`.
pub fn total_coenergy(network: &Network, state: &NetworkState) -> f64 {
    0.5 * state.v.dot(&network.mass_times(&state.q, &state.v)) + network.potential(&state.q)
}

/// `H*_i` of a single agent.
pub fn agent_coenergy(model: &dyn AgentModel, q: &[f64], v: &[f64]) -> f64 {
    let vv = DVector::from_column_slice(v);
    0.5 * vv.dot(&(model.mass_matrix(q) * &vv)) + model.potential(q)
}

/// State `(r_i, s_i)` of the virtual system attached to agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualState {
    pub r: DVector<f64>,
    pub s: DVector<f64>,
}

/// `(ṙ_i, ṡ_i)` with `M_i(q_i) ṡ_i + C_i(q_i, v_i) s_i + g_i(r_i) = ū_i`; the
/// actual `(q_i, v_i)` enter only as parameters.
pub fn virtual_rhs(
    model: &dyn AgentModel,
    q: &[f64],
    v: &[f64],
    vstate: &VirtualState,
    u_bar: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.dof();
    check_len("q_i", q.len(), n)?;
    check_len("v_i", v.len(), n)?;
    check_len("r_i", vstate.r.len(), n)?;
    check_len("s_i", vstate.s.len(), n)?;
    check_len("u_bar_i", u_bar.len(), n)?;
    let force = DVector::from_column_slice(u_bar)
        - model.coriolis_matrix(q, v) * &vstate.s
        - model.gravity_vector(vstate.r.as_slice());
    let sdot = solve_mass(&model.mass_matrix(q), &force)?;
    Ok((vstate.s.clone(), sdot))
}

/// `½ sᵀM(q)s + P(r)`, parametrized by the actual configuration `q`.
pub fn virtual_storage(model: &dyn AgentModel, q: &[f64], vstate: &VirtualState) -> f64 {
    0.5 * vstate.s.dot(&(model.mass_matrix(q) * &vstate.s)) + model.potential(vstate.r.as_slice())
}
