//! Storage functions, exponential-rate bounds and trace certification.
//!
//! Error coordinates are `x = (q̃, s)` plus `ζ − ζ_d` for the spring
//! protocol. Every storage function is a sum of quadratic forms carrying a
//! factor ½, so with the bounds below `½k₁‖x‖² ≤ S ≤ ½k₂‖x‖²` and
//! `Ṡ ≤ −k₃‖x‖² ≤ −β S` with `β = k₃/k₂`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controllers::{ClosedLoop, EdgePotential, GainConfig, Protocol};
use crate::dynamics::Network;
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::integrate::SimTrace;
use crate::linalg::{ensure_spd, is_spd, is_symmetric, sym_extreme_eigenvalues, SYMMETRY_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub beta: f64,
}

impl RateBounds {
    fn new(k1: f64, k2: f64, k3: f64) -> Result<Self> {
        let bounds = RateBounds {
            k1,
            k2,
            k3,
            beta: k3 / k2,
        };
        if !(k1 > 0.0 && k1 <= k2 && bounds.beta > 0.0 && bounds.beta.is_finite()) {
            return Err(Error::Validation(format!(
                "degenerate rate bounds k1={k1}, k2={k2}, k3={k3}"
            )));
        }
        Ok(bounds)
    }
}

fn extremes(m: &DMatrix<f64>, what: &str) -> Result<(f64, f64)> {
    sym_extreme_eigenvalues(m).ok_or_else(|| Error::NonFinite { what: what.to_string() })
}

/// Spectrum ends of `K_ζ` when the graph has edges.
fn edge_extremes(gains: &GainConfig, graph: &NetworkGraph) -> Result<Option<(f64, f64)>> {
    if graph.num_edges() == 0 {
        return Ok(None);
    }
    extremes(&gains.k_zeta, "K_zeta").map(Some)
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(m * x))
}

/// `½ q̃ᵀ Π q̃ + ½ sᵀ M(q) s + P_ζ(ζ)`.
pub fn storage_node_edge(
    network: &Network,
    gains: &GainConfig,
    potential: &dyn EdgePotential,
    q: &DVector<f64>,
    q_tilde: &DVector<f64>,
    s: &DVector<f64>,
    zeta: &DVector<f64>,
) -> f64 {
    quad(&gains.pi, q_tilde) + 0.5 * s.dot(&network.mass_times(q, s)) + potential.potential(zeta)
}

/// `½ q̃ᵀ (Π + BΔBᵀ⊗I) q̃ + ½ sᵀ M(q) s`.
pub fn storage_sync(
    network: &Network,
    gains: &GainConfig,
    q: &DVector<f64>,
    q_tilde: &DVector<f64>,
    s: &DVector<f64>,
) -> f64 {
    quad(&gains.sync_coupling(network.graph()), q_tilde) + storage_sliding(network, q, s)
}

/// `½ sᵀ M(q) s`.
pub fn storage_sliding(network: &Network, q: &DVector<f64>, s: &DVector<f64>) -> f64 {
    0.5 * s.dot(&network.mass_times(q, s))
}

/// Bounds for the spring protocol, using the models' global mass bounds.
pub fn rate_bounds_node_edge(gains: &GainConfig, network: &Network) -> Result<RateBounds> {
    let (m_low, m_high) = network.mass_bounds()?;
    let (pi_lo, pi_hi) = extremes(&gains.pi, "Pi")?;
    let (k_lo, _) = extremes(&gains.k, "K")?;
    let mut k1 = pi_lo.min(m_low);
    let mut k2 = pi_hi.max(m_high);
    let mut k3 = (pi_lo * pi_lo).min(k_lo);
    if let Some((z_lo, z_hi)) = edge_extremes(gains, network.graph())? {
        k1 = k1.min(z_lo);
        k2 = k2.max(z_hi);
        k3 = k3.min(z_lo * z_lo);
    }
    RateBounds::new(k1, k2, k3)
}

/// Bounds for the synchronized backstepping law.
pub fn rate_bounds_sync(gains: &GainConfig, network: &Network) -> Result<RateBounds> {
    let (m_low, m_high) = network.mass_bounds()?;
    let a = gains.sync_coupling(network.graph());
    let (a_lo, a_hi) = extremes(&a, "Pi + B Delta B^T")?;
    let (k_lo, _) = extremes(&gains.k, "K")?;
    RateBounds::new(a_lo.min(m_low), a_hi.max(m_high), (a_lo * a_lo).min(k_lo))
}

/// Bounds for `½ sᵀ M s` under a Slotine-Li law: `Ṡ ≤ −sᵀ K s`.
pub fn rate_bounds_sliding(gains: &GainConfig, network: &Network) -> Result<RateBounds> {
    let (m_low, m_high) = network.mass_bounds()?;
    let (k_lo, _) = extremes(&gains.k, "K")?;
    RateBounds::new(m_low, m_high, k_lo)
}

/// Bounds for independent per-agent backstepping with storage
/// `½ q̃ᵀ Π q̃ + ½ sᵀ M s`.
pub fn rate_bounds_single_backstepping(gains: &GainConfig, network: &Network) -> Result<RateBounds> {
    let (m_low, m_high) = network.mass_bounds()?;
    let (pi_lo, pi_hi) = extremes(&gains.pi, "Pi")?;
    let (k_lo, _) = extremes(&gains.k, "K")?;
    RateBounds::new(pi_lo.min(m_low), pi_hi.max(m_high), (pi_lo * pi_lo).min(k_lo))
}

pub fn rate_bounds(closed_loop: &ClosedLoop) -> Result<RateBounds> {
    let (gains, network) = (closed_loop.gains(), closed_loop.network());
    match closed_loop.protocol() {
        Protocol::NodeEdgeSpring => rate_bounds_node_edge(gains, network),
        Protocol::SyncBackstepping => rate_bounds_sync(gains, network),
        Protocol::SingleBackstepping => rate_bounds_single_backstepping(gains, network),
        Protocol::SyncSlotineLi | Protocol::SingleSlotineLi => rate_bounds_sliding(gains, network),
    }
}

/// The protocol's storage function at a packed closed-loop state.
pub fn storage(closed_loop: &ClosedLoop, t: f64, x: &DVector<f64>) -> Result<f64> {
    let out = closed_loop.evaluate(t, x)?;
    let (q, _, zeta) = closed_loop.split(x);
    let network = closed_loop.network();
    let gains = closed_loop.gains();
    Ok(match closed_loop.protocol() {
        Protocol::NodeEdgeSpring => {
            storage_node_edge(network, gains, closed_loop.edge_potential(), &q, &out.q_tilde, &out.s, &zeta)
        }
        Protocol::SyncBackstepping => storage_sync(network, gains, &q, &out.q_tilde, &out.s),
        Protocol::SingleBackstepping => quad(&gains.pi, &out.q_tilde) + storage_sliding(network, &q, &out.s),
        Protocol::SyncSlotineLi | Protocol::SingleSlotineLi => storage_sliding(network, &q, &out.s),
    })
}

/// Solves `AᵀP + PA = Q` for symmetric `A` (the Lyapunov equation of
/// `ẋ = −A x` with right-hand side `−Q`), via `A = V Λ Vᵀ`.
pub fn solve_lyapunov_symmetric(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.shape() != q.shape() {
        return Err(Error::shape("Lyapunov operands", format!("{0}x{0}", a.nrows()), format!("{}x{}", q.nrows(), q.ncols())));
    }
    if !is_symmetric(a, SYMMETRY_TOL) {
        return Err(Error::Validation("Lyapunov solver needs a symmetric coefficient matrix".into()));
    }
    let eig = a.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let lambda = &eig.eigenvalues;
    let q_hat = v.transpose() * q * v;
    let n = a.nrows();
    let p_hat = DMatrix::from_fn(n, n, |i, j| q_hat[(i, j)] / (lambda[i] + lambda[j]));
    let p = v * p_hat * v.transpose();
    let p = (&p + p.transpose()) * 0.5;
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "Lyapunov solution".into(),
        });
    }
    Ok(p)
}

/// Lyapunov certificate for the manifold dynamics `q̃̇ = −A q̃` with
/// `A = Π + (BΔBᵀ⊗I)`: returns `P` solving `(−A)ᵀP + P(−A) = −Q` and
/// whether it is SPD.
pub fn check_sliding_stability(
    pi: &DMatrix<f64>,
    delta: &DVector<f64>,
    graph: &NetworkGraph,
    q: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, bool)> {
    ensure_spd(q, "Q")?;
    if delta.len() != graph.num_edges() {
        return Err(Error::shape("Delta", graph.num_edges(), delta.len()));
    }
    let nn = graph.num_vertices() * graph.agent_dim();
    if pi.shape() != (nn, nn) {
        return Err(Error::shape("Pi", format!("{nn}x{nn}"), format!("{}x{}", pi.nrows(), pi.ncols())));
    }
    let gains = GainConfig {
        pi: pi.clone(),
        k: DMatrix::identity(nn, nn),
        delta: delta.clone(),
        k_zeta: DMatrix::identity(graph.agent_dim(), graph.agent_dim()),
    };
    let a = gains.sync_coupling(graph);
    let p = solve_lyapunov_symmetric(&a, q)?;
    let ok = is_spd(&p);
    Ok((p, ok))
}

/// Derivative of sampled `values`: central differences inside, one-sided at
/// the ends.
pub fn central_difference(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len().min(values.len());
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|k| {
                let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
                (values[b] - values[a]) / (times[b] - times[a])
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    /// Relative slack on the rate: the envelope is `S(0)·e^{−(1−tol)βt}`.
    pub rate_tolerance: f64,
    pub residual_tolerance: f64,
    /// Largest `Ṡ` still counted as decreasing, relative to `max(S(0), 1)`.
    pub decrease_slack: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            rate_tolerance: 0.05,
            residual_tolerance: 1e-9,
            decrease_slack: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub protocol: Protocol,
    pub rate_bounds: RateBounds,
    pub rate_tolerance: f64,
    pub times: Vec<f64>,
    pub storage: Vec<f64>,
    /// `−Ṡ` at each sample; positive means decreasing.
    pub decrease_margins: Vec<f64>,
    pub decrease_violations: usize,
    pub envelope_violations: usize,
    pub first_violation_time: Option<f64>,
    pub max_residual: f64,
    pub properties: BTreeMap<String, bool>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.properties.values().all(|&ok| ok)
    }

    pub fn summary(&self) -> String {
        let props: Vec<String> = self
            .properties
            .iter()
            .map(|(k, v)| format!("{k}={}", if *v { "pass" } else { "FAIL" }))
            .collect();
        format!(
            "{}: beta={:.6} decrease_violations={} envelope_violations={} max_residual={:.3e} [{}]",
            self.protocol,
            self.rate_bounds.beta,
            self.decrease_violations,
            self.envelope_violations,
            self.max_residual,
            props.join(", ")
        )
    }
}

/// Largest admissible sample spacing for certifying `trace`.
pub fn required_step(duration: f64, beta: f64) -> f64 {
    1e-3 * duration.max(1.0 / beta)
}

pub fn certify_trace(trace: &SimTrace, closed_loop: &ClosedLoop) -> Result<CertificationReport> {
    certify_trace_with(trace, closed_loop, CertifyOptions::default())
}

/// Evaluates the protocol's storage along `trace` and checks strict
/// decrease, the exponential envelope and the closed-loop residuals.
pub fn certify_trace_with(trace: &SimTrace, closed_loop: &ClosedLoop, opts: CertifyOptions) -> Result<CertificationReport> {
    trace.validate()?;
    if trace.layout.state_len() != closed_loop.state_len() {
        return Err(Error::InvalidTrace(format!(
            "trace state length {} does not match the closed loop ({})",
            trace.layout.state_len(),
            closed_loop.state_len()
        )));
    }
    if trace.is_empty() {
        return Err(Error::InvalidTrace("empty trace".into()));
    }
    let bounds = rate_bounds(closed_loop)?;
    let t0 = trace.times[0];
    let duration = trace.times[trace.len() - 1] - t0;
    let required = required_step(duration, bounds.beta);
    let actual = trace.max_step();
    if actual > required * (1.0 + 1e-9) {
        return Err(Error::TraceTooCoarse { actual, required });
    }

    let mut storage = Vec::with_capacity(trace.len());
    let mut max_residual: f64 = 0.0;
    for ((t, x), tau) in trace.times.iter().zip(&trace.states).zip(&trace.tau) {
        storage.push(self::storage(closed_loop, *t, x)?);
        max_residual = max_residual.max(closed_loop.residual(*t, x, tau)?);
    }
    let derivative = central_difference(&trace.times, &storage);
    let s0 = storage[0];
    let slack = opts.decrease_slack * s0.max(1.0);
    let rate = bounds.beta * (1.0 - opts.rate_tolerance);

    let mut first_violation: Option<f64> = None;
    let mut note = |t: f64| {
        if first_violation.is_none_or(|f| t < f) {
            first_violation = Some(t);
        }
    };
    let mut decrease_violations = 0;
    let mut envelope_violations = 0;
    for k in 0..trace.len() {
        let t = trace.times[k];
        if derivative[k] > slack {
            decrease_violations += 1;
            note(t);
        }
        let envelope = s0 * (-rate * (t - t0)).exp() + 1e-12 * s0;
        if storage[k] > envelope {
            envelope_violations += 1;
            note(t);
        }
    }
    let mut properties = BTreeMap::new();
    properties.insert("strict_decrease".to_string(), decrease_violations == 0);
    properties.insert("exponential_envelope".to_string(), envelope_violations == 0);
    properties.insert("closed_loop_residual".to_string(), max_residual < opts.residual_tolerance);
    Ok(CertificationReport {
        protocol: closed_loop.protocol(),
        rate_bounds: bounds,
        rate_tolerance: opts.rate_tolerance,
        times: trace.times.clone(),
        storage,
        decrease_margins: derivative.iter().map(|d| -d).collect(),
        decrease_violations,
        envelope_violations,
        first_violation_time: first_violation,
        max_residual,
        properties,
    })
}
