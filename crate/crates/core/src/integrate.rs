//! Deterministic ODE integration.
//!
//! `rk4_fixed` is the production method: classical fourth-order
//! Runge-Kutta on a fixed grid `t_k = k·h`, bit-reproducible for identical
//! inputs. `rk45_reference` is an adaptive Dormand-Prince 5(4) pair used as
//! the accuracy oracle.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::all_finite;

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Reference,
}

/// `step` is the fixed step for `rk4_fixed` and the output sampling
/// interval for `rk45_reference` (which otherwise records every accepted
/// step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    pub horizon: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl IntegratorConfig {
    pub fn rk4(step: f64, horizon: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4Fixed,
            step: Some(step),
            abs_tol: None,
            rel_tol: None,
            horizon,
            record_stride: 1,
        }
    }

    pub fn rk45(abs_tol: f64, rel_tol: f64, horizon: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk45Reference,
            step: None,
            abs_tol: Some(abs_tol),
            rel_tol: Some(rel_tol),
            horizon,
            record_stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_output_step(mut self, step: f64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn fixed_step(&self) -> f64 {
        self.step.unwrap_or(DEFAULT_STEP)
    }

    pub fn tolerances(&self) -> (f64, f64) {
        (self.abs_tol.unwrap_or(1e-10), self.rel_tol.unwrap_or(1e-10))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::IntegratorConfig(msg.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if self.record_stride == 0 {
            return bad("record_stride must be positive");
        }
        if let Some(step) = self.step {
            if !(step > 0.0 && step.is_finite()) {
                return bad("step must be positive");
            }
            if step > self.horizon {
                return Err(Error::StepExceedsHorizon {
                    step,
                    horizon: self.horizon,
                });
            }
        }
        if self.method == Method::Rk45Reference {
            let (a, r) = self.tolerances();
            if !(a > 0.0 && r > 0.0) {
                return bad("tolerances must be positive");
            }
        }
        Ok(())
    }
}

/// Sampled states of an integration run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    fn push(&mut self, t: f64, x: &DVector<f64>) {
        self.times.push(t);
        self.states.push(x.clone());
    }

    pub fn last(&self) -> Option<(f64, &DVector<f64>)> {
        self.times.last().copied().zip(self.states.last())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn rk4_step<F>(rhs: &mut F, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = rhs(t, x)?;
    let k2 = rhs(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = rhs(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

fn rk4_run<F>(rhs: &mut F, x0: &DVector<f64>, step: f64, horizon: f64, stride: usize, record: bool) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    // The last step absorbs any remainder of horizon/step below 1e-9 steps.
    let steps = ((horizon / step) - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory::default();
    let mut x = x0.clone();
    let mut t = 0.0;
    traj.push(t, &x);
    for k in 0..steps {
        let t_next = if k + 1 == steps { horizon } else { (k + 1) as f64 * step };
        let next = rk4_step(rhs, t, &x, t_next - t)?;
        if !all_finite(&next) {
            return Err(Error::BlowUp {
                last_time: t,
                partial: Box::new(traj),
            });
        }
        x = next;
        t = t_next;
        if record && ((k + 1) % stride == 0 || k + 1 == steps) {
            traj.push(t, &x);
        }
    }
    if !record {
        traj.push(t, &x);
    }
    Ok(traj)
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_ADAPTIVE_STEPS: usize = 50_000_000;

fn dopri_run<F>(rhs: &mut F, x0: &DVector<f64>, cfg: &IntegratorConfig) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let (atol, rtol) = cfg.tolerances();
    let horizon = cfg.horizon;
    let mut traj = Trajectory::default();
    let mut x = x0.clone();
    let mut t = 0.0;
    traj.push(t, &x);

    let mut h = (horizon * 1e-3).min(1e-2);
    let mut next_output = cfg.step.map(|s| (1usize, s));
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let mut k1 = rhs(t, &x)?;

    while t < horizon {
        attempts += 1;
        if attempts > MAX_ADAPTIVE_STEPS {
            return Err(Error::IntegratorConfig("adaptive step count exceeded".into()));
        }
        let mut target = horizon;
        if let Some((idx, dt)) = next_output {
            target = (idx as f64 * dt).min(horizon);
        }
        let hit = t + h >= target - 1e-12 * horizon;
        let h_try = if hit { target - t } else { h };

        let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
        ks.push(k1.clone());
        for stage in 1..7 {
            let mut xs = x.clone();
            for (j, kj) in ks.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    xs.axpy(h_try * a, kj, 1.0);
                }
            }
            ks.push(rhs(t + C[stage] * h_try, &xs)?);
        }
        let mut x5 = x.clone();
        let mut err = DVector::zeros(x.len());
        for (j, kj) in ks.iter().enumerate() {
            if B5[j] != 0.0 {
                x5.axpy(h_try * B5[j], kj, 1.0);
            }
            err.axpy(h_try * (B5[j] - B4[j]), kj, 1.0);
        }
        let norm = if x.is_empty() {
            0.0
        } else {
            (err.iter()
                .zip(x.iter().zip(x5.iter()))
                .map(|(e, (a, b))| {
                    let sc = atol + rtol * a.abs().max(b.abs());
                    (e / sc).powi(2)
                })
                .sum::<f64>()
                / x.len() as f64)
                .sqrt()
        };
        if !norm.is_finite() || !all_finite(&x5) {
            if h_try < 1e-14 * horizon.max(1.0) {
                return Err(Error::BlowUp {
                    last_time: t,
                    partial: Box::new(traj),
                });
            }
            h = h_try * 0.1;
            continue;
        }
        if norm <= 1.0 {
            t = if hit { target } else { t + h_try };
            x = x5;
            // FSAL: the last stage is f(t + h, x5).
            k1 = ks.pop().expect("seven stages");
            accepted += 1;
            match &mut next_output {
                Some((idx, _)) => {
                    if hit {
                        if *idx % cfg.record_stride == 0 || t >= horizon {
                            traj.push(t, &x);
                        }
                        *idx += 1;
                    }
                }
                None => {
                    if accepted.is_multiple_of(cfg.record_stride) || t >= horizon {
                        traj.push(t, &x);
                    }
                }
            }
        }
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        // Keep the controller's step when a grid hit shortened this one.
        h = if hit && norm <= 1.0 { h.max(h_try) * factor.clamp(0.2, 1.0) } else { h_try * factor };
        if hit && norm <= 1.0 && factor > 1.0 {
            h = h.max(h_try * factor);
        }
    }
    Ok(traj)
}

/// Integrates `ẋ = rhs(t, x)` from `x0` over `[0, horizon]`.
///
/// A non-finite state aborts with [`Error::BlowUp`], which carries the
/// trajectory recorded up to the last finite state.
pub fn simulate<F>(mut rhs: F, x0: &DVector<f64>, cfg: &IntegratorConfig) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    cfg.validate()?;
    if !all_finite(x0) {
        return Err(Error::NonFinite {
            what: "initial state".into(),
        });
    }
    match cfg.method {
        Method::Rk4Fixed => rk4_run(&mut rhs, x0, cfg.fixed_step(), cfg.horizon, cfg.record_stride, true),
        Method::Rk45Reference => dopri_run(&mut rhs, x0, cfg),
    }
}

/// Terminal state of a fixed-step RK4 run.
pub fn rk4_terminal<F>(mut rhs: F, x0: &DVector<f64>, step: f64, horizon: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let traj = rk4_run(&mut rhs, x0, step, horizon, 1, false)?;
    Ok(traj.states.into_iter().last().expect("at least one state"))
}

/// Terminal state of a tight-tolerance reference run.
pub fn reference_terminal<F>(rhs: F, x0: &DVector<f64>, horizon: f64, tol: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let cfg = IntegratorConfig::rk45(tol, tol, horizon).with_stride(usize::MAX);
    let traj = simulate(rhs, x0, &cfg)?;
    Ok(traj.states.into_iter().last().expect("at least one state"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderEstimate {
    /// RK4 reproduced the reference to rounding; no order is measurable.
    Exact,
    Measured {
        /// From the two finest steps.
        order: f64,
        /// From the two coarsest steps.
        coarse_order: f64,
        errors: [f64; 3],
    },
}

impl OrderEstimate {
    pub fn order(&self) -> Option<f64> {
        match self {
            OrderEstimate::Exact => None,
            OrderEstimate::Measured { order, .. } => Some(*order),
        }
    }
}

pub const REFERENCE_TOL: f64 = 1e-13;

/// Empirical order of fixed-step RK4 from terminal errors at `h`, `h/2`,
/// `h/4` against a tight-tolerance Dormand-Prince reference.
pub fn convergence_order<F>(mut rhs: F, x0: &DVector<f64>, horizon: f64, base_step: f64) -> Result<OrderEstimate>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(base_step > 0.0) || base_step > horizon {
        return Err(Error::StepExceedsHorizon {
            step: base_step,
            horizon,
        });
    }
    let reference = reference_terminal(&mut rhs, x0, horizon, REFERENCE_TOL)?;
    let scale = 1.0 + reference.amax();
    let mut errors = [0.0; 3];
    for (i, h) in [base_step, base_step / 2.0, base_step / 4.0].into_iter().enumerate() {
        let x = rk4_terminal(&mut rhs, x0, h, horizon)?;
        errors[i] = (x - &reference).amax();
    }
    if errors[0] <= 1e-14 * scale {
        return Ok(OrderEstimate::Exact);
    }
    let coarse_order = (errors[0] / errors[1]).log2();
    let order = (errors[1] / errors[2]).log2();
    if !order.is_finite() || !coarse_order.is_finite() || (order - coarse_order).abs() > 0.5 {
        return Err(Error::NonSmooth {
            first: coarse_order,
            second: order,
        });
    }
    Ok(OrderEstimate::Measured {
        order,
        coarse_order,
        errors,
    })
}

/// Column layout of a closed-loop trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceLayout {
    pub num_agents: usize,
    pub agent_dim: usize,
    /// Edges carrying spring states; zero for protocols without them.
    pub num_edge_states: usize,
}

impl TraceLayout {
    pub fn stacked(&self) -> usize {
        self.num_agents * self.agent_dim
    }

    pub fn zeta_len(&self) -> usize {
        self.num_edge_states * self.agent_dim
    }

    pub fn state_len(&self) -> usize {
        2 * self.stacked() + self.zeta_len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMeta {
    pub scenario_hash: String,
    pub protocol: String,
    pub config: String,
}

/// Time-stamped closed-loop record: states, applied torques, storage values.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub layout: TraceLayout,
    pub times: Vec<f64>,
    /// Packed `[q; v; ζ]`.
    pub states: Vec<DVector<f64>>,
    pub tau: Vec<DVector<f64>>,
    pub storage: Vec<f64>,
    pub meta: TraceMeta,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn q(&self, k: usize) -> DVector<f64> {
        self.states[k].rows(0, self.layout.stacked()).into_owned()
    }

    pub fn v(&self, k: usize) -> DVector<f64> {
        let nn = self.layout.stacked();
        self.states[k].rows(nn, nn).into_owned()
    }

    pub fn zeta(&self, k: usize) -> DVector<f64> {
        let nn = self.layout.stacked();
        self.states[k].rows(2 * nn, self.layout.zeta_len()).into_owned()
    }

    pub fn max_step(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.states.len() != n || self.tau.len() != n || self.storage.len() != n {
            return Err(Error::InvalidTrace("column counts differ between series".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidTrace("times must be strictly increasing".into()));
        }
        let sl = self.layout.state_len();
        if let Some(k) = self.states.iter().position(|x| x.len() != sl) {
            return Err(Error::InvalidTrace(format!("state {k} has wrong length (expected {sl})")));
        }
        if let Some(k) = self.tau.iter().position(|x| x.len() != self.layout.stacked()) {
            return Err(Error::InvalidTrace(format!("torque {k} has wrong length")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn constant_field_gives_constant_trace() {
        let x0 = dvector![1.5, -2.0];
        let cfg = IntegratorConfig::rk4(0.1, 1.0);
        let traj = simulate(|_, x: &DVector<f64>| Ok(DVector::zeros(x.len())), &x0, &cfg).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.states.iter().all(|x| *x == x0));
        assert_eq!(traj.times.last().copied(), Some(1.0));
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let cfg = IntegratorConfig::rk4(1e-3, 1.0);
        let traj = simulate(|_, x: &DVector<f64>| Ok(-x), &dvector![1.0], &cfg).unwrap();
        let (t, x) = traj.last().unwrap();
        assert_eq!(t, 1.0);
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn reference_matches_closed_form() {
        let cfg = IntegratorConfig::rk45(1e-12, 1e-12, 2.0).with_output_step(0.25);
        let traj = simulate(|_, x: &DVector<f64>| Ok(-x), &dvector![1.0], &cfg).unwrap();
        assert_eq!(traj.len(), 9);
        for (t, x) in traj.times.iter().zip(&traj.states) {
            assert!((x[0] - (-t).exp()).abs() < 1e-11, "t={t}");
        }
        assert!((traj.times[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stride_keeps_final_sample() {
        let cfg = IntegratorConfig::rk4(0.1, 1.05).with_stride(3);
        let traj = simulate(|_, x: &DVector<f64>| Ok(-x), &dvector![1.0], &cfg).unwrap();
        assert_eq!(traj.times.first().copied(), Some(0.0));
        assert_eq!(traj.times.last().copied(), Some(1.05));
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn blow_up_reports_last_valid_time() {
        let cfg = IntegratorConfig::rk4(0.1, 10.0);
        let err = simulate(|_, x: &DVector<f64>| Ok(x.map(|v| v * v * 1e3)), &dvector![1.0], &cfg).unwrap_err();
        match err {
            Error::BlowUp { last_time, partial } => {
                assert!(last_time < 10.0);
                assert_eq!(partial.times.last().copied(), Some(last_time));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            IntegratorConfig::rk4(2.0, 1.0).validate(),
            Err(Error::StepExceedsHorizon { .. })
        ));
        assert!(IntegratorConfig::rk4(0.1, 1.0).with_stride(0).validate().is_err());
        assert!(IntegratorConfig::rk4(-0.1, 1.0).validate().is_err());
        assert!(serde_json::from_str::<IntegratorConfig>(r#"{"method": "euler", "horizon": 1}"#).is_err());
    }

    #[test]
    fn fixed_step_is_bit_reproducible() {
        let f = |t: f64, x: &DVector<f64>| Ok(dvector![x[1], -x[0].sin() + 0.3 * t.cos()]);
        let cfg = IntegratorConfig::rk4(1e-2, 3.0);
        let a = simulate(f, &dvector![0.5, 0.0], &cfg).unwrap();
        let b = simulate(f, &dvector![0.5, 0.0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn order_of_linear_system() {
        let f = |_: f64, x: &DVector<f64>| Ok(dvector![x[1], -4.0 * x[0] - 0.5 * x[1]]);
        let est = convergence_order(f, &dvector![1.0, 0.0], 5.0, 0.1).unwrap();
        let p = est.order().unwrap();
        assert!((p - 4.0).abs() <= 0.3, "order {p} ({est:?})");
    }

    #[test]
    fn order_of_constant_field_is_exact() {
        let est = convergence_order(|_, x: &DVector<f64>| Ok(DVector::zeros(x.len())), &dvector![1.0], 1.0, 0.1).unwrap();
        assert_eq!(est, OrderEstimate::Exact);
    }

    #[test]
    fn kinked_field_is_flagged() {
        // Sign switch off the step grid: the right-hand side jumps at t = 0.37.
        let f = |t: f64, _x: &DVector<f64>| Ok(dvector![if t < 0.37 { 1.0 } else { -1.0 }]);
        let res = convergence_order(f, &dvector![0.0], 1.0, 0.1);
        assert!(matches!(res, Err(Error::NonSmooth { .. })) || res.unwrap().order().is_some_and(|p| (p - 4.0).abs() > 0.3));
    }
}
