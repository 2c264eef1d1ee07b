//! Slotine-Li tracking law and its backstepping redesign for one agent.
//!
//! With `q̃ = q − q_d`, the velocity reference is `v_r = q̇_d − Π q̃` and the
//! sliding variable `s = v − v_r`. Its derivative is realized from the
//! measured velocity, `v̇_r = q̈_d − Π (v − q̇_d)`.

use nalgebra::{DMatrix, DVector};

use super::reference::RefSample;
use crate::dynamics::AgentModel;
use crate::error::{Error, Result};

/// Error coordinates of one agent relative to the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingError {
    pub q_tilde: DVector<f64>,
    pub v_r: DVector<f64>,
    pub v_r_dot: DVector<f64>,
    pub s: DVector<f64>,
}

pub fn tracking_error(q: &[f64], v: &[f64], reference: &RefSample, pi: &DMatrix<f64>) -> TrackingError {
    let q = DVector::from_column_slice(q);
    let v = DVector::from_column_slice(v);
    let q_tilde = &q - &reference.q;
    let v_r = &reference.qd - pi * &q_tilde;
    let v_r_dot = &reference.qdd - pi * (&v - &reference.qd);
    let s = &v - &v_r;
    TrackingError {
        q_tilde,
        v_r,
        v_r_dot,
        s,
    }
}

fn check_shapes(model: &dyn AgentModel, q: &[f64], v: &[f64], pi: &DMatrix<f64>, k: &DMatrix<f64>, u: &[f64]) -> Result<()> {
    let n = model.dof();
    for (what, len) in [("q_i", q.len()), ("v_i", v.len()), ("u_i", u.len())] {
        if len != n {
            return Err(Error::shape(what, n, len));
        }
    }
    for (what, m) in [("Pi_i", pi), ("K_i", k)] {
        if m.shape() != (n, n) {
            return Err(Error::shape(what, format!("{n}x{n}"), format!("{}x{}", m.nrows(), m.ncols())));
        }
    }
    Ok(())
}

/// `τ_i = M v̇_r + C(q, v) v_r + g(q) − K s + u_i`.
pub fn slotine_li_single(
    model: &dyn AgentModel,
    q: &[f64],
    v: &[f64],
    reference: &RefSample,
    pi: &DMatrix<f64>,
    k: &DMatrix<f64>,
    u: &[f64],
) -> Result<DVector<f64>> {
    check_shapes(model, q, v, pi, k, u)?;
    let e = tracking_error(q, v, reference, pi);
    Ok(model.mass_matrix(q) * &e.v_r_dot + model.coriolis_matrix(q, v) * &e.v_r + model.gravity_vector(q)
        - k * &e.s
        + DVector::from_column_slice(u))
}

/// Slotine-Li plus the position feedback `−Π q̃`.
pub fn backstepping_single(
    model: &dyn AgentModel,
    q: &[f64],
    v: &[f64],
    reference: &RefSample,
    pi: &DMatrix<f64>,
    k: &DMatrix<f64>,
    u: &[f64],
) -> Result<DVector<f64>> {
    let tau = slotine_li_single(model, q, v, reference, pi, k, u)?;
    let q_tilde = DVector::from_column_slice(q) - &reference.q;
    Ok(tau - pi * q_tilde)
}
