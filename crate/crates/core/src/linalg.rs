//! Small dense helpers shared by the dynamics and analysis code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// (λ_min, λ_max) of a symmetric matrix. Empty matrices have no spectrum.
pub fn sym_extreme_eigenvalues(m: &DMatrix<f64>) -> Option<(f64, f64)> {
    if m.nrows() == 0 {
        return None;
    }
    let ev = sym_eigenvalues(m);
    Some((ev[0], ev[ev.len() - 1]))
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if !is_symmetric(m, SYMMETRY_TOL) || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    matches!(sym_extreme_eigenvalues(m), Some((lo, _)) if lo > 0.0)
}

pub fn ensure_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if is_spd(m) {
        Ok(())
    } else {
        Err(Error::NotSpd { what: what.to_string() })
    }
}

pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `1_N ⊗ x`: `x` repeated `copies` times.
pub fn stack_copies(x: &DVector<f64>, copies: usize) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n * copies, |i, _| x[i % n])
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
