use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `q_d(t)` and its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSample {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
}

/// Common reference trajectory, evaluated analytically at any `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceTrajectory {
    /// Setpoint; derivatives vanish.
    Constant { value: Vec<f64> },
    /// `offset + amplitude ⊙ sin(frequency·t + phase)`, frequency in rad/s.
    Sinusoid {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `Σ_k coefficients[k]·t^k`, each coefficient an `n`-vector.
    Polynomial { coefficients: Vec<Vec<f64>> },
}

impl ReferenceTrajectory {
    pub fn constant(value: &[f64]) -> Self {
        ReferenceTrajectory::Constant { value: value.to_vec() }
    }

    pub fn dim(&self) -> usize {
        match self {
            ReferenceTrajectory::Constant { value } => value.len(),
            ReferenceTrajectory::Sinusoid { offset, .. } => offset.len(),
            ReferenceTrajectory::Polynomial { coefficients } => coefficients.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let lens: Vec<usize> = match self {
            ReferenceTrajectory::Constant { value } => vec![value.len()],
            ReferenceTrajectory::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => {
                if !frequency.is_finite() || !phase.is_finite() {
                    return Err(Error::Validation("sinusoid frequency and phase must be finite".into()));
                }
                vec![offset.len(), amplitude.len()]
            }
            ReferenceTrajectory::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::Validation("polynomial reference needs at least one coefficient".into()));
                }
                coefficients.iter().map(Vec::len).collect()
            }
        };
        if let Some(&bad) = lens.iter().find(|&&l| l != n) {
            return Err(Error::shape("reference dimension", n, bad));
        }
        let finite = match self {
            ReferenceTrajectory::Constant { value } => value.iter().all(|x| x.is_finite()),
            ReferenceTrajectory::Sinusoid { offset, amplitude, .. } => {
                offset.iter().chain(amplitude).all(|x| x.is_finite())
            }
            ReferenceTrajectory::Polynomial { coefficients } => coefficients.iter().flatten().all(|x| x.is_finite()),
        };
        if !finite {
            return Err(Error::NonFinite {
                what: "reference parameters".into(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> RefSample {
        match self {
            ReferenceTrajectory::Constant { value } => {
                let n = value.len();
                RefSample {
                    q: DVector::from_column_slice(value),
                    qd: DVector::zeros(n),
                    qdd: DVector::zeros(n),
                }
            }
            ReferenceTrajectory::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => {
                let w = *frequency;
                let (s, c) = (w * t + phase).sin_cos();
                let n = offset.len();
                RefSample {
                    q: DVector::from_fn(n, |i, _| offset[i] + amplitude[i] * s),
                    qd: DVector::from_fn(n, |i, _| amplitude[i] * w * c),
                    qdd: DVector::from_fn(n, |i, _| -amplitude[i] * w * w * s),
                }
            }
            ReferenceTrajectory::Polynomial { coefficients } => {
                let n = self.dim();
                let mut q = DVector::zeros(n);
                let mut qd = DVector::zeros(n);
                let mut qdd = DVector::zeros(n);
                // Horner on value and both derivatives.
                for c in coefficients.iter().rev() {
                    let c = DVector::from_column_slice(c);
                    qdd = &qdd * t + &qd * 2.0;
                    qd = &qd * t + &q;
                    q = &q * t + c;
                }
                RefSample { q, qd, qdd }
            }
        }
    }
}
