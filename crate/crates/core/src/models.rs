//! Built-in agent models and the catalog used by scenarios.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::AgentModel;
use crate::error::{Error, Result};

fn positive(name: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::param(name, value, "must be positive and finite"))
    }
}

/// `M = m·I_n`, no Coriolis or gravity terms.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIntegrator {
    mass: f64,
    dof: usize,
}

impl DoubleIntegrator {
    pub fn new(mass: f64) -> Result<Self> {
        Self::with_dof(mass, 1)
    }

    pub fn with_dof(mass: f64, dof: usize) -> Result<Self> {
        if dof == 0 {
            return Err(Error::param("dof", 0.0, "must be positive"));
        }
        Ok(DoubleIntegrator {
            mass: positive("mass", mass)?,
            dof,
        })
    }
}

impl AgentModel for DoubleIntegrator {
    fn name(&self) -> &str {
        "double_integrator"
    }

    fn dof(&self) -> usize {
        self.dof
    }

    fn mass_matrix(&self, _q: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dof, self.dof) * self.mass
    }

    fn coriolis_matrix(&self, _q: &[f64], _v: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.dof, self.dof)
    }

    fn gravity_vector(&self, _q: &[f64]) -> DVector<f64> {
        DVector::zeros(self.dof)
    }

    fn potential(&self, _q: &[f64]) -> f64 {
        0.0
    }

    fn mass_eig_bounds(&self) -> Option<(f64, f64)> {
        Some((self.mass, self.mass))
    }
}

/// Point-mass pendulum, angle measured from the downward vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    mass: f64,
    length: f64,
    gravity: f64,
}

impl Pendulum {
    pub fn new(mass: f64, length: f64, gravity: f64) -> Result<Self> {
        Ok(Pendulum {
            mass: positive("mass", mass)?,
            length: positive("length", length)?,
            gravity: positive("gravity", gravity)?,
        })
    }

    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }
}

impl AgentModel for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }

    fn dof(&self) -> usize {
        1
    }

    fn mass_matrix(&self, _q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.inertia())
    }

    fn coriolis_matrix(&self, _q: &[f64], _v: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn gravity_vector(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_element(1, self.mass * self.gravity * self.length * q[0].sin())
    }

    fn potential(&self, q: &[f64]) -> f64 {
        self.mass * self.gravity * self.length * (1.0 - q[0].cos())
    }

    fn mass_eig_bounds(&self) -> Option<(f64, f64)> {
        Some((self.inertia(), self.inertia()))
    }
}

/// Planar two-link arm with point masses at the link tips. `q_1` is the
/// shoulder angle from the downward vertical, `q_2` the elbow angle relative
/// to link 1. The Coriolis matrix comes from the Christoffel symbols of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLink {
    m1: f64,
    m2: f64,
    l1: f64,
    l2: f64,
    gravity: f64,
}

impl TwoLink {
    pub fn new(m1: f64, m2: f64, l1: f64, l2: f64, gravity: f64) -> Result<Self> {
        Ok(TwoLink {
            m1: positive("m1", m1)?,
            m2: positive("m2", m2)?,
            l1: positive("l1", l1)?,
            l2: positive("l2", l2)?,
            gravity: positive("gravity", gravity)?,
        })
    }
}

impl AgentModel for TwoLink {
    fn name(&self) -> &str {
        "two_link"
    }

    fn dof(&self) -> usize {
        2
    }

    fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let TwoLink { m1, m2, l1, l2, .. } = *self;
        let c2 = q[1].cos();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
    }

    fn coriolis_matrix(&self, q: &[f64], v: &[f64]) -> DMatrix<f64> {
        let h = -self.m2 * self.l1 * self.l2 * q[1].sin();
        #[rustfmt::skip]
        let c = [
            h * v[1],  h * (v[0] + v[1]),
            -h * v[0], 0.0,
        ];
        DMatrix::from_row_slice(2, 2, &c)
    }

    fn gravity_vector(&self, q: &[f64]) -> DVector<f64> {
        let TwoLink { m1, m2, l1, l2, gravity } = *self;
        let s12 = (q[0] + q[1]).sin();
        DVector::from_column_slice(&[
            (m1 + m2) * gravity * l1 * q[0].sin() + m2 * gravity * l2 * s12,
            m2 * gravity * l2 * s12,
        ])
    }

    fn potential(&self, q: &[f64]) -> f64 {
        let TwoLink { m1, m2, l1, l2, gravity } = *self;
        (m1 + m2) * gravity * l1 * (1.0 - q[0].cos()) + m2 * gravity * l2 * (1.0 - (q[0] + q[1]).cos())
    }

    /// `λ_max ≤ tr M ≤ (m1+m2)l1² + 2m2 l2² + 2m2 l1 l2` and
    /// `λ_min ≥ det M / tr M ≥ m1 m2 l1² l2² / tr_max`, valid for every `q`.
    fn mass_eig_bounds(&self) -> Option<(f64, f64)> {
        let TwoLink { m1, m2, l1, l2, .. } = *self;
        let trace_max = (m1 + m2) * l1 * l1 + 2.0 * m2 * l2 * l2 + 2.0 * m2 * l1 * l2;
        let det_min = m1 * m2 * l1 * l1 * l2 * l2;
        Some((det_min / trace_max, trace_max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleIntegratorParams {
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLinkParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub gravity: f64,
}

/// Wire form of a model selection: `{"model": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum ModelSpec {
    DoubleIntegrator(DoubleIntegratorParams),
    Pendulum(PendulumParams),
    TwoLink(TwoLinkParams),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::DoubleIntegrator(_) => "double_integrator",
            ModelSpec::Pendulum(_) => "pendulum",
            ModelSpec::TwoLink(_) => "two_link",
        }
    }

    /// Builds the model for agents of dimension `agent_dim`. Double
    /// integrators take any dimension; the pendulum and arm have fixed dof.
    pub fn build(&self, agent_dim: usize) -> Result<Arc<dyn AgentModel>> {
        let model: Arc<dyn AgentModel> = match self {
            ModelSpec::DoubleIntegrator(p) => Arc::new(DoubleIntegrator::with_dof(p.mass, agent_dim)?),
            ModelSpec::Pendulum(p) => Arc::new(Pendulum::new(p.mass, p.length, p.gravity)?),
            ModelSpec::TwoLink(p) => Arc::new(TwoLink::new(p.m1, p.m2, p.l1, p.l2, p.gravity)?),
        };
        if model.dof() != agent_dim {
            return Err(Error::shape(format!("dof of model `{}`", self.name()), agent_dim, model.dof()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub params: &'static [&'static str],
    pub dof: usize,
    /// Representative parameters; used by the generic invariant tests.
    pub example: ModelSpec,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "double_integrator",
            params: &["mass"],
            dof: 1,
            example: ModelSpec::DoubleIntegrator(DoubleIntegratorParams { mass: 1.0 }),
        },
        CatalogEntry {
            name: "pendulum",
            params: &["mass", "length", "gravity"],
            dof: 1,
            example: ModelSpec::Pendulum(PendulumParams {
                mass: 1.0,
                length: 1.0,
                gravity: 9.81,
            }),
        },
        CatalogEntry {
            name: "two_link",
            params: &["m1", "m2", "l1", "l2", "gravity"],
            dof: 2,
            example: ModelSpec::TwoLink(TwoLinkParams {
                m1: 1.0,
                m2: 0.8,
                l1: 0.6,
                l2: 0.5,
                gravity: 9.81,
            }),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{agent_rhs, skew_defect};
    use crate::linalg::{is_symmetric, sym_extreme_eigenvalues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn constructors_reject_nonpositive() {
        assert!(DoubleIntegrator::new(0.0).is_err());
        assert!(DoubleIntegrator::new(-1.0).is_err());
        assert!(Pendulum::new(1.0, 0.0, 9.81).is_err());
        assert!(Pendulum::new(1.0, 1.0, f64::NAN).is_err());
        assert!(TwoLink::new(1.0, 1.0, 1.0, -0.5, 9.81).is_err());
    }

    #[test]
    fn double_integrator_examples() {
        let m = DoubleIntegrator::new(1.0).unwrap();
        let (qd, vd) = agent_rhs(&m, &[0.2], &[0.5], &[3.0]).unwrap();
        assert_eq!(vd[0], 3.0);
        assert_eq!(qd[0], 0.5);
        let (_, free) = agent_rhs(&m, &[0.2], &[0.5], &[0.0]).unwrap();
        assert_eq!(free[0], 0.0);
    }

    #[test]
    fn pendulum_gravity_torque() {
        let p = Pendulum::new(1.0, 1.0, 9.81).unwrap();
        assert_eq!(p.gravity_vector(&[0.0])[0], 0.0);
        assert!((p.gravity_vector(&[PI / 2.0])[0] - 9.81).abs() < 1e-15);
    }

    #[test]
    fn two_link_coriolis_vanishes_at_rest() {
        let t = TwoLink::new(1.0, 2.0, 0.3, 0.9, 9.81).unwrap();
        assert_eq!(t.coriolis_matrix(&[0.7, -1.3], &[0.0, 0.0]), DMatrix::zeros(2, 2));
    }

    #[test]
    fn two_link_mass_spectrum_within_declared_bounds() {
        let t = TwoLink::new(1.0, 0.8, 0.6, 0.5, 9.81).unwrap();
        let (lo, hi) = t.mass_eig_bounds().unwrap();
        for k in 0..=720 {
            let q2 = -PI + k as f64 * (2.0 * PI / 720.0);
            let (a, b) = sym_extreme_eigenvalues(&t.mass_matrix(&[0.0, q2])).unwrap();
            assert!(a >= lo && b <= hi, "q2={q2}: [{a}, {b}] not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn model_spec_wire_format() {
        let spec: ModelSpec = serde_json::from_str(r#"{"model": "double_integrator", "params": {"mass": 1.0}}"#).unwrap();
        assert_eq!(spec, ModelSpec::DoubleIntegrator(DoubleIntegratorParams { mass: 1.0 }));
        assert!(serde_json::from_str::<ModelSpec>(r#"{"model": "double_integrator", "params": {"mass": 1.0, "x": 2}}"#).is_err());
        assert!(serde_json::from_str::<ModelSpec>(r#"{"model": "rocket", "params": {}}"#).is_err());
        assert!(spec.build(3).is_ok());
        let pend = ModelSpec::Pendulum(PendulumParams { mass: 1.0, length: 1.0, gravity: 9.81 });
        assert!(pend.build(2).is_err());
    }

    /// Independent two-link dynamics: mass matrix from the tip Jacobians,
    /// potential from tip heights, Euler-Lagrange terms by finite differences.
    mod lagrangian_oracle {
        use nalgebra::{Matrix2, Vector2};

        pub struct Arm {
            pub m1: f64,
            pub m2: f64,
            pub l1: f64,
            pub l2: f64,
            pub g: f64,
        }

        impl Arm {
            fn mass(&self, q: Vector2<f64>) -> Matrix2<f64> {
                let (c1, s1) = (q[0].cos(), q[0].sin());
                let (c12, s12) = ((q[0] + q[1]).cos(), (q[0] + q[1]).sin());
                let j1 = Matrix2::new(self.l1 * c1, 0.0, self.l1 * s1, 0.0);
                let j2 = Matrix2::new(
                    self.l1 * c1 + self.l2 * c12,
                    self.l2 * c12,
                    self.l1 * s1 + self.l2 * s12,
                    self.l2 * s12,
                );
                j1.transpose() * j1 * self.m1 + j2.transpose() * j2 * self.m2
            }

            fn potential(&self, q: Vector2<f64>) -> f64 {
                let y1 = -self.l1 * q[0].cos();
                let y2 = y1 - self.l2 * (q[0] + q[1]).cos();
                self.m1 * self.g * y1 + self.m2 * self.g * y2
            }

            fn d5<F: Fn(f64) -> f64>(f: F) -> f64 {
                let h = 1e-3;
                (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
            }

            pub fn accel(&self, q: Vector2<f64>, v: Vector2<f64>, tau: Vector2<f64>) -> Vector2<f64> {
                let m = self.mass(q);
                // Ṁ v
                let mdot_v = Vector2::new(
                    Self::d5(|h| (self.mass(q + v * h) * v)[0]),
                    Self::d5(|h| (self.mass(q + v * h) * v)[1]),
                );
                let mut dt_dq = Vector2::zeros();
                let mut dp_dq = Vector2::zeros();
                for k in 0..2 {
                    let e = Vector2::ith(k, 1.0);
                    dt_dq[k] = Self::d5(|h| 0.5 * v.dot(&(self.mass(q + e * h) * v)));
                    dp_dq[k] = Self::d5(|h| self.potential(q + e * h));
                }
                m.lu().solve(&(tau - mdot_v + dt_dq - dp_dq)).unwrap()
            }
        }
    }

    #[test]
    fn two_link_matches_lagrangian_oracle() {
        let arm = lagrangian_oracle::Arm {
            m1: 1.3,
            m2: 0.7,
            l1: 0.9,
            l2: 0.6,
            g: 9.81,
        };
        let model = TwoLink::new(1.3, 0.7, 0.9, 0.6, 9.81).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let q = [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)];
            let v = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let tau = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let (_, a) = agent_rhs(&model, &q, &v, &tau).unwrap();
            let expected = arm.accel(q.into(), v.into(), tau.into());
            for k in 0..2 {
                assert!((a[k] - expected[k]).abs() < 1e-10, "q={q:?} v={v:?}: {a} vs {expected}");
            }
        }
    }

    /// Every catalog model is checked against the same invariant suite.
    #[test]
    fn catalog_models_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for entry in catalog() {
            let model = entry.example.build(entry.dof).unwrap();
            assert_eq!(model.name(), entry.name);
            let (lo, hi) = model.mass_eig_bounds().unwrap();
            let n = entry.dof;
            for _ in 0..1000 {
                let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-PI..PI)).collect();
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();

                let m = model.mass_matrix(&q);
                assert!(is_symmetric(&m, 1e-12), "{}: asymmetric M", entry.name);
                let (a, b) = sym_extreme_eigenvalues(&m).unwrap();
                assert!(a >= lo && b <= hi, "{}: spectrum [{a}, {b}] outside [{lo}, {hi}]", entry.name);

                let g = model.gravity_vector(&q);
                for k in 0..n {
                    let h = 1e-5;
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[k] += h;
                    qm[k] -= h;
                    let fd = (model.potential(&qp) - model.potential(&qm)) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-6, "{}: gradient mismatch {fd} vs {}", entry.name, g[k]);
                }

                let norm_w2: f64 = w.iter().map(|x| x * x).sum();
                let norm_v: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let defect = skew_defect(model.as_ref(), &q, &v, &w);
                assert!(defect.abs() <= 1e-6 * (1.0 + norm_w2) * (1.0 + norm_v), "{}: defect {defect}", entry.name);
            }
        }
    }
}
