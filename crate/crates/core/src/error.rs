use thiserror::Error;

use crate::integrate::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {edge} references vertex {vertex}, valid range is 1..={num_vertices}")]
    VertexOutOfRange {
        edge: usize,
        vertex: usize,
        num_vertices: usize,
    },

    #[error("edge {edge} is a self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: String,
        got: String,
    },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: String,
    },

    #[error("mass matrix of agent {agent} is numerically singular (condition number {condition:e})")]
    SingularMass { agent: usize, condition: f64 },

    #[error("{what} is not symmetric positive definite")]
    NotSpd { what: String },

    #[error("model `{model}` does not declare mass-matrix eigenvalue bounds")]
    MissingMassBounds { model: String },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("state blew up after t = {last_time}")]
    BlowUp {
        last_time: f64,
        partial: Box<Trajectory>,
    },

    #[error("integrator step {step} exceeds horizon {horizon}")]
    StepExceedsHorizon { step: f64, horizon: f64 },

    #[error("invalid integrator config: {0}")]
    IntegratorConfig(String),

    #[error("order estimate unstable ({first:.3} vs {second:.3}); dynamics look non-smooth")]
    NonSmooth { first: f64, second: f64 },

    #[error("trace too coarse: max step {actual:e} s, certification needs at most {required:e} s")]
    TraceTooCoarse { actual: f64, required: f64 },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("scenario error at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },

    #[error("scenario validation failed: {0}")]
    Validation(String),

    #[error("csv parse error on line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn param(name: impl Into<String>, value: f64, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            value,
            reason: reason.into(),
        }
    }

    /// Re-labels a singular-mass error with the agent's network index.
    pub(crate) fn at_agent(self, agent: usize) -> Self {
        match self {
            Error::SingularMass { condition, .. } => Error::SingularMass { agent, condition },
            other => other,
        }
    }
}
