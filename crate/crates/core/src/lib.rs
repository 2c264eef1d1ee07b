//! Networked Euler-Lagrange agents under passivity-based distributed
//! tracking control.
//!
//! The crate covers the whole pipeline: communication graphs and their
//! incidence structure ([`graph`]), agent and network mechanics
//! ([`dynamics`], [`models`]), the node-and-edge spring protocol and the
//! synchronized Slotine-Li / backstepping laws ([`controllers`]), fixed-step
//! and reference integration ([`integrate`]), Lyapunov certification of
//! simulated traces ([`analysis`]) and JSON scenarios with CSV/SVG output
//! ([`scenario`]).

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod integrate;
pub mod linalg;
pub mod models;
pub mod scenario;

pub use error::{Error, Result};
