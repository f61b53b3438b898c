//! Feedback stabilization of unstable dynamical systems by reinforcement
//! learning on the manifold of unstable dynamics.
//!
//! Environments expose a step map with Jacobian-vector products. The left
//! unstable eigenspace at the steady state, estimated with a Krylov solver,
//! defines a linear encoder; a DDPG agent acting on the encoded state, or on a
//! latent linear model of it, learns a stabilizing feedback.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix algebra in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod agent;
pub mod config;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod rom;
pub mod train;

pub use error::{Error, Result};
