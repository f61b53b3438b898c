//! Deterministic policy gradient agent built from small perceptrons.
//!
//! Everything here is plain `f64` arithmetic on flat parameter vectors so
//! that a seeded run reproduces bit for bit.

mod adam;
mod ddpg;
mod mlp;
mod replay;

pub use adam::Adam;
pub use ddpg::{bound_action, policy_action, Agent, AgentShape, DdpgConfig};
pub use mlp::{read_networks, Activation, Mlp};
pub use replay::{ReplayBuffer, Transition};
