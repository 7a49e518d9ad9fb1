//! Discrete-time fractional-order dynamical systems: Grünwald–Letnikov
//! weights, single- and multi-term models with finite-memory lifts,
//! simulation, structural analysis, order identification, minimum-energy
//! state estimation and model predictive control.

pub mod error;
pub mod fraccore;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod analysis;
pub mod sysid;
pub mod estimate;
pub mod qp;
pub mod mpc;
pub mod cli;

pub use error::{Error, Result};
