//! Optimal control of open quantum systems for pure-state preparation from a
//! single ensemble initial state.
//!
//! The crate builds composite qudit-cavity models, propagates the Lindblad
//! master equation with the implicit midpoint rule, and optimizes B-spline
//! carrier-wave controls with exact discrete adjoint gradients and projected
//! L-BFGS.

pub mod adjoint;
pub mod basis;
pub mod cli;
pub mod config;
pub mod control;
pub mod density;
pub mod dynamics;
pub mod error;
pub mod objective;
pub mod optimize;
pub mod solver;
pub mod sparse;
pub mod system;

pub use error::{Error, Result};
