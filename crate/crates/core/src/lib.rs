//! Multi-task residual learning engine.
//!
//! A shared trunk (dense + ReLU + dropout, followed by a residual block
//! `y = F(x) + x`) feeds seven task heads: four classification heads
//! (subtlety, state, z, diagnosis) and three regression heads (x, y, size).
//! Everything is computed in `f64` with hand-written forward and backward
//! passes so that gradients can be checked against finite differences.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod network;
pub mod numcore;
pub mod optim;
pub mod task;

pub use error::{Error, Result};
pub use numcore::{Matrix, RngState};
pub use task::{Task, TaskMap};
