//! Scaling paths of infinite-width two-layer ReLU networks.
//!
//! The library discretizes measures on S³ over Fibonacci-based grids, computes
//! the entropic Hellinger–Kantorovich divergence by unbalanced Sinkhorn, solves
//! the interpolation problem regularized by that divergence to a scaled
//! initialization, and compares its solutions with gradient-descent training
//! and with the rich (total variation) and kernel (tangent kernel) limits.

// Comparisons such as `!(x > 0.0)` are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod gd_trainer;
pub mod io;
pub mod measures;
pub mod ntk;
pub mod path_solver;
pub mod relu_model;
pub mod sphere_grid;
pub mod uot;

pub use error::{Error, Result};
