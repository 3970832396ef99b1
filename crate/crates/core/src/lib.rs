//! Zeroth-order matrix optimization: subspace randomized gradient
//! estimation, ZO-Muon, baseline optimizers, benchmark objectives and
//! independent verification oracles.

pub mod estimators;
pub mod linalg;
pub mod objectives;
pub mod optimizers;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod trace;

pub use linalg::{Matrix, Projection};
pub use objectives::Objective;
pub use params::ParamSpace;
