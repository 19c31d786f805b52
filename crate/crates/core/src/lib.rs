//! Empirical risk minimization for clipped ReLU networks: training with random
//! restarts, error bounds, special-function inequalities and Monte Carlo
//! experiments that probe each error term.

pub mod bounds;
pub mod data;
pub mod error;
pub mod harness;
pub mod mmc;
pub mod net;
pub mod report;
pub mod risk;
pub mod special;
pub mod stats;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
