//! Gaussian-overlap chance constraints for drone trajectory planning.

pub mod chance;
pub mod error;
pub mod gaussian;
pub mod mpc;
pub mod numfmt;
pub mod overlap;
pub mod qp;
pub mod scenario;
pub mod scp;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
pub use gaussian::Gaussian;
