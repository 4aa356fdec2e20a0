//! Gradient-based optimal control of open quantum systems driven by a
//! coherent field and an incoherent (environment) control.
//!
//! The qubit path evolves the Bloch vector with a closed-form exponential
//! and differentiates it analytically. The N-level path works with the
//! vectorized Lindblad superoperator and numeric exponentials.

pub mod divdiff;
pub mod environment;
pub mod error;
pub mod expm;
pub mod gradient;
pub mod nlevel;
pub mod optimizer;
pub mod qubit;
pub mod types;

pub use error::{GrapeError, Result};
pub use types::*;
