//! Regime-switching estimation on firm electricity deviations and the
//! consumption-weighted Economic Condition Uncertainty (ECU) index built from it.

pub mod cli;
pub mod codes;
pub mod config;
pub mod ecu;
pub mod error;
pub mod hmm;
pub mod io;
pub mod numeric;
pub mod pipeline;
pub mod preprocess;
pub mod simgen;

pub use error::{Error, Result};
