//! Power and timing characterization of a gate-level MAC unit, value-set
//! selection, and restricted quantized retraining.
//!
//! See the examples directory for one runnable example per capability.

pub mod characterize;
pub mod cli;
pub mod engine;
pub mod error;
pub mod netlist;
pub mod qnn;
pub mod select;
pub mod workload;

pub use error::{Error, Result};
