//! One-way quantum computing on a dense state-vector simulator.

pub mod cluster;
pub mod error;
pub mod gates;
pub mod mbqc;
pub mod mpmc;
pub mod rabi;
pub mod resources;
pub mod state;

pub use error::{Error, Result};
