//! Global entity disambiguation with limited discrepancy search.

pub mod coherence;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod feat;
pub mod heuristics;
pub mod kb;
pub mod lds;
pub mod local;
pub mod nn;
pub mod oracle;
pub mod params;
pub mod pipeline;
pub mod pruner;
pub mod synth;

pub use error::{Error, Result};
