pub mod advreward;
pub mod agents;
pub mod dae;
pub mod dialogenv;
pub mod error;
pub mod evalharness;
pub mod nn;
pub mod ontology;
pub mod pipeline;
pub mod shaping;

pub use error::{Error, Result};
