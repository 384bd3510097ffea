pub mod adversarial;
pub mod analytic;
pub mod cli;
pub mod data;
pub mod decoupler;
pub mod error;
pub mod hypergraph;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
