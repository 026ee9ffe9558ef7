pub mod artifacts;
pub mod classifier;
pub mod data_model;
pub mod error;
pub mod evaluation;
pub mod fingerprint;
pub mod label;
pub mod pipeline;
pub mod rationale;
pub mod retrieval;
pub mod text;

pub use error::{Error, Result};
