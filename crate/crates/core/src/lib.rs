//! Two-stage classifier cascades where a lightweight Pre-classifier gates a
//! heavier Main-classifier, with Feedback training: the Main-classifier is
//! trained first and its scores weight the Pre-classifier's training samples.

pub mod cascade;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod ga;
pub mod linear_model;
pub(crate) mod serde_float;
pub mod training;
pub mod weighting;

pub use error::{Error, Result};
