//! Multi-stage CNN for binary CT slice classification, with a k-NN head on
//! learned features, evaluation metrics and visual explanations.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod knn;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
