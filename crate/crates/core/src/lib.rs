//! Attribute value extraction as multi-label classification with label
//! semantic matching, negative label sampling and a label prior.

pub mod corpus;
pub mod diffcore;
pub mod encoders;
mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod matching;
pub mod model;
pub mod predictor;
pub mod rng;
pub mod training;

pub use error::{CheckpointError, Error, Result};
