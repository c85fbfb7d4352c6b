//! Global-to-local hierarchical graph network for emotional-support
//! response generation, built on a small reverse-mode autodiff engine.

pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod reasoner;
pub mod training;

pub use error::{Error, ErrorClass, Result};
