//! Curriculum-learning workbench for masked language model pre-training on
//! a corpus of simple (SL) and everyday (EL) language.

pub mod corpus;
pub mod curriculum;
pub mod difficulty;
pub mod error;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod trainer;
pub mod eval;

pub use error::{Error, Result};
