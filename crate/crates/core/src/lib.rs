//! Scene-knowledge-guided visual grounding at desk scale.

pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kevili;
pub mod levilm;
pub mod linguistic;
pub mod optim;
pub mod tokenizer;

pub use error::{Error, Result};
