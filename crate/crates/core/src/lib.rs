pub mod config;
pub mod corpus;
pub mod curate;
pub mod embedding;
pub mod error;
pub mod indicators;
pub mod numerics;
pub mod pipeline;
pub mod quality_labels;
pub mod selector;
pub mod synth;

pub use error::{Error, Result};
