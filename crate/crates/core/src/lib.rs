//! Structuring breast radiology reports: a from-scratch WordPiece tokenizer and
//! transformer encoder, section segmentation with auxiliary context features,
//! section-routed field extraction, and the evaluation statistics used to compare
//! experiment variants.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalstat;
pub mod heads;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
