//! Mining, filtering, annotation aggregation, scoring and evaluation for
//! action-reason video datasets.

pub mod annotations;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod pipeline;
pub mod scoring;
pub mod table;
pub mod taxonomy;
pub mod textmine;
pub mod videofilter;

pub use config::PipelineConfig;
pub use corpus::Corpus;
pub use error::{Error, Result};
