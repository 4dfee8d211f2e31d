//! Building blocks for generating multimodal, multi-hop question-answer
//! datasets from a document corpus.

pub mod chunking;
pub mod config;
pub mod context;
pub mod corpus;
pub mod curator;
pub mod error;
pub mod gateway;
pub mod index;
pub mod metrics;
pub mod pipeline;
pub mod profile;
pub mod qa;
pub mod text;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
