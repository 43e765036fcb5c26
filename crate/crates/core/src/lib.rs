//! Cross-media similarity learning: two embedding pathways map image and text
//! features into a shared space, and a small metric network scores image-text
//! pairs for retrieval in both directions.
//!
//! The crate is organised around the pipeline stages:
//! contrastive pretraining and double-triplet fine-tuning ([`pathway`]),
//! metric-network training ([`metricnet`]), retrieval evaluation ([`eval`]),
//! and the orchestration glue used by the `crossmetric` CLI ([`pipeline`]).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod metricnet;
pub mod nn;
pub mod pathway;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{Error, Result};
