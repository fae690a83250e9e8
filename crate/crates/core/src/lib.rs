//! Ear-image preprocessing and verification pipeline.

pub mod alignment;
pub mod detection;
pub mod embedding;
pub mod error;
pub mod io;
pub mod manifest;
pub mod masking;
pub mod mock;
pub mod pipeline;
pub mod reporting;
pub mod restoration;
pub mod types;
pub mod verification;

pub use error::{Error, Result};
pub use types::{
    BinaryMask, BoundingBox, Detection, DetectorSource, Embedding, RasterImage, Side, Stage, ALIGNED_SIZE,
    EMBEDDING_DIM,
};
pub use pipeline::{run_pipeline, PipelineConfig, StageName};
