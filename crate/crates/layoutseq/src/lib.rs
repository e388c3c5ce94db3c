//! Std companion to `layoutseq-core`: corpus file formats, COCO ingestion,
//! checkpoints, the training loop, SVG rendering and the CLI surface.

pub mod checkpoint;
pub mod cli;
pub mod coco;
pub mod corpus;
pub mod error;
pub mod render;
pub mod trainer;

pub use error::{AppError, Result};
