//! Directed ray distance fields for few-view scene reconstruction.
//!
//! The crate covers the whole pipeline on synthetic data: exact ground-truth
//! fields from triangle meshes, a small multi-view fusion predictor trained
//! from scratch, zero-crossing surface decoding and point-cloud metrics.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod model;
pub mod pipeline;
pub mod sampling;

pub use error::{Error, Result};
