//! Core library for turning a spatially pre-aligned urban-scene video
//! into an endlessly looping cinemagraph.
//!
//! Pipeline stages, in order:
//! 1. [`video`] — frame/mask ingestion and the color conversions.
//! 2. [`temporal`] — per-pixel/region temporal binary patterns and LAB
//!    appearance histograms.
//! 3. [`segmentation`] — greedy hierarchical 2D segmentation under
//!    D = D_T + 0.1·D_A.
//! 4. [`classifier`] — HoG3D bag-of-words + random-forest detection of
//!    display-like segments.
//! 5. [`repetitive`] — per-pixel spectral search for cyclically flashing
//!    content.
//! 6. [`render`] — inpainting, stabilization, robust-PCA appearance
//!    regularization, and loop compositing.
//!
//! The [`pipeline`] module wires the stages together behind one call.

pub mod classifier;
pub mod color;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod render;
pub mod repetitive;
pub mod segmentation;
pub mod temporal;
pub mod video;

pub use error::{Error, Result};
