//! Pixel-wise semantic labeling of large aerial-style rasters.
//!
//! The pipeline classifies multi-scale context windows on a regular grid with
//! a small convolutional network (hierarchical attention across three feature
//! stages, one classification head per stage and task), fuses the per-stage
//! and per-window probabilities, and assigns every region of a class-agnostic
//! over-segmentation the majority grid label it covers.

pub mod fusion;
pub mod metrics;
pub mod model;
pub mod parser;
pub mod raster;
pub mod segmentation;
pub mod synthdata;
pub mod taxonomy;
pub mod tensor;
