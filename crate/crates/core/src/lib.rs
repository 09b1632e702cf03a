//! Sparse-label semantic segmentation of aerial imagery: class-weighted
//! training, polygon pseudo-labeling with empirical p-value filtering,
//! pixel and polygon metrics, and cross-epoch change analysis.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod annot;
pub mod change;
pub mod error;
pub mod eval;
pub mod filter;
pub mod model;
pub mod pipeline;
pub mod polyops;
pub mod pseudo;
pub mod raster;
pub mod scalar;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
pub use raster::{ClassId, GeoTransform, GrayRaster, LabelGrid, ProbabilityGrid};
pub use scalar::Scalar;

pub type ClassWeightsF32 = weights::ClassWeights<f32>;
pub type ClassWeightsF64 = weights::ClassWeights<f64>;
pub type SegmenterParamsF32 = model::SegmenterParams<f32>;
pub type SegmenterParamsF64 = model::SegmenterParams<f64>;
pub type TrainReportF32 = model::TrainReport<f32>;
pub type TrainReportF64 = model::TrainReport<f64>;
pub type ProbabilityGridF32 = raster::ProbabilityGrid<f32>;
pub type ProbabilityGridF64 = raster::ProbabilityGrid<f64>;
pub type PValueRecordF64 = filter::PValueRecord<f64>;
