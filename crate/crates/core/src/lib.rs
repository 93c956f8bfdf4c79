//! Generalizable neural view synthesis: an epipolar view transformer
//! aggregates source-view features per 3D point, and a ray transformer
//! renders pixel colors from the aggregated point features.

pub mod data;
pub mod error;
pub mod geometry;
pub mod gradsuite;
pub mod image;
pub mod imagefeat;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod params;
pub mod render;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
