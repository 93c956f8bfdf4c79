//! Cameras, rays, ray sampling, projection onto source views, bilinear
//! feature lookup and Fourier positional encoding.
//!
//! Conventions: camera frame is x right, y down, z forward; pixel `(i, j)`
//! of an image has its center at continuous coordinates `(i + 0.5, j + 0.5)`;
//! feature grids have cell centers at integer coordinates.

mod camera;
mod encoding;
mod epipolar;
mod sampling;
mod vec3;

pub use camera::{Camera, Projection, Ray, MIN_DEPTH};
pub use encoding::{positional_encode, PosEncoding};
pub use epipolar::{
    bilinear_sample, bilinear_weights, epipolar_gather, project_to_views, relative_direction,
    EpipolarTokens, GridGeometry, ViewProjection,
};
pub use sampling::{sample_uniform, SampleSet};
pub use vec3::Vec3;
