//! Procedural scenes, the ground-truth raytracer and dataset files.

mod dataset;
mod raytrace;
mod scene;

pub use dataset::{make_dataset, read_dataset, write_dataset, Dataset, RingConfig, SCENE_FILE};
pub use raytrace::{raytrace_gt, shade, trace_ray, Hit};
pub use scene::{generate_scene, Aabb, Light, Primitive, SceneSpec, Shading};
