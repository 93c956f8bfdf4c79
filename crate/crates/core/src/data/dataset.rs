use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::raytrace::raytrace_gt;
use super::scene::SceneSpec;
use crate::geometry::{Camera, Vec3};
use crate::image::{read_pfm, read_ppm, write_pfm, write_ppm, FloatMap, Image};
use crate::{Error, Result};

pub const SCENE_FILE: &str = "scene.json";

/// Posed views of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    /// Per-view ground-truth depth, misses stored as `far`.
    pub depths: Option<Vec<FloatMap>>,
    pub near: f64,
    pub far: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn width(&self) -> usize {
        self.images.first().map_or(0, |i| i.width)
    }

    pub fn height(&self) -> usize {
        self.images.first().map_or(0, |i| i.height)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cameras.len();
        if self.images.len() != n || self.depths.as_ref().is_some_and(|d| d.len() != n) {
            return Err(Error::Contract("dataset cameras, images and depths differ in count".into()));
        }
        let (w, h) = (self.width(), self.height());
        for (cam, img) in self.cameras.iter().zip(&self.images) {
            if img.width != w || img.height != h || img.channels != 3 || cam.width != w || cam.height != h {
                return Err(Error::Contract("dataset images and cameras must share one size".into()));
            }
        }
        if let Some(depths) = &self.depths {
            if depths.iter().any(|d| d.width != w || d.height != h) {
                return Err(Error::Contract("depth maps must match the image size".into()));
            }
        }
        if !(0.0 < self.near && self.near < self.far && self.far.is_finite()) {
            return Err(Error::Contract(format!("need 0 < near < far, got {} {}", self.near, self.far)));
        }
        Ok(())
    }
}

/// Camera ring around the scene centroid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    pub n_views: usize,
    pub radius: f64,
    /// Height of the ring above the centroid, as an angle in radians.
    pub elevation: f64,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Explicit bounds; derived from the ring and scene bounds when absent.
    pub near: Option<f64>,
    pub far: Option<f64>,
}

impl RingConfig {
    pub fn new(n_views: usize, width: usize, height: usize) -> Self {
        Self {
            n_views,
            radius: 3.0,
            elevation: 0.3,
            width,
            height,
            fov_deg: 45.0,
            near: None,
            far: None,
        }
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    /// Ring cameras looking at `target`, camera `i` at azimuth `2πi/n`.
    pub fn cameras(&self, target: Vec3) -> Result<Vec<Camera>> {
        if !(self.radius > 0.0 && self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config("ring radius and field of view must be positive".into()));
        }
        let f = self.focal();
        (0..self.n_views)
            .map(|i| {
                let theta = std::f64::consts::TAU * i as f64 / self.n_views as f64;
                let (ce, se) = (self.elevation.cos(), self.elevation.sin());
                let eye = target + Vec3::new(ce * theta.cos(), se, ce * theta.sin()) * self.radius;
                Camera::look_at(eye, target, Vec3::new(0.0, 1.0, 0.0), f, f, self.width, self.height)
            })
            .collect()
    }
}

/// Renders `scene` from a ring of cameras with the ground-truth raytracer.
pub fn make_dataset(scene: &SceneSpec, ring: &RingConfig) -> Result<Dataset> {
    if ring.n_views < 2 {
        return Err(Error::Contract(format!(
            "a dataset needs at least 2 views (source and target), got {}",
            ring.n_views
        )));
    }
    scene.validate()?;
    let (center, r) = scene.bounding_sphere();
    let cameras = ring.cameras(center)?;
    let near = ring.near.unwrap_or(((ring.radius - r) * 0.9).max(0.05 * ring.radius));
    let far = ring.far.unwrap_or((ring.radius + r) * 1.1);
    let renders: Vec<(Image, FloatMap)> = cameras.par_iter().map(|c| raytrace_gt(scene, c)).collect();
    let (images, mut depths): (Vec<_>, Vec<_>) = renders.into_iter().unzip();
    for d in &mut depths {
        for v in &mut d.data {
            if !v.is_finite() {
                *v = far as f32;
            }
        }
    }
    let ds = Dataset {
        cameras,
        images,
        depths: Some(depths),
        near,
        far,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    width: usize,
    height: usize,
    intrinsics: [f64; 4],
    near: f64,
    far: f64,
    frames: Vec<Frame>,
}

#[derive(Serialize, Deserialize)]
struct Frame {
    file: String,
    camera_to_world: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth_file: Option<String>,
}

/// Writes `scene.json`, one `NNN.ppm` per view and `NNN_depth.pfm` when depth
/// is present. All cameras must share intrinsics.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let Some(first) = ds.cameras.first() else {
        return Err(Error::Contract("cannot write an empty dataset".into()));
    };
    let intrinsics = [first.fx, first.fy, first.cx, first.cy];
    if ds.cameras.iter().any(|c| [c.fx, c.fy, c.cx, c.cy] != intrinsics) {
        return Err(Error::Contract("scene.json stores one set of intrinsics for all views".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(ds.len());
    for (i, (cam, img)) in ds.cameras.iter().zip(&ds.images).enumerate() {
        let file = format!("{i:03}.ppm");
        write_ppm(&dir.join(&file), img)?;
        let depth_file = match &ds.depths {
            Some(d) => {
                let name = format!("{i:03}_depth.pfm");
                write_pfm(&dir.join(&name), &d[i])?;
                Some(name)
            }
            None => None,
        };
        frames.push(Frame {
            file,
            camera_to_world: cam.camera_to_world.iter().flatten().copied().collect(),
            depth_file,
        });
    }
    let meta = SceneFile {
        width: ds.width(),
        height: ds.height(),
        intrinsics,
        near: ds.near,
        far: ds.far,
        frames,
    };
    let path = dir.join(SCENE_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("scene metadata serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(SCENE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: SceneFile = serde_json::from_str(&text).map_err(|e| Error::json(&path, &text, e))?;
    let [fx, fy, cx, cy] = meta.intrinsics;
    let mut cameras = Vec::with_capacity(meta.frames.len());
    let mut images = Vec::with_capacity(meta.frames.len());
    let mut depths = Vec::new();
    for frame in &meta.frames {
        let m = &frame.camera_to_world;
        if m.len() != 16 {
            return Err(Error::parse(
                &path,
                0,
                format!("{}: camera_to_world has {} values, expected 16", frame.file, m.len()),
            ));
        }
        let c2w = [
            [m[0], m[1], m[2], m[3]],
            [m[4], m[5], m[6], m[7]],
            [m[8], m[9], m[10], m[11]],
            [m[12], m[13], m[14], m[15]],
        ];
        cameras.push(Camera::new(fx, fy, cx, cy, meta.width, meta.height, c2w)?);
        images.push(read_ppm(&dir.join(&frame.file))?);
        if let Some(d) = &frame.depth_file {
            depths.push(read_pfm(&dir.join(d))?);
        }
    }
    let depths = if depths.is_empty() {
        None
    } else if depths.len() == meta.frames.len() {
        Some(depths)
    } else {
        return Err(Error::parse(&path, 0, "depth_file must be given for every frame or none"));
    };
    let ds = Dataset {
        cameras,
        images,
        depths,
        near: meta.near,
        far: meta.far,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_scene;

    fn small() -> (SceneSpec, Dataset) {
        let scene = generate_scene(3, 3).unwrap();
        let ds = make_dataset(&scene, &RingConfig::new(6, 12, 10)).unwrap();
        (scene, ds)
    }

    #[test]
    fn principal_rays_pass_through_centroid() {
        let (scene, ds) = small();
        let (c, _) = scene.bounding_sphere();
        assert_eq!(ds.len(), 6);
        for cam in &ds.cameras {
            let o = cam.center();
            let f = cam.forward();
            let to_c = c - o;
            let miss = (to_c - f * to_c.dot(f)).norm();
            assert!(miss < 1e-6, "{miss}");
        }
    }

    #[test]
    fn ring_spacing_is_uniform() {
        let (scene, ds) = small();
        let (c, _) = scene.bounding_sphere();
        let angle = |a: Vec3, b: Vec3| a.normalized().dot(b.normalized()).clamp(-1.0, 1.0).acos();
        let n = ds.len();
        let gaps: Vec<f64> = (0..n)
            .map(|i| angle(ds.cameras[i].center() - c, ds.cameras[(i + 1) % n].center() - c))
            .collect();
        for g in &gaps {
            assert!((g - gaps[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn one_view_is_contract_error() {
        let scene = generate_scene(0, 1).unwrap();
        assert!(matches!(make_dataset(&scene, &RingConfig::new(1, 8, 8)), Err(Error::Contract(_))));
    }

    #[test]
    fn depth_misses_become_far_and_bounds_cover_scene() {
        let (scene, ds) = small();
        let (c, r) = scene.bounding_sphere();
        for cam in &ds.cameras {
            let d = (cam.center() - c).norm();
            assert!(ds.near < d - r && ds.far > d + r);
        }
        let depths = ds.depths.unwrap();
        assert!(depths.iter().flat_map(|d| &d.data).all(|v| v.is_finite() && *v <= ds.far as f32));
        assert!(depths.iter().flat_map(|d| &d.data).any(|v| *v == ds.far as f32));
    }

    #[test]
    fn round_trip() {
        let (_, ds) = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.cameras, ds.cameras);
        for (c, d) in back.cameras.iter().zip(&ds.cameras) {
            for (a, b) in c.camera_to_world.iter().flatten().zip(d.camera_to_world.iter().flatten()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!((back.near, back.far), (ds.near, ds.far));
        for (a, b) in back.images.iter().zip(&ds.images) {
            let err = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6);
        }
        assert_eq!(back.depths, ds.depths);
    }

    #[test]
    fn malformed_json_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let text = "{\n  \"width\": 4,\n  \"height\": oops\n}";
        fs::write(dir.path().join(SCENE_FILE), text).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Parse { path, offset, .. }) => {
                assert!(path.ends_with(SCENE_FILE));
                assert_eq!(&text[offset..offset + 1], "o");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_from_seed() {
        let a = make_dataset(&generate_scene(11, 4).unwrap(), &RingConfig::new(3, 8, 8)).unwrap();
        let b = make_dataset(&generate_scene(11, 4).unwrap(), &RingConfig::new(3, 8, 8)).unwrap();
        assert_eq!(a, b);
    }
}
