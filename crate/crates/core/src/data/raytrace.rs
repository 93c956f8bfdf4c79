use rayon::prelude::*;

use super::scene::{Primitive, SceneSpec, Shading};
use crate::geometry::{Camera, Vec3};
use crate::image::{FloatMap, Image};

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
    pub primitive: usize,
}

fn intersect(p: &Primitive, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
    match *p {
        Primitive::Sphere { center, radius, .. } => {
            let oc = origin - center;
            let b = oc.dot(dir);
            let c = oc.dot(oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            let t = if -b - s > EPS { -b - s } else { -b + s };
            (t > EPS).then(|| (t, (origin + dir * t - center) / radius))
        }
        Primitive::Box { min, max, .. } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let (mut n0, mut n1) = (Vec3::ZERO, Vec3::ZERO);
            for axis in 0..3 {
                let mut normal = Vec3::ZERO;
                let (o, d, lo, hi) = (origin[axis], dir[axis], min[axis], max[axis]);
                if d.abs() < 1e-15 {
                    if o < lo || o > hi {
                        return None;
                    }
                    continue;
                }
                let (mut a, mut b) = ((lo - o) / d, (hi - o) / d);
                let mut sign = -1.0;
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                    sign = 1.0;
                }
                match axis {
                    0 => normal.x = sign,
                    1 => normal.y = sign,
                    _ => normal.z = sign,
                }
                if a > t0 {
                    t0 = a;
                    n0 = normal;
                }
                if b < t1 {
                    t1 = b;
                    n1 = -normal;
                }
            }
            if t0 > t1 {
                None
            } else if t0 > EPS {
                Some((t0, n0))
            } else if t1 > EPS {
                Some((t1, n1))
            } else {
                None
            }
        }
    }
}

/// Nearest intersection of the ray `origin + t·dir` (unit `dir`) with the scene.
pub fn trace_ray(scene: &SceneSpec, origin: Vec3, dir: Vec3) -> Option<Hit> {
    scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| intersect(p, origin, dir).map(|(t, normal)| Hit { t, normal, primitive: i }))
        .min_by(|a, b| a.t.total_cmp(&b.t))
}

/// Radiance leaving a hit toward `-dir`, clamped to `[0, 1]`.
pub fn shade(scene: &SceneSpec, hit: &Hit, dir: Vec3) -> [f64; 3] {
    let albedo = scene.primitives[hit.primitive].albedo();
    let l = scene.light.direction;
    let n = hit.normal;
    let (diffuse, specular) = match scene.shading {
        Shading::Flat => return albedo.map(|a| a.clamp(0.0, 1.0)),
        Shading::Lambertian => (n.dot(l).max(0.0), 0.0),
        Shading::Specular { strength, shininess } => {
            let ndl = n.dot(l);
            let r = n * (2.0 * ndl) - l;
            let spec = if ndl > 0.0 {
                strength * r.dot(-dir).max(0.0).powf(shininess)
            } else {
                0.0
            };
            (ndl.max(0.0), spec)
        }
    };
    let i = scene.light.intensity;
    albedo.map(|a| ((a * diffuse + specular) * i).clamp(0.0, 1.0))
}

/// Ground-truth image and depth for `cam`. Depth is the distance along the
/// unit ray from the camera center, `∞` where nothing is hit.
pub fn raytrace_gt(scene: &SceneSpec, cam: &Camera) -> (Image, FloatMap) {
    let (w, h) = (cam.width, cam.height);
    let origin = cam.center();
    let mut rgb = vec![0.0f32; w * h * 3];
    let mut depth = vec![0.0f32; w * h];
    rgb.par_chunks_mut(w * 3)
        .zip(depth.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, drow))| {
            for x in 0..w {
                let ray = cam
                    .ray_for_pixel(x as f64 + 0.5, y as f64 + 0.5, 1.0, 2.0)
                    .expect("pixel center is in frame");
                let (c, t) = match trace_ray(scene, origin, ray.direction) {
                    Some(hit) => (shade(scene, &hit, ray.direction), hit.t),
                    None => (scene.background, f64::INFINITY),
                };
                for k in 0..3 {
                    row[x * 3 + k] = c[k] as f32;
                }
                drow[x] = t as f32;
            }
        });
    (
        Image {
            width: w,
            height: h,
            channels: 3,
            data: rgb,
        },
        FloatMap {
            width: w,
            height: h,
            data: depth,
        },
    )
}
