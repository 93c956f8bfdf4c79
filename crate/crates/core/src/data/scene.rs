use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64, albedo: [f64; 3] },
    Box { min: Vec3, max: Vec3, albedo: [f64; 3] },
}

impl Primitive {
    pub fn albedo(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } => *albedo,
        }
    }

    pub fn bounds(&self) -> Aabb {
        match *self {
            Primitive::Sphere { center, radius, .. } => Aabb {
                min: center - Vec3::splat(radius),
                max: center + Vec3::splat(radius),
            },
            Primitive::Box { min, max, .. } => Aabb { min, max },
        }
    }

    fn validate(&self) -> Result<()> {
        let albedo_ok = self.albedo().iter().all(|a| (0.0..=1.0).contains(a));
        let shape_ok = match self {
            Primitive::Sphere { radius, .. } => *radius > 0.0,
            Primitive::Box { min, max, .. } => min.x < max.x && min.y < max.y && min.z < max.z,
        };
        if albedo_ok && shape_ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid primitive {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn union(self, o: Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn contains(&self, o: &Aabb, tol: f64) -> bool {
        let lo = o.min - self.min;
        let hi = self.max - o.max;
        [lo.x, lo.y, lo.z, hi.x, hi.y, hi.z].iter().all(|&v| v >= -tol)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }
}

/// Directional light; `direction` points from the scene toward the light.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: Vec3,
    pub intensity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Shading {
    /// Albedo only.
    Flat,
    /// `albedo · max(0, n·l) · intensity`.
    Lambertian,
    /// Lambertian plus a view-dependent Phong lobe.
    Specular { strength: f64, shininess: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    pub light: Light,
    pub shading: Shading,
    pub bounds: Aabb,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.validate()?;
            if !self.bounds.contains(&p.bounds(), 1e-12) {
                return Err(Error::Config(format!("primitive {p:?} leaves the scene bounds")));
            }
        }
        if (self.light.direction.norm() - 1.0).abs() > 1e-9 || self.light.intensity < 0.0 {
            return Err(Error::Config("light needs a unit direction and non-negative intensity".into()));
        }
        Ok(())
    }

    /// Center and radius of a sphere enclosing the bounds.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        let c = self.bounds.center();
        (c, (self.bounds.max - c).norm())
    }
}

fn albedo(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95)]
}

/// Random spheres and boxes inside the unit ball, lit from above. The same
/// seed always yields the same scene.
pub fn generate_scene(seed: u64, n_primitives: usize) -> Result<SceneSpec> {
    if n_primitives == 0 {
        return Err(Error::Contract("a scene needs at least one primitive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = Vec::with_capacity(n_primitives);
    while primitives.len() < n_primitives {
        let center = Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
        let p = if rng.gen_bool(0.5) {
            Primitive::Sphere {
                center,
                radius: rng.gen_range(0.2..0.4),
                albedo: albedo(&mut rng),
            }
        } else {
            let half = Vec3::new(rng.gen_range(0.12..0.3), rng.gen_range(0.12..0.3), rng.gen_range(0.12..0.3));
            Primitive::Box {
                min: center - half,
                max: center + half,
                albedo: albedo(&mut rng),
            }
        };
        let fits = match &p {
            Primitive::Sphere { center, radius, .. } => center.norm() + radius <= 1.0,
            Primitive::Box { min, max, .. } => (0..8).all(|i| {
                let corner = Vec3::new(
                    if i & 1 == 0 { min.x } else { max.x },
                    if i & 2 == 0 { min.y } else { max.y },
                    if i & 4 == 0 { min.z } else { max.z },
                );
                corner.norm() <= 1.0
            }),
        };
        if fits {
            primitives.push(p);
        }
    }
    let bounds = primitives
        .iter()
        .map(Primitive::bounds)
        .reduce(Aabb::union)
        .expect("at least one primitive");
    let light_dir = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(0.6..1.0), rng.gen_range(-0.8..-0.2)).normalized();
    Ok(SceneSpec {
        primitives,
        background: [0.08, 0.08, 0.1],
        light: Light {
            direction: light_dir,
            intensity: 1.0,
        },
        shading: Shading::Lambertian,
        bounds,
    })
}
