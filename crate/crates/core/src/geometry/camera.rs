use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::{Error, Result};

/// Pinhole camera. Camera frame: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major rigid transform from camera to world coordinates.
    pub camera_to_world: [[f64; 4]; 4],
}

/// A point projected onto an image plane, in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Depth below which a point is treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-8;

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        camera_to_world: [[f64; 4]; 4],
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            camera_to_world,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` picks the roll (image y runs opposite to it).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - eye).normalized();
        let x = z.cross(up);
        if !(x.norm() > 1e-9) {
            return Err(Error::Contract("look_at: up vector is parallel to the view direction".into()));
        }
        let x = x.normalized();
        let y = z.cross(x);
        let m = [
            [x.x, y.x, z.x, eye.x],
            [x.y, y.y, z.y, eye.y],
            [x.z, y.z, z.z, eye.z],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height, m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Contract(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Contract("image dimensions must be at least 1".into()));
        }
        let m = &self.camera_to_world;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Contract("camera_to_world last row must be [0,0,0,1]".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() >= 1e-6 {
                    return Err(Error::Contract("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        let m = &self.camera_to_world;
        Vec3::new(m[0][3], m[1][3], m[2][3])
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotate(Vec3::new(0.0, 0.0, 1.0))
    }

    fn rotate(&self, v: Vec3) -> Vec3 {
        let m = &self.camera_to_world;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let m = &self.camera_to_world;
        let d = p - self.center();
        Vec3::new(
            m[0][0] * d.x + m[1][0] * d.y + m[2][0] * d.z,
            m[0][1] * d.x + m[1][1] * d.y + m[2][1] * d.z,
            m[0][2] * d.x + m[1][2] * d.y + m[2][2] * d.z,
        )
    }

    /// Unnormalized camera-frame direction through continuous pixel `(u, v)`,
    /// with unit z component.
    pub fn camera_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn in_frame(&self, u: f64, v: f64) -> bool {
        (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v)
    }

    /// Ray from the camera center through continuous pixel `(u, v)`.
    /// Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub fn ray_for_pixel(&self, u: f64, v: f64, t_near: f64, t_far: f64) -> Result<Ray> {
        if !self.in_frame(u, v) {
            return Err(Error::Range(format!(
                "pixel ({u}, {v}) outside {}x{} frame",
                self.width, self.height
            )));
        }
        let dir = self.rotate(self.camera_direction(u, v).normalized());
        Ray::new(self.center(), dir, t_near, t_far)
    }

    /// `None` when the point lies behind (or on) the camera plane.
    pub fn project(&self, p: Vec3) -> Option<Projection> {
        let c = self.world_to_camera(p);
        if c.z <= MIN_DEPTH {
            return None;
        }
        Some(Projection {
            u: self.fx * c.x / c.z + self.cx,
            v: self.fy * c.y / c.z + self.cy,
            depth: c.z,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// `direction` is normalized here.
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Contract("ray direction must be nonzero".into()));
        }
        if !(0.0 < t_near && t_near < t_far) {
            return Err(Error::Contract(format!("ray bounds must satisfy 0 < near < far, got {t_near}..{t_far}")));
        }
        Ok(Self {
            origin,
            direction: direction / n,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}
