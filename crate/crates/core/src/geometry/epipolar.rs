use super::{Camera, Vec3};
use crate::imagefeat::FeatureMap;
use crate::tensor::Scalar;
use crate::{Error, Result};

/// Size of a feature grid and its resolution relative to the source image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    /// Grid cells per image pixel (0.5 for a half-resolution feature map).
    pub scale: f64,
}

impl GridGeometry {
    /// Continuous image coordinates (pixel centers at `i + 0.5`) to grid
    /// coordinates (cell centers at integers).
    pub fn image_to_grid(&self, u: f64, v: f64) -> (f64, f64) {
        (u * self.scale - 0.5, v * self.scale - 0.5)
    }
}

/// Four-neighbour bilinear taps at grid coordinates `(u, v)` as
/// `(y * width + x, weight)` pairs; `None` outside `[0, W-1] x [0, H-1]`.
pub fn bilinear_weights(width: usize, height: usize, u: f64, v: f64) -> Option<[(usize, f64); 4]> {
    let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
    if !(u >= 0.0 && u <= wmax && v >= 0.0 && v <= hmax) {
        return None;
    }
    let x0 = (u.floor() as usize).min(width.saturating_sub(2));
    let y0 = (v.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    Some([
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ])
}

/// Bilinear feature lookup at grid coordinates. Out-of-grid lookups return a
/// zero vector and `false`.
pub fn bilinear_sample<T: Scalar>(fm: &FeatureMap<T>, u: f64, v: f64) -> (Vec<T>, bool) {
    let mut out = vec![T::zero(); fm.dim];
    let Some(taps) = bilinear_weights(fm.width, fm.height, u, v) else {
        return (out, false);
    };
    for (idx, w) in taps {
        let w = T::of(w);
        let cell = &fm.grid[idx * fm.dim..(idx + 1) * fm.dim];
        out.iter_mut().zip(cell).for_each(|(o, &c)| *o += w * c);
    }
    (out, true)
}

/// Relative direction of a source view seen from point `x`: the difference
/// of the unit vectors toward the target and source camera centers, plus
/// their dot product.
pub fn relative_direction(x: Vec3, target_dir: Vec3, source_center: Vec3) -> [f64; 4] {
    let to_target = -target_dir;
    let to_source = (source_center - x).normalized();
    let d = to_target - to_source;
    [d.x, d.y, d.z, to_target.dot(to_source)]
}

/// Where one 3D point lands in one source view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewProjection {
    pub valid: bool,
    /// Grid coordinates, when the point is in front of the camera.
    pub grid_uv: Option<(f64, f64)>,
    /// Bilinear taps into the view's grid; all-zero when invalid.
    pub taps: [(usize, f64); 4],
    pub delta_d: [f64; 4],
}

/// Projects `x` into every source view. `target_dir` is the unit direction of
/// the target ray.
pub fn project_to_views(
    x: Vec3,
    target_dir: Vec3,
    cams: &[Camera],
    grids: &[GridGeometry],
) -> Result<Vec<ViewProjection>> {
    if cams.is_empty() || cams.len() != grids.len() {
        return Err(Error::Contract(format!(
            "epipolar projection needs matching non-empty cameras and grids, got {} and {}",
            cams.len(),
            grids.len()
        )));
    }
    Ok(cams
        .iter()
        .zip(grids)
        .map(|(cam, grid)| {
            let delta_d = relative_direction(x, target_dir, cam.center());
            let grid_uv = cam.project(x).map(|p| grid.image_to_grid(p.u, p.v));
            let taps = grid_uv.and_then(|(u, v)| bilinear_weights(grid.width, grid.height, u, v));
            ViewProjection {
                valid: taps.is_some(),
                grid_uv,
                taps: taps.unwrap_or([(0, 0.0); 4]),
                delta_d,
            }
        })
        .collect())
}

/// Per-view tokens for one 3D point.
#[derive(Clone, Debug, PartialEq)]
pub struct EpipolarTokens<T> {
    /// `N x d` features, zero for invalid views.
    pub tokens: Vec<Vec<T>>,
    pub valid: Vec<bool>,
    pub delta_d: Vec<[f64; 4]>,
}

/// Samples every source feature map where `x` projects.
pub fn epipolar_gather<T: Scalar>(
    x: Vec3,
    target_dir: Vec3,
    cams: &[Camera],
    fms: &[FeatureMap<T>],
) -> Result<EpipolarTokens<T>> {
    let grids: Vec<GridGeometry> = fms.iter().map(FeatureMap::geometry).collect();
    let projections = project_to_views(x, target_dir, cams, &grids)?;
    let mut out = EpipolarTokens {
        tokens: Vec::with_capacity(fms.len()),
        valid: Vec::with_capacity(fms.len()),
        delta_d: Vec::with_capacity(fms.len()),
    };
    for (p, fm) in projections.iter().zip(fms) {
        let (feature, valid) = match p.grid_uv {
            Some((u, v)) => bilinear_sample(fm, u, v),
            None => (vec![T::zero(); fm.dim], false),
        };
        out.tokens.push(feature);
        out.valid.push(valid);
        out.delta_d.push(p.delta_d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_map(width: usize, height: usize, dim: usize) -> FeatureMap<f64> {
        let grid = (0..width * height * dim).map(|i| i as f64 * 0.37 - 3.0).collect();
        FeatureMap::new(width, height, dim, grid, 0, 1.0).unwrap()
    }

    #[test]
    fn lookup_at_grid_point() {
        let fm = ramp_map(5, 6, 3);
        let (f, valid) = bilinear_sample(&fm, 2.0, 3.0);
        assert!(valid);
        assert_eq!(f, fm.cell(2, 3).to_vec());
    }

    #[test]
    fn lookup_at_cell_midpoint_is_mean() {
        let fm = ramp_map(5, 6, 3);
        let (f, _) = bilinear_sample(&fm, 1.5, 2.5);
        for c in 0..3 {
            let mean = (fm.cell(1, 2)[c] + fm.cell(2, 2)[c] + fm.cell(1, 3)[c] + fm.cell(2, 3)[c]) / 4.0;
            assert!((f[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn lookup_outside_grid_is_zero_and_invalid() {
        let fm = ramp_map(5, 6, 3);
        assert_eq!(bilinear_sample(&fm, -5.0, 0.0), (vec![0.0; 3], false));
        let (_, valid) = bilinear_sample(&fm, 4.0, 5.0);
        assert!(valid, "far corner is inside");
    }

    #[test]
    fn coincident_views_have_zero_relative_direction() {
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, -3.0),
            Vec3::ZERO,
            Vec3::new(0.0, 1.0, 0.0),
            10.0,
            10.0,
            8,
            8,
        )
        .unwrap();
        let fm = ramp_map(8, 8, 2);
        let ray = cam.ray_for_pixel(3.5, 4.5, 1.0, 5.0).unwrap();
        for t in [1.5, 2.5, 3.7] {
            let out = epipolar_gather(ray.at(t), ray.direction, &[cam.clone()], &[fm.clone()]).unwrap();
            let d = out.delta_d[0];
            assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12 && d[2].abs() < 1e-12);
            assert!((d[3] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn point_behind_source_is_invalid() {
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, -3.0),
            Vec3::ZERO,
            Vec3::new(0.0, 1.0, 0.0),
            10.0,
            10.0,
            8,
            8,
        )
        .unwrap();
        let fm = ramp_map(8, 8, 2);
        let out = epipolar_gather(Vec3::new(0.0, 0.0, -5.0), Vec3::new(0.0, 0.0, 1.0), &[cam], &[fm]).unwrap();
        assert!(!out.valid[0]);
        assert_eq!(out.tokens[0], vec![0.0, 0.0]);
    }

    #[test]
    fn no_views_is_contract_error() {
        let out = epipolar_gather::<f64>(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), &[], &[]);
        assert!(matches!(out, Err(Error::Contract(_))));
    }
}
