use std::sync::Arc;

use crate::geometry::{project_to_views, Camera, GridGeometry, PosEncoding, SampleSet};
use crate::tensor::{GatherPlan, Scalar, Tensor};
use crate::{Error, Result};

/// Everything the network needs about a batch of `R` rays with `M` samples
/// each, seen by `N` source views.
///
/// Source features are expected stacked as `[N * Hf * Wf, d]` rows (view-major,
/// then row-major within a view), which is what `plan` indexes into.
#[derive(Clone, Debug)]
pub struct RayBatch<T> {
    pub n_rays: usize,
    pub n_samples: usize,
    pub n_views: usize,
    /// `R*M*N` rows of bilinear taps.
    pub plan: Arc<GatherPlan<T>>,
    /// `R*M*N` validity flags.
    pub mask: Arc<Vec<bool>>,
    /// `[R, M, N, 4]`.
    pub delta_d: Tensor<T>,
    /// γ(x), `[R, M, P]`.
    pub x_enc: Tensor<T>,
    /// γ(d) repeated along the ray, `[R, M, P]`.
    pub d_enc: Tensor<T>,
    /// Marching distances, `R x M`.
    pub ts: Vec<Vec<f64>>,
    pub t_far: Vec<f64>,
}

impl<T: Scalar> RayBatch<T> {
    /// Projects every sample of every ray into every source view. All source
    /// feature grids share `grid`; `dim` is the feature width.
    pub fn build(
        samples: &[SampleSet],
        cams: &[Camera],
        grid: GridGeometry,
        dim: usize,
        encoding: PosEncoding,
    ) -> Result<Self> {
        let n_rays = samples.len();
        let n_views = cams.len();
        if n_rays == 0 || n_views == 0 {
            return Err(Error::Contract(format!(
                "ray batch needs rays and source views, got {n_rays} rays and {n_views} views"
            )));
        }
        let n_samples = samples[0].len();
        if n_samples == 0 || samples.iter().any(|s| s.len() != n_samples) {
            return Err(Error::Contract("every ray needs the same non-zero sample count".into()));
        }
        let cells = grid.width * grid.height;
        let grids = vec![grid; n_views];
        let pd = encoding.output_dim(3);
        let points = n_rays * n_samples;

        let mut plan = GatherPlan::with_capacity(dim, points * n_views, points * n_views * 4);
        let mut mask = Vec::with_capacity(points * n_views);
        let mut delta = Vec::with_capacity(points * n_views * 4);
        let mut x_enc = Vec::with_capacity(points * pd);
        let mut d_enc = Vec::with_capacity(points * pd);
        let mut buf = Vec::with_capacity(pd);

        for s in samples {
            let dir = s.ray.direction;
            buf.clear();
            encoding.encode_into(&dir.to_array(), &mut buf);
            let d_row: Vec<T> = buf.iter().map(|&v| T::of(v)).collect();
            for &x in &s.points {
                let projections = project_to_views(x, dir, cams, &grids)?;
                for (view, p) in projections.iter().enumerate() {
                    mask.push(p.valid);
                    delta.extend(p.delta_d.iter().map(|&v| T::of(v)));
                    if p.valid {
                        plan.push_row(p.taps.iter().map(|&(i, w)| (view * cells + i, T::of(w))));
                    } else {
                        plan.push_row(std::iter::empty());
                    }
                }
                buf.clear();
                encoding.encode_into(&x.to_array(), &mut buf);
                x_enc.extend(buf.iter().map(|&v| T::of(v)));
                d_enc.extend_from_slice(&d_row);
            }
        }
        Ok(Self {
            n_rays,
            n_samples,
            n_views,
            plan: Arc::new(plan),
            mask: Arc::new(mask),
            delta_d: Tensor::new(vec![n_rays, n_samples, n_views, 4], delta)?,
            x_enc: Tensor::new(vec![n_rays, n_samples, pd], x_enc)?,
            d_enc: Tensor::new(vec![n_rays, n_samples, pd], d_enc)?,
            ts: samples.iter().map(|s| s.ts.clone()).collect(),
            t_far: samples.iter().map(|s| s.ray.t_far).collect(),
        })
    }

    /// Tokens shape `[R, M, N, d]`.
    pub fn token_shape(&self) -> [usize; 4] {
        [self.n_rays, self.n_samples, self.n_views, self.plan.width()]
    }

    /// The view mask repeated over `dim` channels.
    pub fn channel_mask(&self, dim: usize) -> Arc<Vec<bool>> {
        Arc::new(self.mask.iter().flat_map(|&m| std::iter::repeat(m).take(dim)).collect())
    }
}
