//! Pixel and image rendering, the classic quadrature compositor, the
//! auto-regressive decoder, attention-guided fine sampling and attention
//! interpretation.

mod autoregressive;
mod fine;
mod interpret;
mod quadrature;
mod volumetric;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use autoregressive::{ar_decode, ar_decode_naive, init_ar_decoder, ArInputs, ArOutput};
pub use fine::{bin_edges, fine_sample, fine_sample_quantiles, inverse_cdf};
pub use interpret::{depth_from_ray_attention, depth_from_weights, ray_attention_weights, view_importance};
pub use quadrature::{composite, intervals, volume_render_quadrature, Quadrature, RadianceSample};
pub use volumetric::{batch_intervals, init_volumetric_head, radiance_head, volumetric_head};

use crate::data::Dataset;
use crate::geometry::{sample_uniform, Camera, GridGeometry, Ray, SampleSet};
use crate::image::{FloatMap, Image};
use crate::imagefeat::images_to_tensor;
use crate::model::{
    encode_sources, gather_tokens, gnt_trunk, pos_encoding, rgb_head, AttentionRecord, GntConfig, RayBatch,
    RendererKind, Trunk,
};
use crate::params::{Binding, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::train::nearest_sources;
use crate::{Error, Result};

/// Graph outputs of one batched forward pass.
#[derive(Clone, Debug)]
pub struct RayForward {
    /// `[R, 3]`.
    pub rgb: Var,
    pub trunk: Trunk,
    /// Compositing weights `[R, M]` of the volumetric renderer.
    pub weights: Option<Var>,
}

/// Trunk plus whichever color head `cfg.renderer` selects.
pub fn forward_rays<T: Scalar>(
    g: &mut Graph<T>,
    b: &Binding<'_>,
    cfg: &GntConfig,
    tokens: Var,
    batch: &RayBatch<T>,
) -> Result<RayForward> {
    let trunk = gnt_trunk(g, b, cfg, tokens, batch)?;
    let (rgb, weights) = match cfg.renderer {
        RendererKind::Gnt => (rgb_head(g, b, cfg, trunk.x)?, None),
        RendererKind::Volumetric => {
            let (rgb, w) = volumetric_head(g, b, trunk.x, batch)?;
            (rgb, Some(w))
        }
        RendererKind::GntAr => {
            let inputs = ArInputs {
                x: trunk.x,
                x_enc: g.constant(batch.x_enc.clone()),
                d_enc: g.constant(batch.d_enc.clone()),
            };
            (ar_decode(g, b, cfg, inputs)?.rgb, None)
        }
    };
    Ok(RayForward { rgb, trunk, weights })
}

/// Encoded source views ready for rendering.
#[derive(Clone, Debug)]
pub struct SourceViews<T> {
    pub cams: Vec<Camera>,
    /// `[N * Hf * Wf, d]` feature rows.
    pub features: Tensor<T>,
    pub grid: GridGeometry,
}

impl<T: Scalar> SourceViews<T> {
    pub fn encode(cfg: &GntConfig, params: &ParamStore<T>, cams: Vec<Camera>, images: &[&Image]) -> Result<Self> {
        if cams.is_empty() || cams.len() != images.len() {
            return Err(Error::Contract(format!(
                "need one image per source camera, got {} cameras and {} images",
                cams.len(),
                images.len()
            )));
        }
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let x = g.constant(images_to_tensor(images)?);
        let (rows, grid) = encode_sources(&mut g, &b, cfg, x)?;
        Ok(Self {
            cams,
            features: g.value(rows).clone(),
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.cams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cams.is_empty()
    }

    /// The same sources in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let rows = self.grid.width * self.grid.height;
        let d = self.features.shape()[1];
        let data = order
            .iter()
            .flat_map(|&v| self.features.data()[v * rows * d..(v + 1) * rows * d].iter().copied())
            .collect();
        Self {
            cams: order.iter().map(|&v| self.cams[v].clone()).collect(),
            features: Tensor::new(vec![order.len() * rows, d], data).expect("same row width"),
            grid: self.grid,
        }
    }
}

/// Ray sampling parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub t_near: f64,
    pub t_far: f64,
    pub n_samples: usize,
    pub stratified: bool,
    /// Extra attention-guided samples per ray; 0 disables the fine pass.
    pub n_fine: usize,
    pub seed: u64,
    /// Rays per forward batch.
    pub chunk: usize,
}

impl SamplerConfig {
    pub const DEFAULT_SAMPLES: usize = 192;
    pub const DEFAULT_FINE: usize = 64;

    pub fn new(t_near: f64, t_far: f64) -> Self {
        Self {
            t_near,
            t_far,
            n_samples: Self::DEFAULT_SAMPLES,
            stratified: false,
            n_fine: 0,
            seed: 0,
            chunk: 64,
        }
    }

    /// Sample distances for one pixel; the random stream depends only on
    /// `(seed, pixel)`.
    pub fn samples(&self, ray: &Ray, pixel: u64) -> Result<SampleSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(pixel);
        sample_uniform(ray, self.n_samples, self.stratified, &mut rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: [f64; 3],
    pub depth: Option<f64>,
    pub attn: Option<AttentionRecord>,
    /// Normalized per-sample importance: last-block ray attention, or
    /// compositing weights for the volumetric renderer.
    pub weights: Vec<f64>,
    pub ts: Vec<f64>,
}

/// Per-ray importance read from a forward pass, normalized to sum to one.
fn sample_weights<T: Scalar>(g: &Graph<T>, fwd: &RayForward, batch: &RayBatch<T>, heads: usize) -> Vec<Vec<f64>> {
    let m = batch.n_samples;
    (0..batch.n_rays)
        .map(|r| {
            let mut w = vec![0.0; m];
            if let Some(wv) = fwd.weights {
                for (acc, v) in w.iter_mut().zip(&g.value(wv).data()[r * m..(r + 1) * m]) {
                    *acc = v.as_f64();
                }
            } else if let Some(&last) = fwd.trunk.ray_attn.last() {
                let slab = &g.value(last).data()[r * heads * m * m..(r + 1) * heads * m * m];
                for row in slab.chunks_exact(m) {
                    for (acc, v) in w.iter_mut().zip(row) {
                        *acc += v.as_f64();
                    }
                }
            }
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            w
        })
        .collect()
}

/// Renders explicit sample sets. Rays are batched `chunk` at a time, grouped
/// by sample count.
pub fn render_samples<T: Scalar>(
    cfg: &GntConfig,
    params: &ParamStore<T>,
    sources: &SourceViews<T>,
    sets: &[SampleSet],
    chunk: usize,
    capture: bool,
) -> Result<Vec<RenderOutput>> {
    let mut out: Vec<Option<RenderOutput>> = vec![None; sets.len()];
    let mut start = 0;
    while start < sets.len() {
        let m = sets[start].len();
        let mut end = start + 1;
        while end < sets.len() && end - start < chunk.max(1) && sets[end].len() == m {
            end += 1;
        }
        for (i, o) in render_batch(cfg, params, sources, &sets[start..end], capture)?.into_iter().enumerate() {
            out[start + i] = Some(o);
        }
        start = end;
    }
    Ok(out.into_iter().map(|o| o.expect("every ray rendered")).collect())
}

fn render_batch<T: Scalar>(
    cfg: &GntConfig,
    params: &ParamStore<T>,
    sources: &SourceViews<T>,
    sets: &[SampleSet],
    capture: bool,
) -> Result<Vec<RenderOutput>> {
    let batch = RayBatch::build(sets, &sources.cams, sources.grid, cfg.dim, pos_encoding(cfg))?;
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let features = g.constant(sources.features.clone());
    let tokens = gather_tokens(&mut g, features, &batch)?;
    let fwd = forward_rays(&mut g, &b, cfg, tokens, &batch)?;
    let weights = sample_weights(&g, &fwd, &batch, cfg.ray_heads);
    let mut records = if capture {
        fwd.trunk.records(&g, cfg, &batch).into_iter().map(Some).collect()
    } else {
        vec![None; sets.len()]
    };
    let rgb = g.value(fwd.rgb).data();
    Ok(sets
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(r, (set, w))| {
            let has_weights = w.iter().sum::<f64>() > 0.0;
            let depth = if has_weights {
                depth_from_weights(&w, &set.ts).clamp(set.ray.t_near, set.ray.t_far)
            } else {
                set.ray.t_far
            };
            RenderOutput {
                rgb: [rgb[3 * r].as_f64(), rgb[3 * r + 1].as_f64(), rgb[3 * r + 2].as_f64()],
                depth: Some(depth),
                attn: records[r].take(),
                weights: w,
                ts: set.ts.clone(),
            }
        })
        .collect())
}

/// Coarse pass over `sampler.n_samples` points, then, when `n_fine > 0`, a
/// second pass of the same network over the coarse points merged with
/// samples drawn from the coarse importance weights.
pub fn render_rays<T: Scalar>(
    cfg: &GntConfig,
    params: &ParamStore<T>,
    sources: &SourceViews<T>,
    rays: &[(Ray, u64)],
    sampler: &SamplerConfig,
    capture: bool,
) -> Result<Vec<RenderOutput>> {
    let coarse: Vec<SampleSet> = rays
        .iter()
        .map(|(ray, pixel)| sampler.samples(ray, *pixel))
        .collect::<Result<_>>()?;
    let first = render_samples(cfg, params, sources, &coarse, sampler.chunk, capture && sampler.n_fine == 0)?;
    if sampler.n_fine == 0 {
        return Ok(first);
    }
    let fine: Vec<SampleSet> = first
        .iter()
        .zip(&coarse)
        .map(|(o, set)| {
            if o.weights.iter().sum::<f64>() > 0.0 {
                fine_sample_quantiles(&o.weights, set, sampler.n_fine)
            } else {
                Ok(set.clone())
            }
        })
        .collect::<Result<_>>()?;
    render_samples(cfg, params, sources, &fine, sampler.chunk, capture)
}

fn pixel_ray(cam: &Camera, u: f64, v: f64, sampler: &SamplerConfig) -> Result<(Ray, u64)> {
    let ray = cam.ray_for_pixel(u, v, sampler.t_near, sampler.t_far)?;
    let pixel = (v.floor() as u64) * cam.width as u64 + u.floor() as u64;
    Ok((ray, pixel))
}

fn render_pixel<T: Scalar>(
    kind: RendererKind,
    cam: &Camera,
    (u, v): (f64, f64),
    sources: &SourceViews<T>,
    cfg: &GntConfig,
    params: &ParamStore<T>,
    sampler: &SamplerConfig,
    capture: bool,
) -> Result<RenderOutput> {
    if cfg.renderer != kind {
        return Err(Error::Config(format!(
            "model is configured for the {} renderer, not {}",
            cfg.renderer.name(),
            kind.name()
        )));
    }
    let ray = pixel_ray(cam, u, v, sampler)?;
    let mut out = render_rays(cfg, params, sources, &[ray], sampler, capture)?;
    Ok(out.pop().expect("one ray"))
}

/// Renders continuous pixel position `(u, v)` of `cam` with the
/// transformer renderer.
pub fn render_pixel_gnt<T: Scalar>(
    cam: &Camera,
    u: f64,
    v: f64,
    sources: &SourceViews<T>,
    cfg: &GntConfig,
    params: &ParamStore<T>,
    sampler: &SamplerConfig,
    capture: bool,
) -> Result<RenderOutput> {
    render_pixel(RendererKind::Gnt, cam, (u, v), sources, cfg, params, sampler, capture)
}

/// Renders `(u, v)` with per-point color/density composed by quadrature.
pub fn render_pixel_volumetric<T: Scalar>(
    cam: &Camera,
    u: f64,
    v: f64,
    sources: &SourceViews<T>,
    cfg: &GntConfig,
    params: &ParamStore<T>,
    sampler: &SamplerConfig,
) -> Result<RenderOutput> {
    render_pixel(RendererKind::Volumetric, cam, (u, v), sources, cfg, params, sampler, false)
}

#[derive(Clone, Debug)]
pub struct RenderedImage {
    pub image: Image,
    pub depth: FloatMap,
    /// Per-pixel records, row-major, when captured.
    pub records: Option<Vec<AttentionRecord>>,
}

/// Renders every pixel center of `cam`. Chunks of rays run in parallel on
/// the current rayon pool; results do not depend on the worker count.
pub fn render_image<T: Scalar>(
    cam: &Camera,
    sources: &SourceViews<T>,
    cfg: &GntConfig,
    params: &ParamStore<T>,
    sampler: &SamplerConfig,
    capture: bool,
) -> Result<RenderedImage> {
    let (w, h) = (cam.width, cam.height);
    let rays: Vec<(Ray, u64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| pixel_ray(cam, x as f64 + 0.5, y as f64 + 0.5, sampler))
        .collect::<Result<_>>()?;
    let chunks: Vec<Vec<RenderOutput>> = rays
        .par_chunks(sampler.chunk.max(1))
        .map(|c| render_rays(cfg, params, sources, c, sampler, capture))
        .collect::<Result<_>>()?;
    let outputs: Vec<RenderOutput> = chunks.into_iter().flatten().collect();
    let mut image = Image::filled(w, h, &[0.0, 0.0, 0.0]);
    let mut depth = FloatMap {
        width: w,
        height: h,
        data: vec![0.0; w * h],
    };
    for (i, o) in outputs.iter().enumerate() {
        let px = &mut image.data[3 * i..3 * i + 3];
        for c in 0..3 {
            px[c] = o.rgb[c] as f32;
        }
        depth.data[i] = o.depth.unwrap_or(sampler.t_far) as f32;
    }
    let records = capture.then(|| outputs.into_iter().filter_map(|o| o.attn).collect());
    Ok(RenderedImage { image, depth, records })
}

/// Renders dataset view `view` from the `n_sources` views of `candidates`
/// closest in viewing direction. Returns the image and the source indices.
#[allow(clippy::too_many_arguments)]
pub fn render_view(
    cfg: &GntConfig,
    params: &ParamStore<f32>,
    ds: &Dataset,
    view: usize,
    candidates: &[usize],
    n_sources: usize,
    sampler: &SamplerConfig,
    capture: bool,
) -> Result<(RenderedImage, Vec<usize>)> {
    if view >= ds.len() {
        return Err(Error::Range(format!("view {view} not in a dataset of {} views", ds.len())));
    }
    if let Some(&bad) = candidates.iter().find(|&&v| v >= ds.len()) {
        return Err(Error::Range(format!("source view {bad} not in a dataset of {} views", ds.len())));
    }
    let ids = nearest_sources(&ds.cameras, view, candidates, n_sources);
    if ids.is_empty() {
        return Err(Error::Contract(format!("no source views available for view {view}")));
    }
    let imgs: Vec<&Image> = ids.iter().map(|&i| &ds.images[i]).collect();
    let cams = ids.iter().map(|&i| ds.cameras[i].clone()).collect();
    let src = SourceViews::encode(cfg, params, cams, &imgs)?;
    Ok((render_image(&ds.cameras[view], &src, cfg, params, sampler, capture)?, ids))
}
