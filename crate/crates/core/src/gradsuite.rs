//! End-to-end gradient verification of every parameter group.
//!
//! Each renderer is differentiated in 64-bit precision through the whole
//! pipeline (source images, encoder, epipolar gather, transformer stack, color
//! head, MSE) and compared against central differences.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{generate_scene, make_dataset, RingConfig};
use crate::geometry::sample_uniform;
use crate::image::Image;
use crate::imagefeat::images_to_tensor;
use crate::model::{encode_sources, gather_tokens, init_params, pos_encoding, GntConfig, RayBatch, RendererKind};
use crate::params::{ParamGroup, ParamStore};
use crate::render::forward_rays;
use crate::tensor::{grad_check, Fault, Tensor, Var};
use crate::train::mse_loss;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteOptions {
    pub n_rays: usize,
    pub n_samples: usize,
    pub n_views: usize,
    /// Source image side in pixels.
    pub image_size: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Corrupts the analytic pass; the suite must then fail.
    #[serde(skip)]
    pub fault: Option<Fault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            n_rays: 2,
            n_samples: 4,
            n_views: 2,
            image_size: 16,
            step: 1e-6,
            tolerance: 1e-4,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupResult {
    pub group: ParamGroup,
    pub renderer: RendererKind,
    pub tensors: usize,
    pub scalars: usize,
    pub max_rel_err: f64,
    /// Tensor with the largest error.
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub options: SuiteOptions,
    pub groups: Vec<GroupResult>,
    pub elapsed_s: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.groups.len() == ParamGroup::ALL.len() && self.groups.iter().all(|g| g.passed)
    }
}

/// Groups verified under each renderer. Shared groups are checked once.
fn plan() -> [(RendererKind, &'static [ParamGroup]); 3] {
    [
        (
            RendererKind::Gnt,
            &[ParamGroup::Encoder, ParamGroup::ViewBlocks, ParamGroup::RayBlocks, ParamGroup::RgbHead],
        ),
        (RendererKind::Volumetric, &[ParamGroup::VolumetricHead]),
        (RendererKind::GntAr, &[ParamGroup::ArDecoder]),
    ]
}

/// Checks every parameter group of `base` (with each renderer) at
/// `opts.tolerance`.
pub fn run_gradcheck_suite(base: &GntConfig, opts: &SuiteOptions) -> Result<SuiteReport> {
    let started = Instant::now();
    let scene = generate_scene(opts.seed, 3)?;
    let ds = make_dataset(&scene, &RingConfig::new(opts.n_views + 1, opts.image_size, opts.image_size))?;
    let images: Vec<&Image> = ds.images[1..].iter().collect();
    let pixels = images_to_tensor::<f64>(&images)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let half = opts.image_size as f64 / 2.0;
    let sets = (0..opts.n_rays)
        .map(|_| {
            let (u, v) = (half + rng.gen_range(-2.0..2.0), half + rng.gen_range(-2.0..2.0));
            let ray = ds.cameras[0].ray_for_pixel(u, v, ds.near, ds.far)?;
            sample_uniform(&ray, opts.n_samples, true, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let target: Vec<f64> = (0..3 * opts.n_rays).map(|_| rng.gen_range(0.1..0.9)).collect();
    let target = Tensor::new(vec![opts.n_rays, 3], target)?;

    let mut groups = Vec::new();
    for (kind, checked) in plan() {
        let cfg = base.clone().with_renderer(kind);
        let store: ParamStore<f64> = init_params(&cfg, opts.seed + 1)?;
        let mut probe = Vec::new();
        let mut slots = Vec::new();
        for p in store.iter() {
            if checked.contains(&p.group) {
                slots.push(Some(probe.len()));
                probe.push((p.name.clone(), p.value.clone()));
            } else {
                slots.push(None);
            }
        }
        let report = grad_check::<Error, _>(&mut probe, opts.step, opts.tolerance, opts.fault, |g, vars| {
            let all: Vec<Var> = store
                .iter()
                .zip(&slots)
                .map(|(p, s)| match s {
                    Some(i) => vars[*i],
                    None => g.constant(p.value.clone()),
                })
                .collect();
            let b = store.bind_vars(&all)?;
            let x = g.constant(pixels.clone());
            let (rows, grid) = encode_sources(g, &b, &cfg, x)?;
            let batch = RayBatch::build(&sets, &ds.cameras[1..], grid, cfg.dim, pos_encoding(&cfg))?;
            let tokens = gather_tokens(g, rows, &batch)?;
            let fwd = forward_rays(g, &b, &cfg, tokens, &batch)?;
            let t = g.constant(target.clone());
            mse_loss(g, fwd.rgb, t)
        })?;
        for &group in checked {
            let members: Vec<_> = report
                .entries
                .iter()
                .filter(|e| store.get(&e.name).is_some_and(|p| p.group == group))
                .collect();
            let worst = members.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
            let max_rel_err = worst.map_or(f64::INFINITY, |w| w.max_rel_err);
            groups.push(GroupResult {
                group,
                renderer: kind,
                tensors: members.len(),
                scalars: members.iter().map(|e| e.numel).sum(),
                max_rel_err,
                worst: worst.map_or_else(String::new, |w| w.name.clone()),
                passed: !members.is_empty() && max_rel_err < opts.tolerance,
            });
        }
    }
    Ok(SuiteReport {
        options: opts.clone(),
        groups,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}
