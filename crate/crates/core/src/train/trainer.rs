use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mse_loss, sample_source_target, Adam, TrainConfig};
use crate::data::Dataset;
use crate::geometry::{sample_uniform, SampleSet};
use crate::image::Image;
use crate::imagefeat::images_to_tensor;
use crate::model::{encode_sources, gather_tokens, init_params, pos_encoding, save_checkpoint, GntConfig, RayBatch};
use crate::params::{ParamGroup, ParamStore};
use crate::render::forward_rays;
use crate::tensor::{Graph, Tensor, TensorError};
use crate::{Error, Result};

/// Rays of one optimizer step with their ground-truth colors.
#[derive(Clone, Debug, Serialize)]
pub struct TrainBatch {
    pub step: usize,
    pub target: usize,
    pub sources: Vec<usize>,
    /// `(x, y)` pixel of each ray in the target view.
    pub pixels: Vec<[usize; 2]>,
    /// `R x 3` target colors in `[0, 1]`.
    pub colors: Vec<f32>,
    #[serde(skip)]
    pub sets: Vec<SampleSet>,
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr_enc: f64,
    pub lr_gnt: f64,
    pub wallclock_ms: u64,
}

pub struct Trainer<'a> {
    ds: &'a Dataset,
    model: GntConfig,
    cfg: TrainConfig,
    params: ParamStore<f32>,
    opt: Adam,
    step: usize,
    views: Vec<usize>,
    started: Instant,
    /// Where a failing batch is written when the loss stops being finite.
    pub dump_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    /// Starts from `params`, or a fresh initialization seeded by `cfg.seed`.
    pub fn new(ds: &'a Dataset, model: GntConfig, cfg: TrainConfig, params: Option<ParamStore<f32>>) -> Result<Self> {
        ds.validate()?;
        model.validate()?;
        cfg.validate()?;
        let views: Vec<usize> = (0..ds.len()).filter(|v| !cfg.held_out.contains(v)).collect();
        if views.len() < 2 {
            return Err(Error::Contract(format!("training needs 2 or more views, {} remain", views.len())));
        }
        if views.len() - 1 < cfg.n_views_range[1] {
            log::warn!(
                "{} training views leave at most {} sources; draws of up to {} are capped",
                views.len(),
                views.len() - 1,
                cfg.n_views_range[1]
            );
        }
        let params = match params {
            Some(p) => p,
            None => init_params(&model, cfg.seed)?,
        };
        let opt = Adam::new(&params, cfg.beta1, cfg.beta2, cfg.eps);
        Ok(Self {
            ds,
            model,
            cfg,
            params,
            opt,
            step: 0,
            views,
            started: Instant::now(),
            dump_dir: None,
        })
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn into_params(self) -> ParamStore<f32> {
        self.params
    }

    pub fn model(&self) -> &GntConfig {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// The batch for `step`; depends only on the seed and the step index.
    pub fn batch(&self, step: usize) -> Result<TrainBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step as u64 + 1);
        let (target, sources) = sample_source_target(&self.ds.cameras, &self.views, &self.cfg, &mut rng)?;
        let img = &self.ds.images[target];
        let cam = &self.ds.cameras[target];
        let (w, h) = (img.width, img.height);
        let n = self.cfg.rays_per_step;
        let flat: Vec<usize> = if n <= w * h {
            index::sample(&mut rng, w * h, n).into_vec()
        } else {
            (0..n).map(|_| rng.gen_range(0..w * h)).collect()
        };
        let mut pixels = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(3 * n);
        let mut sets = Vec::with_capacity(n);
        for i in flat {
            let (x, y) = (i % w, i / w);
            pixels.push([x, y]);
            colors.extend_from_slice(img.pixel(x, y));
            let ray = cam.ray_for_pixel(x as f64 + 0.5, y as f64 + 0.5, self.ds.near, self.ds.far)?;
            sets.push(sample_uniform(&ray, self.cfg.n_samples, true, &mut rng)?);
        }
        Ok(TrainBatch {
            step,
            target,
            sources,
            pixels,
            colors,
            sets,
        })
    }

    /// Batch MSE and its gradient for every parameter, in store order.
    pub fn loss_and_grads(&self, batch: &TrainBatch) -> Result<(f64, Vec<Vec<f32>>)> {
        let imgs: Vec<&Image> = batch.sources.iter().map(|&v| &self.ds.images[v]).collect();
        let cams: Vec<_> = batch.sources.iter().map(|&v| self.ds.cameras[v].clone()).collect();
        let mut ge = Graph::new();
        let be = self.params.bind(&mut ge, true);
        let x = ge.constant(images_to_tensor(&imgs)?);
        let (rows, grid) = encode_sources(&mut ge, &be, &self.model, x)?;
        let features = ge.value(rows).clone();

        let total = batch.sets.len();
        let per = total.div_ceil(self.cfg.shards);
        let shards: Vec<(usize, usize)> = (0..total).step_by(per).map(|s| (s, (s + per).min(total))).collect();
        let results: Vec<Result<(f64, Vec<Vec<f32>>, Vec<f32>)>> = shards
            .par_iter()
            .map(|&(lo, hi)| {
                let rb = RayBatch::build(&batch.sets[lo..hi], &cams, grid, self.model.dim, pos_encoding(&self.model))?;
                let mut g = Graph::new();
                let b = self.params.bind(&mut g, true);
                let f = g.leaf(features.clone(), true);
                let tokens = gather_tokens(&mut g, f, &rb)?;
                let fwd = forward_rays(&mut g, &b, &self.model, tokens, &rb)?;
                let gt = g.constant(Tensor::new(vec![hi - lo, 3], batch.colors[3 * lo..3 * hi].to_vec())?);
                let mse = mse_loss(&mut g, fwd.rgb, gt)?;
                let loss = g.scale(mse, ((hi - lo) as f64 / total as f64) as f32)?;
                g.backward(loss)?;
                let fg = g.grad(f).map_or_else(|| vec![0.0; features.numel()], <[f32]>::to_vec);
                Ok((g.value(loss).data()[0] as f64, self.params.collect_grads(&g, &b), fg))
            })
            .collect();

        let mut loss = 0.0;
        let mut grads: Vec<Vec<f32>> = self.params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        let mut fgrad = vec![0.0f32; features.numel()];
        for r in results {
            let (l, gs, fg) = r?;
            loss += l;
            for (acc, g) in grads.iter_mut().zip(gs) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            fgrad.iter_mut().zip(fg).for_each(|(a, b)| *a += b);
        }
        ge.backward_seeded(rows, fgrad)?;
        for (acc, g) in grads.iter_mut().zip(self.params.collect_grads(&ge, &be)) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grads))
    }

    fn dump(&self, batch: &TrainBatch, loss: f64) -> String {
        let Some(dir) = &self.dump_dir else {
            return format!("step {} target {} sources {:?}", batch.step, batch.target, batch.sources);
        };
        let path = dir.join(format!("nonfinite_step_{}.json", batch.step));
        let body = serde_json::json!({ "loss": loss.to_string(), "batch": batch });
        match fs::create_dir_all(dir).and_then(|_| fs::write(&path, body.to_string())) {
            Ok(()) => format!("batch written to {}", path.display()),
            Err(e) => format!("could not write {}: {e}", path.display()),
        }
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<StepLog> {
        let batch = self.batch(self.step)?;
        let (loss, grads) = match self.loss_and_grads(&batch) {
            Ok(r) => r,
            Err(Error::Tensor(e @ TensorError::NonFinite { .. })) => {
                let where_ = self.dump(&batch, f64::NAN);
                return Err(Error::NonFinite(format!("{e} at step {}; {where_}", self.step)));
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            let where_ = self.dump(&batch, loss);
            return Err(Error::NonFinite(format!("loss {loss} at step {}; {where_}", self.step)));
        }
        let (lr_enc, lr_gnt) = self.cfg.lr_at(self.step);
        self.opt.step(&mut self.params, &grads, |g| if g == ParamGroup::Encoder { lr_enc } else { lr_gnt })?;
        let log = StepLog {
            step: self.step,
            loss,
            lr_enc,
            lr_gnt,
            wallclock_ms: self.started.elapsed().as_millis() as u64,
        };
        self.step += 1;
        Ok(log)
    }
}

/// Runs `trainer` up to `cfg.total_steps`, writing one JSON line per step to
/// `log` and checkpoints into `checkpoint_dir` every `checkpoint_every` steps
/// and at the end.
pub fn train_loop(trainer: &mut Trainer<'_>, mut log: Option<&mut dyn Write>, checkpoint_dir: Option<&Path>) -> Result<Vec<StepLog>> {
    let total = trainer.cfg.total_steps;
    let every = trainer.cfg.checkpoint_every;
    let mut history = Vec::with_capacity(total.saturating_sub(trainer.step));
    while trainer.step < total {
        let entry = trainer.step()?;
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        history.push(entry);
        if let Some(dir) = checkpoint_dir {
            if trainer.step == total || (every > 0 && trainer.step % every == 0) {
                save_checkpoint(dir, &trainer.model, trainer.step, &trainer.params)?;
            }
        }
    }
    Ok(history)
}
