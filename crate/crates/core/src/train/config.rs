use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rays_per_step: usize,
    pub total_steps: usize,
    pub lr_encoder: f64,
    pub lr_gnt: f64,
    /// Learning-rate multiplier reached at `total_steps`.
    pub lr_final_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Pool factor `k`, drawn uniformly from this closed interval.
    pub k_range: [f64; 2],
    /// Source view count `N`, drawn uniformly from this inclusive range.
    pub n_views_range: [usize; 2],
    /// Coarse samples per training ray.
    pub n_samples: usize,
    /// Ray shards per step, reduced in fixed order.
    pub shards: usize,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Views never used as targets or sources.
    pub held_out: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            rays_per_step: 512,
            total_steps: 2000,
            lr_encoder: 1e-3,
            lr_gnt: 5e-4,
            lr_final_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            k_range: [1.0, 3.0],
            n_views_range: [2, 4],
            n_samples: 32,
            shards: 4,
            checkpoint_every: 0,
            held_out: Vec::new(),
            seed: 0,
        }
    }

    /// The published optimization settings.
    pub fn paper() -> Self {
        Self {
            rays_per_step: 4096,
            total_steps: 250_000,
            n_views_range: [8, 12],
            n_samples: 192,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr_encoder >= 0.0 && self.lr_gnt >= 0.0 && self.lr_final_ratio > 0.0) {
            return bad("learning rates must be non-negative and the decay ratio positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam needs betas in [0, 1) and eps > 0");
        }
        if !(1.0 <= self.k_range[0] && self.k_range[0] <= self.k_range[1]) {
            return bad("k_range must be a non-empty interval starting at 1 or more");
        }
        if !(1 <= self.n_views_range[0] && self.n_views_range[0] <= self.n_views_range[1]) {
            return bad("n_views_range must be a non-empty range of positive counts");
        }
        if self.rays_per_step == 0 || self.total_steps == 0 || self.n_samples == 0 || self.shards == 0 {
            return bad("rays_per_step, total_steps, n_samples and shards must be positive");
        }
        Ok(())
    }

    /// `(lr_encoder, lr_gnt)` at `step`: exponential decay to
    /// `lr_final_ratio` of the base rate at `total_steps`.
    pub fn lr_at(&self, step: usize) -> (f64, f64) {
        let f = self.lr_final_ratio.powf(step as f64 / self.total_steps as f64);
        (self.lr_encoder * f, self.lr_gnt * f)
    }
}
