use serde::{Deserialize, Serialize};

use crate::imagefeat::EncoderConfig;
use crate::{Error, Result};

/// How per-point features become a pixel color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RendererKind {
    /// Ray transformer, mean pooling and an RGB MLP.
    Gnt,
    /// Per-point color/density head composed with the quadrature rule.
    Volumetric,
    /// Ray transformer followed by the far-to-near auto-regressive decoder.
    GntAr,
}

impl RendererKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gnt" => Some(Self::Gnt),
            "volumetric" => Some(Self::Volumetric),
            "gnt-ar" | "gnt+ar" => Some(Self::GntAr),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gnt => "gnt",
            Self::Volumetric => "volumetric",
            Self::GntAr => "gnt-ar",
        }
    }

    pub fn uses_ray_blocks(self) -> bool {
        !matches!(self, Self::Volumetric)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GntConfig {
    pub dim: usize,
    pub ffn_hidden: usize,
    pub ray_heads: usize,
    /// Only single-head view attention is implemented.
    pub view_heads: usize,
    pub n_blocks: usize,
    pub pos_enc_freqs: usize,
    pub rgb_sigmoid: bool,
    /// One set of view-transformer weights reused by every block.
    pub share_view_weights: bool,
    /// Compute view keys/values once; requires `share_view_weights`.
    pub reuse_kv: bool,
    pub renderer: RendererKind,
    /// Hidden width of the volumetric head.
    pub volumetric_hidden: usize,
    pub ar_blocks: usize,
    pub encoder: EncoderConfig,
}

impl GntConfig {
    /// Single-scene configuration: 4 alternating view/ray blocks of width 64.
    pub fn single_scene() -> Self {
        Self {
            dim: 64,
            ffn_hidden: 256,
            ray_heads: 4,
            view_heads: 1,
            n_blocks: 4,
            pos_enc_freqs: 10,
            rgb_sigmoid: true,
            share_view_weights: false,
            reuse_kv: false,
            renderer: RendererKind::Gnt,
            volumetric_hidden: 64,
            ar_blocks: 2,
            encoder: EncoderConfig {
                down_channels: vec![32, 64, 64],
                up_channels: vec![64, 64],
                out_dim: 64,
                kernel: 3,
            },
        }
    }

    /// Cross-scene configuration: 8 blocks.
    pub fn generalization() -> Self {
        Self {
            n_blocks: 8,
            ..Self::single_scene()
        }
    }

    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            dim: 32,
            ffn_hidden: 64,
            ray_heads: 4,
            n_blocks: 2,
            volumetric_hidden: 32,
            encoder: EncoderConfig::with_out_dim(32),
            ..Self::single_scene()
        }
    }

    /// Gradient-check configuration.
    pub fn tiny() -> Self {
        Self {
            dim: 8,
            ffn_hidden: 16,
            ray_heads: 4,
            n_blocks: 2,
            pos_enc_freqs: 2,
            volumetric_hidden: 8,
            encoder: EncoderConfig {
                down_channels: vec![4, 4, 4],
                up_channels: vec![4, 4],
                out_dim: 8,
                kernel: 3,
            },
            ..Self::single_scene()
        }
    }

    pub fn with_renderer(mut self, renderer: RendererKind) -> Self {
        self.renderer = renderer;
        self
    }

    /// Hidden width of the view-attention logit MLP.
    pub fn attn_hidden(&self) -> usize {
        self.dim
    }

    pub fn pos_dim(&self) -> usize {
        3 * (2 * self.pos_enc_freqs + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.ray_heads == 0 || self.dim % self.ray_heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of ray_heads {}",
                self.dim, self.ray_heads
            )));
        }
        if self.view_heads != 1 {
            return Err(Error::Config("view attention supports a single head".into()));
        }
        if self.n_blocks == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config("n_blocks and ffn_hidden must be positive".into()));
        }
        if self.reuse_kv && !self.share_view_weights {
            return Err(Error::Config("reuse_kv requires share_view_weights".into()));
        }
        if self.encoder.out_dim != self.dim {
            return Err(Error::Config(format!(
                "encoder output dim {} must equal model dim {}",
                self.encoder.out_dim, self.dim
            )));
        }
        if self.renderer == RendererKind::GntAr && self.ar_blocks == 0 {
            return Err(Error::Config("auto-regressive decoder needs at least one block".into()));
        }
        self.encoder.validate()
    }

    pub(crate) fn view_prefix(&self, block: usize) -> String {
        if self.share_view_weights {
            "view.shared".to_string()
        } else {
            format!("view.{block}")
        }
    }
}
