//! The transformer network: per-view feature encoder, view transformer
//! (subtraction cross-view attention), ray transformer (multi-head
//! self-attention along the ray) and the mean-pooled RGB head.
//!
//! Everything is batched over rays: sample features are `[R, M, d]`, view
//! tokens `[R, M, N, d]`.

mod blocks;
mod checkpoint;
mod config;
mod inputs;
mod record;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use blocks::{
    cross_view_attention, multi_head_attention, ray_attention_block, view_attention_block, view_kv, ViewKv,
};
pub(crate) use blocks::ffn_residual;
pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, ManifestEntry};
pub use config::{GntConfig, RendererKind};
pub use inputs::RayBatch;
pub use record::AttentionRecord;

use crate::geometry::{GridGeometry, PosEncoding};
use crate::imagefeat::encode_views;
use crate::params::{add_layernorm, add_linear, layernorm, linear, Binding, ParamGroup, ParamStore};
use crate::tensor::{Graph, Scalar, Var};
use crate::{render, Error, Result};

/// Creates every parameter the configured renderer needs.
pub fn init_params<T: Scalar>(cfg: &GntConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    cfg.encoder.init_params(&mut store, &mut rng)?;
    let d = cfg.dim;
    let view_sets = if cfg.share_view_weights { 1 } else { cfg.n_blocks };
    for l in 0..view_sets {
        let p = cfg.view_prefix(l);
        let grp = ParamGroup::ViewBlocks;
        add_layernorm(&mut store, &format!("{p}.ln1"), grp, d)?;
        for name in ["fq", "fk", "fv", "fo"] {
            add_linear(&mut store, &format!("{p}.{name}"), grp, d, d, &mut rng)?;
        }
        add_linear(&mut store, &format!("{p}.fp"), grp, 4, d, &mut rng)?;
        add_linear(&mut store, &format!("{p}.fa1"), grp, d, cfg.attn_hidden(), &mut rng)?;
        add_linear(&mut store, &format!("{p}.fa2"), grp, cfg.attn_hidden(), d, &mut rng)?;
        add_ffn(&mut store, &p, grp, d, cfg.ffn_hidden, &mut rng)?;
    }
    if cfg.renderer.uses_ray_blocks() {
        let pd = cfg.pos_dim();
        for l in 0..cfg.n_blocks {
            let p = format!("ray.{l}");
            let grp = ParamGroup::RayBlocks;
            add_linear(&mut store, &format!("{p}.fuse"), grp, d + 2 * pd, d, &mut rng)?;
            add_layernorm(&mut store, &format!("{p}.ln1"), grp, d)?;
            for name in ["q", "k", "v", "o"] {
                add_linear(&mut store, &format!("{p}.{name}"), grp, d, d, &mut rng)?;
            }
            add_ffn(&mut store, &p, grp, d, cfg.ffn_hidden, &mut rng)?;
        }
    }
    match cfg.renderer {
        RendererKind::Gnt => {
            let grp = ParamGroup::RgbHead;
            add_layernorm(&mut store, "head.ln", grp, d)?;
            add_linear(&mut store, "rgb.0", grp, d, d, &mut rng)?;
            add_linear(&mut store, "rgb.1", grp, d, 3, &mut rng)?;
        }
        RendererKind::Volumetric => render::init_volumetric_head(&mut store, cfg, &mut rng)?,
        RendererKind::GntAr => render::init_ar_decoder(&mut store, cfg, &mut rng)?,
    }
    Ok(store)
}

/// Registers `{prefix}.ln2`, `{prefix}.ffn1` and `{prefix}.ffn2`.
pub(crate) fn add_ffn<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    group: ParamGroup,
    dim: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    add_layernorm(store, &format!("{prefix}.ln2"), group, dim)?;
    add_linear(store, &format!("{prefix}.ffn1"), group, dim, hidden, rng)?;
    add_linear(store, &format!("{prefix}.ffn2"), group, hidden, dim, rng)
}

/// Runs the encoder on `[N, H, W, 3]` source images and flattens the result
/// to `[N * Hf * Wf, d]` rows, the layout [`RayBatch`] indexes into.
pub fn encode_sources<T: Scalar>(
    g: &mut Graph<T>,
    b: &Binding<'_>,
    cfg: &GntConfig,
    images: Var,
) -> Result<(Var, GridGeometry)> {
    let width = g.shape(images)[2];
    let fm = encode_views(g, b, &cfg.encoder, images)?;
    let &[n, hf, wf, d] = g.shape(fm) else {
        unreachable!("encoder output is rank 4")
    };
    let rows = g.reshape(fm, &[n * hf * wf, d])?;
    Ok((
        rows,
        GridGeometry {
            width: wf,
            height: hf,
            scale: wf as f64 / width as f64,
        },
    ))
}

/// Output of the alternating view/ray stack.
#[derive(Clone, Debug)]
pub struct Trunk {
    /// `[R, M, d]` after the last block.
    pub x: Var,
    /// Per block, `[R, M, N, d]`.
    pub view_attn: Vec<Var>,
    /// Per block, `[R, H, M, M]`; empty without ray blocks.
    pub ray_attn: Vec<Var>,
}

impl Trunk {
    /// Copies the attention maps of every ray out of the graph.
    pub fn records<T: Scalar>(&self, g: &Graph<T>, cfg: &GntConfig, batch: &RayBatch<T>) -> Vec<AttentionRecord> {
        let (m, n, d, h) = (batch.n_samples, batch.n_views, cfg.dim, cfg.ray_heads);
        (0..batch.n_rays)
            .map(|r| {
                let slab = |v: &Var, len: usize| -> Vec<f64> {
                    g.value(*v).data()[r * len..(r + 1) * len].iter().map(|x| x.as_f64()).collect()
                };
                AttentionRecord {
                    n_samples: m,
                    n_views: n,
                    dim: d,
                    heads: h,
                    view_attn: self.view_attn.iter().map(|v| slab(v, m * n * d)).collect(),
                    view_mask: batch.mask[r * m * n..(r + 1) * m * n].to_vec(),
                    ray_attn: self.ray_attn.iter().map(|v| slab(v, h * m * m)).collect(),
                }
            })
            .collect()
    }
}

/// View tokens `[R, M, N, d]` gathered from stacked source features.
pub fn gather_tokens<T: Scalar>(g: &mut Graph<T>, features: Var, batch: &RayBatch<T>) -> Result<Var> {
    if g.shape(features).len() != 2 || g.shape(features)[1] != batch.plan.width() {
        return Err(Error::Contract(format!(
            "source features must be [rows, {}], got {:?}",
            batch.plan.width(),
            g.shape(features)
        )));
    }
    Ok(g.gather(features, batch.plan.clone(), &batch.token_shape())?)
}

/// Max-pooled initialization followed by `n_blocks` view blocks, each
/// followed by a ray block when the renderer has them.
pub fn gnt_trunk<T: Scalar>(
    g: &mut Graph<T>,
    b: &Binding<'_>,
    cfg: &GntConfig,
    tokens: Var,
    batch: &RayBatch<T>,
) -> Result<Trunk> {
    cfg.validate()?;
    let d = cfg.dim;
    if g.shape(tokens) != batch.token_shape() || batch.plan.width() != d {
        return Err(Error::Contract(format!(
            "tokens {:?} do not match batch {:?} and dim {d}",
            g.shape(tokens),
            batch.token_shape()
        )));
    }
    let mask = batch.channel_mask(d);
    let mut x = g.masked_max(tokens, 2, &mask)?;
    let delta = g.constant(batch.delta_d.clone());
    let x_enc = g.constant(batch.x_enc.clone());
    let d_enc = g.constant(batch.d_enc.clone());
    let shared_kv = if cfg.reuse_kv {
        Some(view_kv(g, b, &cfg.view_prefix(0), tokens, delta)?)
    } else {
        None
    };
    let mut trunk = Trunk {
        x,
        view_attn: Vec::with_capacity(cfg.n_blocks),
        ray_attn: Vec::with_capacity(cfg.n_blocks),
    };
    for l in 0..cfg.n_blocks {
        let prefix = cfg.view_prefix(l);
        let kv = match shared_kv {
            Some(kv) => kv,
            None => view_kv(g, b, &prefix, tokens, delta)?,
        };
        let (y, attn) = view_attention_block(g, b, &prefix, x, kv, mask.clone())?;
        trunk.view_attn.push(attn);
        x = y;
        if cfg.renderer.uses_ray_blocks() {
            let (y, attn) = ray_attention_block(g, b, &format!("ray.{l}"), x, x_enc, d_enc, cfg.ray_heads)?;
            trunk.ray_attn.push(attn);
            x = y;
        }
    }
    trunk.x = x;
    Ok(trunk)
}

/// Final norm, mean over samples, RGB MLP. Returns `[R, 3]`.
pub fn rgb_head<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, cfg: &GntConfig, x: Var) -> Result<Var> {
    let h = layernorm(g, b, "head.ln", x)?;
    let pooled = g.mean(h, 1)?;
    let h = linear(g, b, "rgb.0", pooled)?;
    let h = g.relu(h)?;
    let rgb = linear(g, b, "rgb.1", h)?;
    Ok(if cfg.rgb_sigmoid { g.sigmoid(rgb)? } else { rgb })
}

/// Trunk plus mean-pooled RGB head. Returns `([R, 3] colors, trunk)`.
pub fn gnt_forward<T: Scalar>(
    g: &mut Graph<T>,
    b: &Binding<'_>,
    cfg: &GntConfig,
    tokens: Var,
    batch: &RayBatch<T>,
) -> Result<(Var, Trunk)> {
    if cfg.renderer != RendererKind::Gnt {
        return Err(Error::Config(format!("gnt_forward called with renderer {}", cfg.renderer.name())));
    }
    let trunk = gnt_trunk(g, b, cfg, tokens, batch)?;
    let rgb = rgb_head(g, b, cfg, trunk.x)?;
    Ok((rgb, trunk))
}

/// Positional encoding matching `cfg`.
pub fn pos_encoding(cfg: &GntConfig) -> PosEncoding {
    PosEncoding::new(cfg.pos_enc_freqs)
}

#[cfg(test)]
mod tests;
