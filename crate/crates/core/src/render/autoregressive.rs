//! Far-to-near auto-regressive color decoder.
//!
//! The decoder is a causal transformer over the sequence
//! `[p_{M-1}, ..., p_0, q]`: one token per sample, farthest first, then a
//! query built from the encoded view direction. The query's output becomes
//! the pixel color.

use rand_chacha::ChaCha8Rng;

use crate::model::{add_ffn, ffn_residual, multi_head_attention, GntConfig};
use crate::params::{add_layernorm, add_linear, layernorm, linear, Binding, ParamGroup, ParamStore};
use crate::tensor::{Graph, Scalar, Var};
use crate::{Error, Result};

pub fn init_ar_decoder<T: Scalar>(store: &mut ParamStore<T>, cfg: &GntConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let (grp, d, pd) = (ParamGroup::ArDecoder, cfg.dim, cfg.pos_dim());
    add_layernorm(store, "ar.ln_in", grp, d)?;
    add_linear(store, "ar.embed", grp, d + pd, d, rng)?;
    add_linear(store, "ar.query", grp, pd, d, rng)?;
    for l in 0..cfg.ar_blocks {
        let p = format!("ar.{l}");
        add_layernorm(store, &format!("{p}.ln1"), grp, d)?;
        for name in ["q", "k", "v", "o"] {
            add_linear(store, &format!("{p}.{name}"), grp, d, d, rng)?;
        }
        add_ffn(store, &p, grp, d, cfg.ffn_hidden, rng)?;
    }
    add_layernorm(store, "ar.ln_f", grp, d)?;
    add_linear(store, "ar.rgb.0", grp, d, d, rng)?;
    add_linear(store, "ar.rgb.1", grp, d, 3, rng)
}

/// Decoder inputs for a batch of rays.
#[derive(Clone, Copy, Debug)]
pub struct ArInputs {
    /// Aggregated point features, `[R, M, d]`, near to far.
    pub x: Var,
    /// γ(x), `[R, M, P]`.
    pub x_enc: Var,
    /// γ(d), `[R, M, P]` (constant along the ray).
    pub d_enc: Var,
}

pub struct ArOutput {
    pub rgb: Var,
    /// `[R, 1, d]` output of every decoding step, query last.
    pub steps: Vec<Var>,
    /// Sample indices in emission order.
    pub order: Vec<usize>,
}

/// Sample tokens `[R, M, d]` and the direction query `[R, 1, d]`.
fn embed<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, inp: ArInputs) -> Result<(Var, Var)> {
    let h = layernorm(g, b, "ar.ln_in", inp.x)?;
    let h = g.concat(&[h, inp.x_enc], 2)?;
    let tokens = linear(g, b, "ar.embed", h)?;
    let d0 = g.slice(inp.d_enc, 1, 0, 1)?;
    let query = linear(g, b, "ar.query", d0)?;
    Ok((tokens, query))
}

fn color<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, cfg: &GntConfig, out: Var) -> Result<Var> {
    let r = g.shape(out)[0];
    let h = layernorm(g, b, "ar.ln_f", out)?;
    let h = g.reshape(h, &[r, cfg.dim])?;
    let h = linear(g, b, "ar.rgb.0", h)?;
    let h = g.relu(h)?;
    let rgb = linear(g, b, "ar.rgb.1", h)?;
    Ok(if cfg.rgb_sigmoid { g.sigmoid(rgb)? } else { rgb })
}

fn check(g: &Graph<impl Scalar>, cfg: &GntConfig, inp: ArInputs) -> Result<usize> {
    let &[_, m, d] = g.shape(inp.x) else {
        return Err(Error::Contract(format!("decoder features must be [R,M,d], got {:?}", g.shape(inp.x))));
    };
    if m == 0 || d != cfg.dim {
        return Err(Error::Contract(format!("decoder needs M >= 1 samples of width {}", cfg.dim)));
    }
    Ok(m)
}

/// Per-layer keys and values of all tokens decoded so far, split by head:
/// `[R, H, S, d/H]`.
#[derive(Clone, Copy, Default)]
struct LayerCache {
    k: Option<Var>,
    v: Option<Var>,
}

/// One decoding step for a single new token `[R, 1, d]`; appends its keys
/// and values to `cache` so the step attends over every earlier token.
fn step<T: Scalar>(
    g: &mut Graph<T>,
    b: &Binding<'_>,
    cfg: &GntConfig,
    token: Var,
    cache: &mut [LayerCache],
) -> Result<Var> {
    let (r, d, heads) = (g.shape(token)[0], cfg.dim, cfg.ray_heads);
    let dh = d / heads;
    let mut h = token;
    for (l, layer) in cache.iter_mut().enumerate() {
        let p = format!("ar.{l}");
        let a = layernorm(g, b, &format!("{p}.ln1"), h)?;
        // [R, 1, H, dh] and [R, H, 1, dh] share a memory layout
        let mut split = |name: &str| -> Result<Var> {
            let x = linear(g, b, &format!("{p}.{name}"), a)?;
            Ok(g.reshape(x, &[r, heads, 1, dh])?)
        };
        let (q, k, v) = (split("q")?, split("k")?, split("v")?);
        let k = match layer.k {
            Some(prev) => g.concat(&[prev, k], 2)?,
            None => k,
        };
        let v = match layer.v {
            Some(prev) => g.concat(&[prev, v], 2)?,
            None => v,
        };
        layer.k = Some(k);
        layer.v = Some(v);
        let scores = g.matmul_nt(q, k)?;
        let scores = g.scale(scores, T::of(1.0 / (dh as f64).sqrt()))?;
        let attn = g.softmax(scores, 3)?;
        let o = g.matmul(attn, v)?;
        let o = g.reshape(o, &[r, 1, d])?;
        let o = linear(g, b, &format!("{p}.o"), o)?;
        h = g.add(h, o)?;
        h = ffn_residual(g, b, &p, h)?;
    }
    Ok(h)
}

/// Incremental decoding with a per-layer key/value cache.
pub fn ar_decode<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, cfg: &GntConfig, inp: ArInputs) -> Result<ArOutput> {
    let m = check(g, cfg, inp)?;
    let (tokens, query) = embed(g, b, inp)?;
    let mut cache = vec![LayerCache::default(); cfg.ar_blocks];
    let order: Vec<usize> = (0..m).rev().collect();
    let mut steps = Vec::with_capacity(m + 1);
    for &i in &order {
        let t = g.slice(tokens, 1, i, 1)?;
        steps.push(step(g, b, cfg, t, &mut cache)?);
    }
    let out = step(g, b, cfg, query, &mut cache)?;
    steps.push(out);
    Ok(ArOutput {
        rgb: color(g, b, cfg, out)?,
        steps,
        order,
    })
}

/// Reference decoder: every step re-runs the full causal stack over the
/// whole prefix from scratch.
pub fn ar_decode_naive<T: Scalar>(
    g: &mut Graph<T>,
    b: &Binding<'_>,
    cfg: &GntConfig,
    inp: ArInputs,
) -> Result<ArOutput> {
    let m = check(g, cfg, inp)?;
    let (tokens, query) = embed(g, b, inp)?;
    let order: Vec<usize> = (0..m).rev().collect();
    let mut seq: Vec<Var> = Vec::with_capacity(m + 1);
    for &i in &order {
        seq.push(g.slice(tokens, 1, i, 1)?);
    }
    seq.push(query);
    let mut steps = Vec::with_capacity(m + 1);
    for len in 1..=seq.len() {
        let mut h = g.concat(&seq[..len], 1)?;
        for l in 0..cfg.ar_blocks {
            let p = format!("ar.{l}");
            let a = layernorm(g, b, &format!("{p}.ln1"), h)?;
            let q = linear(g, b, &format!("{p}.q"), a)?;
            let k = linear(g, b, &format!("{p}.k"), a)?;
            let v = linear(g, b, &format!("{p}.v"), a)?;
            let (o, _) = multi_head_attention(g, q, k, v, cfg.ray_heads, true)?;
            let o = linear(g, b, &format!("{p}.o"), o)?;
            h = g.add(h, o)?;
            h = ffn_residual(g, b, &p, h)?;
        }
        steps.push(g.slice(h, 1, len - 1, 1)?);
    }
    let out = *steps.last().expect("at least one step");
    Ok(ArOutput {
        rgb: color(g, b, cfg, out)?,
        steps,
        order,
    })
}
