use std::sync::Arc;

use crate::params::{layernorm, linear, Binding};
use crate::tensor::{Graph, Scalar, Var};
use crate::{Error, Result};

/// Position-wise `Linear → ReLU → Linear`.
pub(crate) fn ffn<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, b, &format!("{prefix}.ffn1"), x)?;
    let h = g.relu(h)?;
    linear(g, b, &format!("{prefix}.ffn2"), h)
}

/// `x + FFN(LN(x))`.
pub(crate) fn ffn_residual<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, prefix: &str, x: Var) -> Result<Var> {
    let h = layernorm(g, b, &format!("{prefix}.ln2"), x)?;
    let h = ffn(g, b, prefix, h)?;
    Ok(g.add(x, h)?)
}

/// Subtraction cross-view attention.
///
/// `q: [R, M, d]`, `k`, `v`, `p: [R, M, N, d]`, `mask` over `[R, M, N, d]`.
/// Returns `(Σ_views (V+P)⊙A, A)` with `A = softmax_views(f_A(K − Q + P))`
/// computed independently per channel. `logit_map` is `f_A`; without a
/// nonlinear `f_A` the query shifts every view's logit equally and cancels.
pub fn cross_view_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    p: Var,
    mask: Arc<Vec<bool>>,
    logit_map: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<(Var, Var)> {
    let &[r, m, d] = g.shape(q) else {
        return Err(Error::Contract(format!("view query must be [R,M,d], got {:?}", g.shape(q))));
    };
    let ks = g.shape(k).to_vec();
    if ks.len() != 4 || ks[0] != r || ks[1] != m || ks[3] != d || g.shape(v) != ks || g.shape(p) != ks {
        return Err(Error::Contract(format!(
            "view keys/values/positions must be [{r},{m},N,{d}], got {:?}, {:?}, {:?}",
            ks,
            g.shape(v),
            g.shape(p)
        )));
    }
    let q4 = g.reshape(q, &[r, m, 1, d])?;
    let logits = g.sub(k, q4)?;
    let logits = g.add(logits, p)?;
    let logits = logit_map(g, logits)?;
    let attn = g.masked_softmax(logits, 2, mask)?;
    let vp = g.add(v, p)?;
    let weighted = g.mul(vp, attn)?;
    Ok((g.sum(weighted, 2)?, attn))
}

/// Keys and values of one view block, computable once when weights are shared.
#[derive(Clone, Copy, Debug)]
pub struct ViewKv {
    pub k: Var,
    pub v: Var,
    pub p: Var,
}

pub fn view_kv<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, prefix: &str, tokens: Var, delta_d: Var) -> Result<ViewKv> {
    Ok(ViewKv {
        k: linear(g, b, &format!("{prefix}.fk"), tokens)?,
        v: linear(g, b, &format!("{prefix}.fv"), tokens)?,
        p: linear(g, b, &format!("{prefix}.fp"), delta_d)?,
    })
}

/// One view-transformer block: pre-norm cross-view attention with residual,
/// then a pre-norm FFN with residual. Returns `(x0', attention [R,M,N,d])`.
pub fn view_attention_block<T: Scalar>(
    g: &mut Graph<T>,
    b: &Binding<'_>,
    prefix: &str,
    x0: Var,
    kv: ViewKv,
    mask: Arc<Vec<bool>>,
) -> Result<(Var, Var)> {
    let h = layernorm(g, b, &format!("{prefix}.ln1"), x0)?;
    let q = linear(g, b, &format!("{prefix}.fq"), h)?;
    let (o, attn) = cross_view_attention(g, q, kv.k, kv.v, kv.p, mask, |g, a| {
        let h = linear(g, b, &format!("{prefix}.fa1"), a)?;
        let h = g.relu(h)?;
        linear(g, b, &format!("{prefix}.fa2"), h)
    })?;
    let o = linear(g, b, &format!("{prefix}.fo"), o)?;
    let x = g.add(x0, o)?;
    Ok((ffn_residual(g, b, prefix, x)?, attn))
}

/// Scaled dot-product attention with `heads` heads over the middle axis of
/// `[R, L, d]` inputs, keys of length `S`. `causal` hides keys after the query
/// position (requires `L == S`). Returns `(concatenated heads [R, L, d],
/// attention [R, H, L, S])`.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    causal: bool,
) -> Result<(Var, Var)> {
    let &[r, l, d] = g.shape(q) else {
        return Err(Error::Contract(format!("attention query must be [R,L,d], got {:?}", g.shape(q))));
    };
    let s = g.shape(k)[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("dim {d} is not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let split = |g: &mut Graph<T>, x: Var, len: usize| -> Result<Var> {
        let x = g.reshape(x, &[r, len, heads, dh])?;
        Ok(g.permute(x, &[0, 2, 1, 3])?)
    };
    let (qh, kh, vh) = (split(g, q, l)?, split(g, k, s)?, split(g, v, s)?);
    let scores = g.matmul_nt(qh, kh)?;
    let scores = g.scale(scores, T::of(1.0 / (dh as f64).sqrt()))?;
    let attn = if causal {
        if l != s {
            return Err(Error::Contract("causal attention needs equal query and key lengths".into()));
        }
        let mask: Vec<bool> = (0..r * heads)
            .flat_map(|_| (0..l).flat_map(move |i| (0..s).map(move |j| j <= i)))
            .collect();
        g.masked_softmax(scores, 3, Arc::new(mask))?
    } else {
        g.softmax(scores, 3)?
    };
    let o = g.matmul(attn, vh)?;
    let o = g.permute(o, &[0, 2, 1, 3])?;
    Ok((g.reshape(o, &[r, l, d])?, attn))
}

/// One ray-transformer block: fuse `concat(x0, γ(d), γ(x))`, pre-norm
/// multi-head self-attention over the samples with residual, then a pre-norm
/// FFN with residual. Returns `(x0', attention [R,H,M,M])`.
pub fn ray_attention_block<T: Scalar>(
    g: &mut Graph<T>,
    b: &Binding<'_>,
    prefix: &str,
    x0: Var,
    x_enc: Var,
    d_enc: Var,
    heads: usize,
) -> Result<(Var, Var)> {
    let cat = g.concat(&[x0, d_enc, x_enc], 2)?;
    let fused = linear(g, b, &format!("{prefix}.fuse"), cat)?;
    let h = layernorm(g, b, &format!("{prefix}.ln1"), fused)?;
    let q = linear(g, b, &format!("{prefix}.q"), h)?;
    let k = linear(g, b, &format!("{prefix}.k"), h)?;
    let v = linear(g, b, &format!("{prefix}.v"), h)?;
    let (o, attn) = multi_head_attention(g, q, k, v, heads, false)?;
    let o = linear(g, b, &format!("{prefix}.o"), o)?;
    let x = g.add(fused, o)?;
    Ok((ffn_residual(g, b, prefix, x)?, attn))
}
