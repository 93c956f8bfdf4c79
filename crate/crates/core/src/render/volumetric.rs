use rand_chacha::ChaCha8Rng;

use super::quadrature::{composite, intervals};
use crate::model::{GntConfig, RayBatch};
use crate::params::{add_layernorm, add_linear, layernorm, linear, Binding, ParamGroup, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::Result;

pub fn init_volumetric_head<T: Scalar>(store: &mut ParamStore<T>, cfg: &GntConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let grp = ParamGroup::VolumetricHead;
    add_layernorm(store, "vol.ln", grp, cfg.dim)?;
    add_linear(store, "vol.0", grp, cfg.dim + cfg.pos_dim(), cfg.volumetric_hidden, rng)?;
    add_linear(store, "vol.1", grp, cfg.volumetric_hidden, 4, rng)
}

/// Per-point `(color [R,M,3], sigma [R,M])` from aggregated point features
/// `[R, M, d]` and the encoded view direction.
pub fn radiance_head<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, x: Var, d_enc: Var) -> Result<(Var, Var)> {
    let &[r, m, _] = g.shape(x) else {
        unreachable!("point features are rank 3")
    };
    let h = layernorm(g, b, "vol.ln", x)?;
    let h = g.concat(&[h, d_enc], 2)?;
    let h = linear(g, b, "vol.0", h)?;
    let h = g.relu(h)?;
    let out = linear(g, b, "vol.1", h)?;
    let c = g.slice(out, 2, 0, 3)?;
    let c = g.sigmoid(c)?;
    let s = g.slice(out, 2, 3, 1)?;
    let s = g.softplus(s)?;
    Ok((c, g.reshape(s, &[r, m])?))
}

/// Interval lengths of every ray in the batch, `[R, M]`.
pub fn batch_intervals<T: Scalar>(batch: &RayBatch<T>) -> Tensor<T> {
    let data = batch
        .ts
        .iter()
        .zip(&batch.t_far)
        .flat_map(|(ts, &far)| intervals(ts, far))
        .map(T::of)
        .collect();
    Tensor::new(vec![batch.n_rays, batch.n_samples], data).expect("one interval per sample")
}

/// Radiance head composed with the quadrature rule. Returns
/// `(rgb [R, 3], weights [R, M])`.
pub fn volumetric_head<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, x: Var, batch: &RayBatch<T>) -> Result<(Var, Var)> {
    let d_enc = g.constant(batch.d_enc.clone());
    let (c, s) = radiance_head(g, b, x, d_enc)?;
    composite(g, c, s, &batch_intervals(batch))
}
