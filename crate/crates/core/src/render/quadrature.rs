use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Color and density at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadianceSample {
    pub color: [f64; 3],
    /// Density per unit length, `>= 0`.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub rgb: [f64; 3],
    pub weights: Vec<f64>,
    /// Transmittance reaching each sample.
    pub transmittance: Vec<f64>,
    /// Transmittance past the last interval.
    pub residual: f64,
}

/// Interval lengths: `t_{i+1} - t_i`, closing with `t_far - t_M`.
pub fn intervals(ts: &[f64], t_far: f64) -> Vec<f64> {
    let mut d: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(&last) = ts.last() {
        d.push((t_far - last).max(0.0));
    }
    d
}

/// Classic emission-absorption compositing of point samples.
pub fn volume_render_quadrature(samples: &[RadianceSample], ts: &[f64], t_far: f64) -> Result<Quadrature> {
    if samples.len() != ts.len() {
        return Err(Error::Contract(format!("{} samples for {} distances", samples.len(), ts.len())));
    }
    if ts.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Contract("sample distances must be strictly increasing".into()));
    }
    if let Some(s) = samples.iter().find(|s| !(s.sigma >= 0.0)) {
        return Err(Error::Range(format!("density {} is negative", s.sigma)));
    }
    let deltas = intervals(ts, t_far);
    let mut out = Quadrature {
        rgb: [0.0; 3],
        weights: Vec::with_capacity(ts.len()),
        transmittance: Vec::with_capacity(ts.len()),
        residual: 1.0,
    };
    let mut optical_depth = 0.0f64;
    for (s, delta) in samples.iter().zip(deltas) {
        let t = (-optical_depth).exp();
        let sd = s.sigma * delta;
        let w = t * -(-sd).exp_m1();
        out.transmittance.push(t);
        out.weights.push(w);
        for c in 0..3 {
            out.rgb[c] += w * s.color[c];
        }
        optical_depth += sd;
    }
    out.residual = (-optical_depth).exp();
    Ok(out)
}

/// Strictly upper-triangular ones: `x · U` is the exclusive prefix sum of `x`.
fn exclusive_prefix_matrix<T: Scalar>(m: usize) -> Tensor<T> {
    let data = (0..m * m)
        .map(|i| if i / m < i % m { T::one() } else { T::zero() })
        .collect();
    Tensor::new(vec![m, m], data).expect("square")
}

/// Differentiable compositing of `colors [R, M, 3]` and `sigma [R, M]` over
/// interval lengths `deltas [R, M]`. Returns `(rgb [R, 3], weights [R, M])`.
pub fn composite<T: Scalar>(g: &mut Graph<T>, colors: Var, sigma: Var, deltas: &Tensor<T>) -> Result<(Var, Var)> {
    let &[r, m] = g.shape(sigma) else {
        return Err(Error::Contract(format!("densities must be [R,M], got {:?}", g.shape(sigma))));
    };
    if g.shape(colors) != [r, m, 3] || deltas.shape() != [r, m] {
        return Err(Error::Contract(format!(
            "colors {:?} and deltas {:?} must match densities [{r},{m}]",
            g.shape(colors),
            deltas.shape()
        )));
    }
    let dv = g.constant(deltas.clone());
    let sd = g.mul(sigma, dv)?;
    let upper = g.constant(exclusive_prefix_matrix(m));
    let cum = g.matmul(sd, upper)?;
    let neg_cum = g.scale(cum, -T::one())?;
    let trans = g.exp(neg_cum)?;
    let neg_sd = g.scale(sd, -T::one())?;
    let keep = g.exp(neg_sd)?;
    let alpha = g.scale(keep, -T::one())?;
    let alpha = g.add_scalar(alpha, T::one())?;
    let w = g.mul(trans, alpha)?;
    let w3 = g.reshape(w, &[r, 1, m])?;
    let rgb = g.matmul(w3, colors)?;
    Ok((g.reshape(rgb, &[r, 3])?, w))
}
