//! Convolutional image encoder producing per-view feature maps.
//!
//! The default network has three stride-2 down stages, two nearest-neighbour
//! upsample stages with skip concatenation, and a linear 1x1 head, so the
//! output sits at half the input resolution.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::GridGeometry;
use crate::image::Image;
use crate::params::{xavier_shaped, Binding, ParamGroup, ParamStore};
use crate::tensor::{GatherPlan, Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Smallest accepted input side, in pixels.
pub const MIN_INPUT_SIZE: usize = 16;

/// Per-view `height x width x dim` feature grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub grid: Vec<T>,
    pub source_view_id: usize,
    /// Grid cells per source-image pixel.
    pub scale: f64,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(width: usize, height: usize, dim: usize, grid: Vec<T>, source_view_id: usize, scale: f64) -> Result<Self> {
        if grid.len() != width * height * dim || width == 0 || height == 0 {
            return Err(Error::Contract(format!(
                "feature grid has {} values, expected {height}x{width}x{dim}",
                grid.len()
            )));
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map entry".into()));
        }
        Ok(Self {
            width,
            height,
            dim,
            grid,
            source_view_id,
            scale,
        })
    }

    pub fn cell(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.dim;
        &self.grid[i..i + self.dim]
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            width: self.width,
            height: self.height,
            scale: self.scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Output channels of each stride-2 stage.
    pub down_channels: Vec<usize>,
    /// Output channels of each upsample stage; one fewer than the down stages.
    pub up_channels: Vec<usize>,
    pub out_dim: usize,
    pub kernel: usize,
}

impl EncoderConfig {
    pub fn with_out_dim(out_dim: usize) -> Self {
        Self {
            down_channels: vec![16, 32, 64],
            up_channels: vec![32, 32],
            out_dim,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.down_channels.is_empty() || self.up_channels.len() + 1 != self.down_channels.len() {
            return Err(Error::Config(format!(
                "encoder needs one more down stage than up stages, got {} and {}",
                self.down_channels.len(),
                self.up_channels.len()
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("encoder kernel must be odd, got {}", self.kernel)));
        }
        if self.out_dim == 0 || self.down_channels.iter().chain(&self.up_channels).any(|&c| c == 0) {
            return Err(Error::Config("encoder channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Feature-grid size for an input of `height x width`.
    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(2), width.div_ceil(2))
    }

    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<()> {
        self.validate()?;
        let k = self.kernel;
        let mut add_conv = |store: &mut ParamStore<T>, name: String, k: usize, cin: usize, cout: usize| -> Result<()> {
            let w = xavier_shaped(&[k, k, cin, cout], k * k * cin, k * k * cout, rng);
            store.insert(format!("{name}.w"), ParamGroup::Encoder, w)?;
            store.insert(format!("{name}.b"), ParamGroup::Encoder, Tensor::zeros(&[cout]))
        };
        let mut cin = 3;
        for (i, &c) in self.down_channels.iter().enumerate() {
            add_conv(store, format!("encoder.down{i}"), k, cin, c)?;
            cin = c;
        }
        let n_down = self.down_channels.len();
        for (j, &c) in self.up_channels.iter().enumerate() {
            let skip = self.down_channels[n_down - 2 - j];
            add_conv(store, format!("encoder.up{j}"), k, cin + skip, c)?;
            cin = c;
        }
        add_conv(store, "encoder.head".into(), 1, cin, self.out_dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` on every side.
    Same,
    Valid,
}

/// Cross-correlation of `input: [B, H, W, Cin]` (or `[H, W, Cin]`) with
/// `kernel: [k, k, Cin, Cout]`.
pub fn conv2d<T: Scalar>(
    g: &mut Graph<T>,
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    let in_shape = g.shape(input).to_vec();
    let (batch, h, w, cin) = match in_shape[..] {
        [h, w, c] => (1, h, w, c),
        [b, h, w, c] => (b, h, w, c),
        _ => return Err(Error::Contract(format!("conv2d input must be rank 3 or 4, got {in_shape:?}"))),
    };
    let k_shape = g.shape(kernel).to_vec();
    let [k, k2, kcin, cout] = k_shape[..] else {
        return Err(Error::Contract(format!("conv2d kernel must be [k,k,Cin,Cout], got {k_shape:?}")));
    };
    if k != k2 || k % 2 == 0 {
        return Err(Error::Contract(format!("conv2d kernel must be square with odd size, got {k_shape:?}")));
    }
    if kcin != cin {
        return Err(crate::tensor::TensorError::Shape {
            op: "conv2d",
            lhs: in_shape,
            rhs: k_shape,
        }
        .into());
    }
    if stride == 0 {
        return Err(Error::Contract("conv2d stride must be positive".into()));
    }
    let pad = match padding {
        Padding::Same => k / 2,
        Padding::Valid => 0,
    };
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::Contract(format!("conv2d input {h}x{w} smaller than kernel {k}")));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut plan = GatherPlan::with_capacity(cin, batch * ho * wo * k * k, batch * ho * wo * k * k);
    for b in 0..batch {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            plan.push_row([((b * h + iy as usize) * w + ix as usize, T::one())]);
                        } else {
                            plan.push_row([]);
                        }
                    }
                }
            }
        }
    }
    let cols = g.gather(input, Arc::new(plan), &[batch * ho * wo, k * k * cin])?;
    let kmat = g.reshape(kernel, &[k * k * cin, cout])?;
    let mut out = g.matmul(cols, kmat)?;
    if let Some(b) = bias {
        out = g.add(out, b)?;
    }
    let shape: Vec<usize> = if in_shape.len() == 3 {
        vec![ho, wo, cout]
    } else {
        vec![batch, ho, wo, cout]
    };
    Ok(g.reshape(out, &shape)?)
}

/// Nearest-neighbour resize of `[B, H, W, C]` to `[B, out_h, out_w, C]`
/// where each output pixel reads input pixel `(y / 2, x / 2)` (clamped).
pub fn upsample_nearest<T: Scalar>(g: &mut Graph<T>, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
    let [batch, h, w, c] = g.shape(x)[..] else {
        return Err(Error::Contract("upsample input must be [B,H,W,C]".into()));
    };
    let mut plan = GatherPlan::with_capacity(c, batch * out_h * out_w, batch * out_h * out_w);
    for b in 0..batch {
        for y in 0..out_h {
            for xx in 0..out_w {
                let sy = (y / 2).min(h - 1);
                let sx = (xx / 2).min(w - 1);
                plan.push_row([((b * h + sy) * w + sx, T::one())]);
            }
        }
    }
    Ok(g.gather(x, Arc::new(plan), &[batch, out_h, out_w, c])?)
}

fn conv_layer<T: Scalar>(
    g: &mut Graph<T>,
    params: &Binding<'_>,
    name: &str,
    x: Var,
    stride: usize,
    relu: bool,
) -> Result<Var> {
    let w = params.get(&format!("{name}.w"))?;
    let b = params.get(&format!("{name}.b"))?;
    let y = conv2d(g, x, w, Some(b), stride, Padding::Same)?;
    Ok(if relu { g.relu(y)? } else { y })
}

/// Encodes a batch of images `[B, H, W, 3]` into features `[B, H/2, W/2, d]`.
pub fn encode_views<T: Scalar>(g: &mut Graph<T>, params: &Binding<'_>, cfg: &EncoderConfig, images: Var) -> Result<Var> {
    cfg.validate()?;
    let [_, h, w, c] = g.shape(images)[..] else {
        return Err(Error::Contract("encoder input must be [B,H,W,3]".into()));
    };
    if c != 3 {
        return Err(Error::Contract(format!("encoder expects 3 channels, got {c}")));
    }
    if h < MIN_INPUT_SIZE || w < MIN_INPUT_SIZE {
        return Err(Error::Contract(format!(
            "image {w}x{h} is smaller than the {MIN_INPUT_SIZE} px encoder minimum"
        )));
    }
    let mut skips = Vec::with_capacity(cfg.down_channels.len());
    let mut x = images;
    for i in 0..cfg.down_channels.len() {
        x = conv_layer(g, params, &format!("encoder.down{i}"), x, 2, true)?;
        skips.push(x);
    }
    let n_down = skips.len();
    for j in 0..cfg.up_channels.len() {
        let skip = skips[n_down - 2 - j];
        let (sh, sw) = (g.shape(skip)[1], g.shape(skip)[2]);
        let up = upsample_nearest(g, x, sh, sw)?;
        let cat = g.concat(&[up, skip], 3)?;
        x = conv_layer(g, params, &format!("encoder.up{j}"), cat, 1, true)?;
    }
    conv_layer(g, params, "encoder.head", x, 1, false)
}

/// Stacks images into a `[B, H, W, 3]` tensor.
pub fn images_to_tensor<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Contract("no images to encode".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if !img.same_dims(first) || img.channels != 3 {
            return Err(Error::Contract("encoder images must share dimensions and have 3 channels".into()));
        }
        if img.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("encoder input values must lie in [0, 1]".into()));
        }
        data.extend(img.data.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::new(vec![images.len(), first.height, first.width, 3], data)?)
}

/// Encodes one image outside of any training graph.
pub fn encode_image<T: Scalar>(
    img: &Image,
    cfg: &EncoderConfig,
    params: &ParamStore<T>,
    source_view_id: usize,
) -> Result<FeatureMap<T>> {
    let mut g = Graph::new();
    let binding = params.bind(&mut g, false);
    let x = g.constant(images_to_tensor(&[img])?);
    let y = encode_views(&mut g, &binding, cfg, x)?;
    let &[_, hf, wf, d] = g.shape(y) else {
        unreachable!("encoder output is rank 4")
    };
    let grid = g.value(y).data().to_vec();
    FeatureMap::new(wf, hf, d, grid, source_view_id, wf as f64 / img.width as f64)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::grad_check;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn identity_1x1_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..4 * 5 * 3).map(|_| rng.gen()).collect();
        let x = g.constant(Tensor::new(vec![4, 5, 3], data.clone()).unwrap());
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        let k = g.constant(k);
        let y = conv2d(&mut g, x, k, None, 1, Padding::Same).unwrap();
        assert_eq!(g.shape(y), &[4, 5, 3]);
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn averaging_kernel_preserves_constant_interior() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[6, 6, 1], 0.7));
        let k = g.constant(Tensor::full(&[3, 3, 1, 1], 1.0 / 9.0));
        let y = conv2d(&mut g, x, k, None, 1, Padding::Same).unwrap();
        let v = g.value(y);
        for yy in 1..5 {
            for xx in 1..5 {
                assert!((v.data()[yy * 6 + xx] - 0.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[5, 5, 2]));
        let k = g.constant(Tensor::zeros(&[3, 3, 3, 4]));
        let err = conv2d(&mut g, x, k, None, 1, Padding::Same).unwrap_err();
        assert!(matches!(err, Error::Tensor(crate::tensor::TensorError::Shape { .. })));
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand_t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let probe = rand_t(&[3, 3, 3]);
        let mut params = vec![
            ("input".to_string(), rand_t(&[5, 5, 2])),
            ("kernel".to_string(), rand_t(&[3, 3, 2, 3])),
            ("bias".to_string(), rand_t(&[3])),
        ];
        let report = grad_check::<Error, _>(&mut params, 1e-6, 1e-5, None, |g, v| {
            let y = conv2d(g, v[0], v[1], Some(v[2]), 2, Padding::Same)?;
            let p = g.constant(probe.clone());
            let z = g.mul(y, p)?;
            Ok(g.sum_all(z)?)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn encoder_output_is_half_resolution() {
        let cfg = EncoderConfig::with_out_dim(8);
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let img = random_image(32, 24, 5);
        let fm = encode_image(&img, &cfg, &store, 0).unwrap();
        assert_eq!((fm.height, fm.width, fm.dim), (12, 16, 8));
        assert_eq!(fm.scale, 0.5);
        let again = encode_image(&img, &cfg, &store, 0).unwrap();
        assert_eq!(fm, again);
    }

    #[test]
    fn encoder_rejects_tiny_images() {
        let cfg = EncoderConfig::with_out_dim(8);
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let img = random_image(8, 8, 5);
        assert!(matches!(encode_image(&img, &cfg, &store, 0), Err(Error::Contract(_))));
    }

    /// A single stride-2 stage shifts by exactly one cell when the input shifts by two pixels.
    #[test]
    fn stride_two_translation_covariance() {
        let cfg = EncoderConfig {
            down_channels: vec![6],
            up_channels: vec![],
            out_dim: 4,
            kernel: 3,
        };
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let base = random_image(24, 24, 8);
        let mut shifted = base.clone();
        for y in 0..24 {
            for x in 0..24usize {
                let src = base.pixel(x.saturating_sub(2), y).to_vec();
                shifted.pixel_mut(x, y).copy_from_slice(&src);
            }
        }
        let a = encode_image(&base, &cfg, &store, 0).unwrap();
        let b = encode_image(&shifted, &cfg, &store, 0).unwrap();
        let mut worst = 0.0f64;
        for y in 1..11 {
            for x in 2..11 {
                for (p, q) in a.cell(x - 1, y).iter().zip(b.cell(x, y)) {
                    worst = worst.max((p - q).abs());
                }
            }
        }
        assert!(worst < 1e-3, "max deviation {worst}");
    }
}
