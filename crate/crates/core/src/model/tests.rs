use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{sample_uniform, Camera, SampleSet, Vec3};
use crate::params::ParamStore;
use crate::tensor::{grad_check, Tensor};

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    tensor(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

// ---- numeric reference helpers -------------------------------------------

fn lin(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (i, o) = (w.shape()[0], w.shape()[1]);
    (0..o)
        .map(|c| b.data()[c] + (0..i).map(|k| x[k] * w.data()[k * o + c]).sum::<f64>())
        .collect()
}

fn ln(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + crate::params::LAYERNORM_EPS).sqrt()).collect()
}

fn p<'a>(store: &'a ParamStore<f64>, name: &str) -> &'a Tensor<f64> {
    &store.get(name).unwrap().value
}

fn ffn_ref(store: &ParamStore<f64>, prefix: &str, x: &[f64]) -> Vec<f64> {
    let h = ln(x);
    let h: Vec<f64> = lin(&h, p(store, &format!("{prefix}.ffn1.w")), p(store, &format!("{prefix}.ffn1.b")))
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let f = lin(&h, p(store, &format!("{prefix}.ffn2.w")), p(store, &format!("{prefix}.ffn2.b")));
    x.iter().zip(f).map(|(a, b)| a + b).collect()
}

fn view_store(d: usize, seed: u64) -> ParamStore<f64> {
    let cfg = GntConfig {
        dim: d,
        ffn_hidden: 2 * d,
        ray_heads: 1,
        encoder: crate::imagefeat::EncoderConfig::with_out_dim(d),
        ..GntConfig::tiny()
    };
    init_params(&cfg, seed).unwrap()
}

fn run_view_block(store: &ParamStore<f64>, x0: &Tensor<f64>, tokens: &Tensor<f64>, dd: &Tensor<f64>, mask: Vec<bool>) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let b = store.bind(&mut g, false);
    let x = g.constant(x0.clone());
    let t = g.constant(tokens.clone());
    let dd = g.constant(dd.clone());
    let kv = view_kv(&mut g, &b, "view.0", t, dd).unwrap();
    let (y, a) = view_attention_block(&mut g, &b, "view.0", x, kv, Arc::new(mask)).unwrap();
    (g.value(y).data().to_vec(), g.value(a).data().to_vec())
}

// ---- view attention --------------------------------------------------------

#[test]
fn single_view_attends_fully() {
    let d = 4;
    let store = view_store(d, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = random(&[1, 1, d], &mut rng);
    let tok = random(&[1, 1, 1, d], &mut rng);
    let dd = random(&[1, 1, 1, 4], &mut rng);
    let (y, a) = run_view_block(&store, &x0, &tok, &dd, vec![true; d]);
    assert!(a.iter().all(|&w| (w - 1.0).abs() < 1e-15));

    let v = lin(tok.data(), p(&store, "view.0.fv.w"), p(&store, "view.0.fv.b"));
    let pp = lin(dd.data(), p(&store, "view.0.fp.w"), p(&store, "view.0.fp.b"));
    let vp: Vec<f64> = v.iter().zip(&pp).map(|(a, b)| a + b).collect();
    let o = lin(&vp, p(&store, "view.0.fo.w"), p(&store, "view.0.fo.b"));
    let x: Vec<f64> = x0.data().iter().zip(o).map(|(a, b)| a + b).collect();
    let expected = ffn_ref(&store, "view.0", &x);
    for (a, b) in y.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn duplicated_view_matches_single_view() {
    let d = 4;
    let store = view_store(d, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = random(&[1, 2, d], &mut rng);
    let tok = random(&[1, 2, 1, d], &mut rng);
    let dd = random(&[1, 2, 1, 4], &mut rng);
    let (single, _) = run_view_block(&store, &x0, &tok, &dd, vec![true; 2 * d]);
    let dup = |t: &Tensor<f64>, w: usize| {
        let data = t.data().chunks(w).flat_map(|c| c.iter().chain(c).copied()).collect();
        tensor(&[1, 2, 2, w], data)
    };
    let (double, attn) = run_view_block(&store, &x0, &dup(&tok, d), &dup(&dd, 4), vec![true; 4 * d]);
    for (a, b) in single.iter().zip(&double) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(attn.iter().all(|&w| (w - 0.5).abs() < 1e-12));
}

#[test]
fn cross_view_attention_matches_enumeration() {
    // N=2, dim=2, identity projections and zero positional term
    let q = [0.3, -1.2];
    let k = [[0.5, 0.1], [-0.7, 0.9]];
    let v = [[1.0, 2.0], [-3.0, 0.5]];
    let mut g = Graph::<f64>::new();
    let qv = g.constant(tensor(&[1, 1, 2], q.to_vec()));
    let kv = g.constant(tensor(&[1, 1, 2, 2], k.iter().flatten().copied().collect()));
    let vv = g.constant(tensor(&[1, 1, 2, 2], v.iter().flatten().copied().collect()));
    let pv = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let (o, a) = cross_view_attention(&mut g, qv, kv, vv, pv, Arc::new(vec![true; 4]), |_, a| Ok(a)).unwrap();
    for c in 0..2 {
        let l0 = k[0][c] - q[c];
        let l1 = k[1][c] - q[c];
        let w0 = 1.0 / (1.0 + (l1 - l0).exp());
        let w1 = 1.0 - w0;
        let expected = w0 * v[0][c] + w1 * v[1][c];
        assert!((g.value(o).data()[c] - expected).abs() < 1e-14);
        assert!((g.value(a).data()[c] - w0).abs() < 1e-14);
        assert!((g.value(a).data()[2 + c] - w1).abs() < 1e-14);
    }
}

#[test]
fn masked_views_get_no_weight() {
    let d = 4;
    let store = view_store(d, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = random(&[1, 1, d], &mut rng);
    let tok = random(&[1, 1, 3, d], &mut rng);
    let dd = random(&[1, 1, 3, 4], &mut rng);
    let mask: Vec<bool> = (0..3 * d).map(|i| i / d != 1).collect();
    let (_, a) = run_view_block(&store, &x0, &tok, &dd, mask);
    for c in 0..d {
        assert!(a[d + c] < 1e-12);
        assert!((a[c] + a[2 * d + c] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mismatched_view_shapes_are_contract_errors() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(Tensor::zeros(&[1, 2, 3]));
    let k = g.constant(Tensor::zeros(&[1, 2, 2, 4]));
    let out = cross_view_attention(&mut g, q, k, k, k, Arc::new(vec![true; 16]), |_, a| Ok(a));
    assert!(matches!(out, Err(Error::Contract(_))));
}

// ---- ray attention ---------------------------------------------------------

#[test]
fn single_sample_attends_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new();
    let x = g.constant(random(&[2, 1, 8], &mut rng));
    let (_, a) = multi_head_attention(&mut g, x, x, x, 4, false).unwrap();
    assert_eq!(g.shape(a), &[2, 4, 1, 1]);
    assert!(g.value(a).data().iter().all(|&w| (w - 1.0).abs() < 1e-15));
}

#[test]
fn identical_samples_attend_uniformly() {
    let cfg = GntConfig::tiny();
    let store = init_params::<f64>(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let row = random(&[1, 1, cfg.dim], &mut rng);
    let pe = random(&[1, 1, cfg.pos_dim()], &mut rng);
    let m = 5;
    let rep = |t: &Tensor<f64>, w: usize| tensor(&[1, m, w], t.data().iter().copied().cycle().take(m * w).collect());
    let mut g = Graph::new();
    let b = store.bind(&mut g, false);
    let x = g.constant(rep(&row, cfg.dim));
    let e = g.constant(rep(&pe, cfg.pos_dim()));
    let (y, a) = ray_attention_block(&mut g, &b, "ray.0", x, e, e, cfg.ray_heads).unwrap();
    assert!(g.value(a).data().iter().all(|&w| (w - 1.0 / m as f64).abs() < 1e-12));
    let out = g.value(y).data();
    for i in 1..m {
        for c in 0..cfg.dim {
            assert!((out[i * cfg.dim + c] - out[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn single_head_attention_matches_enumeration() {
    let q = [[0.2, -0.4], [1.0, 0.3], [-0.6, 0.8]];
    let k = [[0.5, 0.5], [-0.2, 0.9], [0.7, -1.1]];
    let v = [[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]];
    let flat = |a: &[[f64; 2]; 3]| tensor(&[1, 3, 2], a.iter().flatten().copied().collect());
    let mut g = Graph::<f64>::new();
    let (qv, kv, vv) = (g.constant(flat(&q)), g.constant(flat(&k)), g.constant(flat(&v)));
    let (o, a) = multi_head_attention(&mut g, qv, kv, vv, 1, false).unwrap();
    for i in 0..3 {
        let logits: Vec<f64> = (0..3)
            .map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let w: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        for j in 0..3 {
            assert!((g.value(a).data()[i * 3 + j] - w[j]).abs() < 1e-14);
        }
        for c in 0..2 {
            let expected: f64 = (0..3).map(|j| w[j] * v[j][c]).sum();
            assert!((g.value(o).data()[i * 2 + c] - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn heads_must_divide_dim() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 6]));
    assert!(matches!(multi_head_attention(&mut g, x, x, x, 4, false), Err(Error::Config(_))));
    let mut cfg = GntConfig::tiny();
    cfg.ray_heads = 3;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

// ---- full network ------------------------------------------------------------

struct Setup {
    cams: Vec<Camera>,
    features: Tensor<f64>,
    grid: GridGeometry,
    sets: Vec<SampleSet>,
}

fn ring_camera(angle: f64, size: usize) -> Camera {
    let eye = Vec3::new(3.0 * angle.sin(), 0.4, -3.0 * angle.cos());
    Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, -1.0, 0.0), size as f64, size as f64, size, size).unwrap()
}

fn setup(cfg: &GntConfig, n_views: usize, n_rays: usize, m: usize, seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 16;
    let cams: Vec<Camera> = (0..n_views).map(|i| ring_camera(0.3 * (i as f64 + 1.0), size)).collect();
    let grid = GridGeometry {
        width: size / 2,
        height: size / 2,
        scale: 0.5,
    };
    let features = random(&[n_views * grid.width * grid.height, cfg.dim], &mut rng);
    let target = ring_camera(0.0, size);
    let sets = (0..n_rays)
        .map(|_| {
            let (u, v) = (rng.gen_range(4.0..12.0), rng.gen_range(4.0..12.0));
            let ray = target.ray_for_pixel(u, v, 2.0, 4.0).unwrap();
            sample_uniform(&ray, m, true, &mut rng).unwrap()
        })
        .collect();
    Setup {
        cams,
        features,
        grid,
        sets,
    }
}

fn forward(cfg: &GntConfig, store: &ParamStore<f64>, s: &Setup) -> (Vec<f64>, Vec<AttentionRecord>) {
    let batch = RayBatch::build(&s.sets, &s.cams, s.grid, cfg.dim, pos_encoding(cfg)).unwrap();
    let mut g = Graph::new();
    let b = store.bind(&mut g, false);
    let f = g.constant(s.features.clone());
    let tokens = gather_tokens(&mut g, f, &batch).unwrap();
    let (rgb, trunk) = gnt_forward(&mut g, &b, cfg, tokens, &batch).unwrap();
    (g.value(rgb).data().to_vec(), trunk.records(&g, cfg, &batch))
}

fn permute_views(s: &Setup, order: &[usize]) -> Setup {
    let rows = s.grid.width * s.grid.height;
    let d = s.features.shape()[1];
    let data = order
        .iter()
        .flat_map(|&v| s.features.data()[v * rows * d..(v + 1) * rows * d].iter().copied())
        .collect();
    Setup {
        cams: order.iter().map(|&v| s.cams[v].clone()).collect(),
        features: tensor(&[order.len() * rows, d], data),
        grid: s.grid,
        sets: s.sets.clone(),
    }
}

#[test]
fn output_is_rgb_in_unit_range_and_deterministic() {
    let cfg = GntConfig::tiny();
    let store = init_params::<f64>(&cfg, 1).unwrap();
    let s = setup(&cfg, 3, 4, 6, 2);
    let (rgb, records) = forward(&cfg, &store, &s);
    assert_eq!(rgb.len(), 4 * 3);
    assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(forward(&cfg, &store, &s).0, rgb);
    assert_eq!(records.len(), 4);
}

#[test]
fn attention_maps_are_normalized() {
    let cfg = GntConfig::tiny();
    let store = init_params::<f64>(&cfg, 4).unwrap();
    let s = setup(&cfg, 3, 3, 5, 8);
    let (_, records) = forward(&cfg, &store, &s);
    for rec in &records {
        assert_eq!(rec.view_attn.len(), cfg.n_blocks);
        assert_eq!(rec.ray_attn.len(), cfg.n_blocks);
        for blk in 0..cfg.n_blocks {
            for pt in 0..rec.n_samples {
                let any_valid = (0..rec.n_views).any(|v| rec.is_valid(pt, v));
                for c in 0..rec.dim {
                    let mut total = 0.0;
                    for v in 0..rec.n_views {
                        let w = rec.view_weight(blk, pt, v, c);
                        if rec.is_valid(pt, v) || !any_valid {
                            total += w;
                        } else {
                            assert!(w < 1e-12);
                        }
                    }
                    assert!((total - 1.0).abs() < 1e-5);
                }
            }
            for h in 0..rec.heads {
                for i in 0..rec.n_samples {
                    let row: f64 = (0..rec.n_samples).map(|j| rec.ray_weight(blk, h, i, j)).sum();
                    assert!((row - 1.0).abs() < 1e-5);
                }
            }
        }
    }
}

#[test]
fn source_order_does_not_matter() {
    let cfg = GntConfig::tiny();
    let store = init_params::<f64>(&cfg, 6).unwrap();
    let s = setup(&cfg, 4, 3, 5, 1);
    let (base, _) = forward(&cfg, &store, &s);
    for order in [[1, 0, 2, 3], [3, 2, 1, 0], [2, 3, 0, 1]] {
        let (rgb, _) = forward(&cfg, &store, &permute_views(&s, &order));
        for (a, b) in base.iter().zip(&rgb) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn identical_views_make_output_independent_of_count() {
    let cfg = GntConfig::tiny();
    let store = init_params::<f64>(&cfg, 2).unwrap();
    let s = setup(&cfg, 1, 2, 4, 5);
    let (one, _) = forward(&cfg, &store, &s);
    for n in [2, 4] {
        let rgb = forward(&cfg, &store, &permute_views(&s, &vec![0; n])).0;
        for (a, b) in one.iter().zip(&rgb) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn reused_keys_match_recomputed_keys_with_shared_weights() {
    let shared = GntConfig {
        share_view_weights: true,
        ..GntConfig::tiny()
    };
    let store = init_params::<f64>(&shared, 3).unwrap();
    assert!(store.get("view.shared.fq.w").is_some() && store.get("view.1.fq.w").is_none());
    let s = setup(&shared, 2, 2, 4, 3);
    let reused = GntConfig {
        reuse_kv: true,
        ..shared.clone()
    };
    let (a, _) = forward(&shared, &store, &s);
    let (b, _) = forward(&reused, &store, &s);
    assert_eq!(a, b);
    let bad = GntConfig {
        reuse_kv: true,
        ..GntConfig::tiny()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn tiny_network_gradients_match_finite_differences() {
    let cfg = GntConfig::tiny();
    let store = init_params::<f64>(&cfg, 11).unwrap();
    let s = setup(&cfg, 2, 2, 4, 12);
    let batch = RayBatch::build(&s.sets, &s.cams, s.grid, cfg.dim, pos_encoding(&cfg)).unwrap();
    let target = tensor(&[2, 3], vec![0.2, 0.7, 0.4, 0.9, 0.1, 0.5]);
    let mut named: Vec<(String, Tensor<f64>)> = store
        .named_tensors()
        .into_iter()
        .filter(|(n, _)| !n.starts_with("encoder"))
        .collect();
    named.push(("features".into(), s.features.clone()));
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let mut sub = ParamStore::new();
    for (n, t) in &named[..named.len() - 1] {
        sub.insert(n.clone(), store.get(n).unwrap().group, t.clone()).unwrap();
    }
    let report = grad_check::<Error, _>(&mut named, 1e-6, 1e-4, None, |g, vars| {
        let b = sub.bind_vars(&vars[..vars.len() - 1])?;
        let tokens = gather_tokens(g, vars[vars.len() - 1], &batch)?;
        let (rgb, _) = gnt_forward(g, &b, &cfg, tokens, &batch)?;
        let t = g.constant(target.clone());
        let d = g.sub(rgb, t)?;
        let sq = g.mul(d, d)?;
        Ok(g.mean_all(sq)?)
    })
    .unwrap();
    assert_eq!(report.entries.len(), names.len());
    assert!(report.passed(), "worst: {:?}", report.worst());
}

