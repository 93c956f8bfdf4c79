use crate::model::AttentionRecord;
use crate::{Error, Result};

/// Per-sample importance from the last ray block: attention averaged over
/// heads and queries, normalized to sum to one.
pub fn ray_attention_weights(record: &AttentionRecord) -> Result<Vec<f64>> {
    let last = record
        .ray_attn
        .last()
        .ok_or_else(|| Error::Contract("attention record has no ray-attention block".into()))?;
    let m = record.n_samples;
    let mut w = vec![0.0; m];
    for row in last.chunks_exact(m) {
        for (acc, &a) in w.iter_mut().zip(row) {
            *acc += a;
        }
    }
    normalize(&mut w)?;
    Ok(w)
}

fn normalize(w: &mut [f64]) -> Result<()> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite(format!("attention weights sum to {total}")));
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(())
}

/// `Σ wᵢ tᵢ` for weights already summing to one.
pub fn depth_from_weights(weights: &[f64], ts: &[f64]) -> f64 {
    weights.iter().zip(ts).map(|(w, t)| w * t).sum()
}

/// Expected marching distance under the last ray block's attention.
pub fn depth_from_ray_attention(record: &AttentionRecord, ts: &[f64]) -> Result<f64> {
    if ts.len() != record.n_samples {
        return Err(Error::Contract(format!(
            "{} distances for {} samples",
            ts.len(),
            record.n_samples
        )));
    }
    let w = ray_attention_weights(record)?;
    Ok(depth_from_weights(&w, ts).clamp(ts[0], ts[ts.len() - 1]))
}

/// The source view most often receiving the largest channel-averaged
/// attention along the ray; ties go to the lower index.
pub fn view_importance(record: &AttentionRecord) -> Result<usize> {
    let last = record
        .view_attn
        .last()
        .ok_or_else(|| Error::Contract("attention record has no view-attention block".into()))?;
    let (n, d) = (record.n_views, record.dim);
    let mut votes = vec![0usize; n];
    for (point, slab) in last.chunks_exact(n * d).enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for view in 0..n {
            if !record.is_valid(point, view) {
                continue;
            }
            let mean = slab[view * d..(view + 1) * d].iter().sum::<f64>() / d as f64;
            if best.map_or(true, |(_, b)| mean > b) {
                best = Some((view, mean));
            }
        }
        if let Some((view, _)) = best {
            votes[view] += 1;
        }
    }
    let mut winner = 0;
    for (view, &count) in votes.iter().enumerate() {
        if count > votes[winner] {
            winner = view;
        }
    }
    Ok(winner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ray_record(m: usize, heads: usize, rows: &[f64]) -> AttentionRecord {
        let mut attn = Vec::new();
        for _ in 0..heads * m {
            attn.extend_from_slice(rows);
        }
        AttentionRecord {
            n_samples: m,
            n_views: 1,
            dim: 1,
            heads,
            view_attn: vec![vec![1.0; m]],
            view_mask: vec![true; m],
            ray_attn: vec![vec![0.0; heads * m * m], attn],
        }
    }

    #[test]
    fn uniform_attention_gives_midpoint() {
        let r = ray_record(2, 2, &[0.5, 0.5]);
        assert!((depth_from_ray_attention(&r, &[1.0, 3.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_attention() {
        let r = ray_record(2, 1, &[0.25, 0.75]);
        assert!((depth_from_ray_attention(&r, &[1.0, 3.0]).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn depth_is_scale_invariant() {
        let a = ray_record(3, 2, &[0.2, 0.3, 0.5]);
        let b = ray_record(3, 2, &[0.6, 0.9, 1.5]);
        let ts = [1.0, 2.0, 4.0];
        let (da, db) = (
            depth_from_ray_attention(&a, &ts).unwrap(),
            depth_from_ray_attention(&b, &ts).unwrap(),
        );
        assert!((da - db).abs() < 1e-12);
    }

    #[test]
    fn missing_ray_attention_is_contract_error() {
        let mut r = ray_record(2, 1, &[0.5, 0.5]);
        r.ray_attn.clear();
        assert!(matches!(depth_from_ray_attention(&r, &[1.0, 2.0]), Err(Error::Contract(_))));
    }

    fn view_record(points: &[[f64; 3]], mask: &[bool]) -> AttentionRecord {
        AttentionRecord {
            n_samples: points.len(),
            n_views: 3,
            dim: 1,
            heads: 1,
            view_attn: vec![points.iter().flatten().copied().collect()],
            view_mask: mask.to_vec(),
            ray_attn: vec![],
        }
    }

    #[test]
    fn mode_of_per_point_argmax() {
        let pts = [[0.1, 0.2, 0.7], [0.1, 0.1, 0.8], [0.6, 0.2, 0.2], [0.2, 0.2, 0.6]];
        assert_eq!(view_importance(&view_record(&pts, &[true; 12])).unwrap(), 2);
    }

    #[test]
    fn masked_view_is_never_chosen() {
        let pts = [[0.9, 0.05, 0.05]; 4];
        let mask: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
        assert_ne!(view_importance(&view_record(&pts, &mask)).unwrap(), 0);
    }

    #[test]
    fn single_view_is_view_zero() {
        let r = ray_record(4, 1, &[0.25; 4]);
        assert_eq!(view_importance(&r).unwrap(), 0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let pts = [[0.1, 0.45, 0.45], [0.1, 0.45, 0.45]];
        assert_eq!(view_importance(&view_record(&pts, &[true; 6])).unwrap(), 1);
    }
}
