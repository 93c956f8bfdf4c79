use rand::Rng;

use crate::geometry::SampleSet;
use crate::{Error, Result};

/// Bin edges around coarse samples: midpoints between neighbours, closed by
/// the ray's near and far bounds.
pub fn bin_edges(ts: &[f64], t_near: f64, t_far: f64) -> Vec<f64> {
    let mut edges = Vec::with_capacity(ts.len() + 1);
    edges.push(t_near.min(ts[0]));
    edges.extend(ts.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(t_far.max(ts[ts.len() - 1]));
    edges
}

/// Maps uniform variates through the inverse CDF of the piecewise-constant
/// density with mass `weights[i]` spread over `[edges[i], edges[i+1]]`.
pub fn inverse_cdf(weights: &[f64], edges: &[f64], us: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    us.into_iter()
        .map(|u| {
            let u = u * acc;
            // first bin whose upper cdf exceeds u, skipping empty bins
            let i = cdf[1..].partition_point(|&c| c <= u).min(weights.len() - 1);
            let frac = if weights[i] > 0.0 { ((u - cdf[i]) / weights[i]).clamp(0.0, 1.0) } else { 0.5 };
            edges[i] + frac * (edges[i + 1] - edges[i])
        })
        .collect()
}

fn check(weights: &[f64], coarse: &SampleSet) -> Result<()> {
    if weights.len() != coarse.len() {
        return Err(Error::Contract(format!("{} weights for {} samples", weights.len(), coarse.len())));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("fine sampling weights must be non-negative and sum to 1, got {total}")));
    }
    Ok(())
}

fn merge(coarse: &SampleSet, fine: Vec<f64>) -> Result<SampleSet> {
    let mut ts = coarse.ts.clone();
    ts.extend(fine);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    SampleSet::from_ts(coarse.ray, ts)
}

/// Draws `n_fine` extra distances from the coarse weights and merges them
/// with the coarse ones.
pub fn fine_sample(weights: &[f64], coarse: &SampleSet, n_fine: usize, rng: &mut impl Rng) -> Result<SampleSet> {
    check(weights, coarse)?;
    if n_fine == 0 {
        return Ok(coarse.clone());
    }
    let edges = bin_edges(&coarse.ts, coarse.ray.t_near, coarse.ray.t_far);
    let us: Vec<f64> = (0..n_fine).map(|_| rng.gen::<f64>()).collect();
    merge(coarse, inverse_cdf(weights, &edges, us))
}

/// As [`fine_sample`] with evenly spaced quantiles instead of random draws.
pub fn fine_sample_quantiles(weights: &[f64], coarse: &SampleSet, n_fine: usize) -> Result<SampleSet> {
    check(weights, coarse)?;
    if n_fine == 0 {
        return Ok(coarse.clone());
    }
    let edges = bin_edges(&coarse.ts, coarse.ray.t_near, coarse.ray.t_far);
    let us = (0..n_fine).map(|k| (k as f64 + 0.5) / n_fine as f64);
    merge(coarse, inverse_cdf(weights, &edges, us))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{sample_uniform, Ray, Vec3};

    fn coarse(m: usize) -> SampleSet {
        let ray = Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 2.0, 6.0).unwrap();
        sample_uniform(&ray, m, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn uniform_weights_give_uniform_draws() {
        let c = coarse(16);
        let edges = bin_edges(&c.ts, 2.0, 6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let us: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let mut draws = inverse_cdf(&[1.0 / 16.0; 16], &edges, us);
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let f = (t - 2.0) / 4.0;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "KS statistic {ks}");
    }

    #[test]
    fn delta_weights_stay_in_bin() {
        let c = coarse(8);
        let mut w = vec![0.0; 8];
        w[3] = 1.0;
        let edges = bin_edges(&c.ts, 2.0, 6.0);
        let merged = fine_sample(&w, &c, 64, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let extra: Vec<f64> = merged.ts.iter().copied().filter(|t| !c.ts.contains(t)).collect();
        assert!(!extra.is_empty());
        assert!(extra.iter().all(|&t| t >= edges[3] && t <= edges[4]));
    }

    #[test]
    fn merged_distances_increase() {
        let c = coarse(8);
        let w = [0.05, 0.05, 0.1, 0.4, 0.2, 0.1, 0.05, 0.05];
        let merged = fine_sample(&w, &c, 32, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(merged.ts.windows(2).all(|p| p[0] < p[1]));
        assert!(merged.len() > 8);
        let q = fine_sample_quantiles(&w, &c, 32).unwrap();
        assert!(q.ts.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn reproducible_for_a_seed() {
        let c = coarse(8);
        let w = [0.125; 8];
        let a = fine_sample(&w, &c, 16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = fine_sample(&w, &c, 16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_fine_returns_coarse() {
        let c = coarse(4);
        let out = fine_sample(&[0.25; 4], &c, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, c);
    }
}
