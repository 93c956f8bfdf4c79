use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainConfig;
use crate::geometry::Camera;
use crate::{Error, Result};

/// `candidates` sorted by the angle between their optical axis and the
/// target's, nearest first (ties by index). The target itself is skipped.
pub fn rank_by_angle(cameras: &[Camera], target: usize, candidates: &[usize]) -> Vec<usize> {
    let f = cameras[target].forward();
    let mut ranked: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&v| v != target)
        .map(|&v| (cameras[v].forward().dot(f).clamp(-1.0, 1.0).acos(), v))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().map(|(_, v)| v).collect()
}

/// The `n` views nearest to `target` among `candidates`.
pub fn nearest_sources(cameras: &[Camera], target: usize, candidates: &[usize], n: usize) -> Vec<usize> {
    let mut r = rank_by_angle(cameras, target, candidates);
    r.truncate(n);
    r
}

/// Draws a target from `views`, then `N ~ U{n_views_range}` sources out of
/// the `⌈kN⌉` views nearest to it, `k ~ U[k_range]`.
pub fn sample_source_target(
    cameras: &[Camera],
    views: &[usize],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(usize, Vec<usize>)> {
    if views.len() < 2 {
        return Err(Error::Contract(format!("need at least 2 training views, got {}", views.len())));
    }
    let target = views[rng.gen_range(0..views.len())];
    let [lo, hi] = cfg.n_views_range;
    let mut n = rng.gen_range(lo..=hi);
    let k = if cfg.k_range[0] < cfg.k_range[1] {
        rng.gen_range(cfg.k_range[0]..=cfg.k_range[1])
    } else {
        cfg.k_range[0]
    };
    let ranked = rank_by_angle(cameras, target, views);
    let mut pool = ((k * n as f64).ceil() as usize).max(n);
    if pool > ranked.len() {
        pool = ranked.len();
        if n > pool {
            log::debug!("only {pool} source views available for {n} requested; using all of them");
            n = pool;
        }
    }
    let mut sources: Vec<usize> = ranked[..pool].choose_multiple(rng, n).copied().collect();
    sources.shuffle(rng);
    Ok((target, sources))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::RingConfig;
    use crate::geometry::Vec3;

    fn ring(n: usize) -> Vec<Camera> {
        RingConfig::new(n, 8, 8).cameras(Vec3::ZERO).unwrap()
    }

    #[test]
    fn target_is_never_a_source() {
        let cams = ring(12);
        let views: Vec<usize> = (0..12).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let (t, s) = sample_source_target(&cams, &views, &TrainConfig::desk(), &mut rng).unwrap();
            assert!(!s.contains(&t));
            let mut d = s.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), s.len());
        }
    }

    #[test]
    fn unit_pool_takes_the_nearest_views() {
        let cams = ring(12);
        let views: Vec<usize> = (0..12).collect();
        let cfg = TrainConfig {
            k_range: [1.0, 1.0],
            n_views_range: [2, 2],
            ..TrainConfig::desk()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (t, mut s) = sample_source_target(&cams, &views, &cfg, &mut rng).unwrap();
            s.sort();
            let mut expect = vec![(t + 1) % 12, (t + 11) % 12];
            expect.sort();
            assert_eq!(s, expect);
        }
    }

    #[test]
    fn source_counts_are_uniform() {
        let cams = ring(12);
        let views: Vec<usize> = (0..12).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            let (_, s) = sample_source_target(&cams, &views, &TrainConfig::desk(), &mut rng).unwrap();
            counts[s.len()] += 1;
        }
        for n in 2..=4 {
            let f = counts[n] as f64 / draws as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "N={n}: {f}");
        }
    }

    #[test]
    fn small_pool_uses_everything() {
        let cams = ring(3);
        let views = [0, 1, 2];
        let cfg = TrainConfig {
            n_views_range: [4, 4],
            ..TrainConfig::desk()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, s) = sample_source_target(&cams, &views, &cfg, &mut rng).unwrap();
        assert_eq!(s.len(), 2);
        assert!(!s.contains(&t));
    }

    #[test]
    fn ranking_is_by_axis_angle() {
        let cams = ring(8);
        let all: Vec<usize> = (0..8).collect();
        assert_eq!(rank_by_angle(&cams, 0, &all)[..2], [1, 7]);
        assert_eq!(*rank_by_angle(&cams, 0, &all).last().unwrap(), 4);
    }
}
