use rand::Rng;

use super::{Ray, Vec3};
use crate::{Error, Result};

/// Marching distances along a ray and the world points they land on.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub ray: Ray,
    pub ts: Vec<f64>,
    pub points: Vec<Vec3>,
}

impl SampleSet {
    pub fn from_ts(ray: Ray, ts: Vec<f64>) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::Contract("sample set needs at least one distance".into()));
        }
        if ts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Contract("sample distances must be strictly increasing".into()));
        }
        let points = ts.iter().map(|&t| ray.at(t)).collect();
        Ok(Self { ray, ts, points })
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }
}

/// `count` equal-width bins over `[t_near, t_far]`: bin centers when
/// `stratified` is false, one uniform draw per bin otherwise.
pub fn sample_uniform(ray: &Ray, count: usize, stratified: bool, rng: &mut impl Rng) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::Contract("sample count must be at least 1".into()));
    }
    let width = (ray.t_far - ray.t_near) / count as f64;
    let ts = (0..count)
        .map(|i| {
            let offset = if stratified { rng.gen::<f64>() } else { 0.5 };
            ray.t_near + (i as f64 + offset) * width
        })
        .collect();
    SampleSet::from_ts(*ray, ts)
}
