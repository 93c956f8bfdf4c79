use crate::params::{ParamGroup, ParamStore};
use crate::{Error, Result};

/// Adam with bias correction. Moments are kept per parameter in store order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `lr` maps each parameter's group to its learning rate.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Vec<f32>], lr: impl Fn(ParamGroup) -> f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Contract("optimizer state does not match the parameter set".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.len() != m.len() {
                return Err(Error::Contract(format!("gradient size mismatch for {}", p.name)));
            }
            let rate = lr(p.group);
            for (((x, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = rate * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *x = (*x as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(vals: &[f32]) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("x", ParamGroup::RgbHead, Tensor::new(vec![vals.len()], vals.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store(&[1.0, 1.0, 1.0]);
        let mut opt = Adam::new(&s, 0.9, 0.999, 1e-8);
        opt.step(&mut s, &[vec![0.3, -2.0, 1e-3]], |_| 0.01).unwrap();
        let got = s.get("x").unwrap().value.data().to_vec();
        for (x, sign) in got.iter().zip([1.0f32, -1.0, 1.0]) {
            assert!(((1.0 - x) - 0.01 * sign).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut s = store(&[0.25, -3.0]);
        let before = s.clone();
        let mut opt = Adam::new(&s, 0.9, 0.999, 1e-8);
        for _ in 0..5 {
            opt.step(&mut s, &[vec![0.0, 0.0]], |_| 0.1).unwrap();
        }
        assert_eq!(s, before);
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut s = store(&[1.0]);
        let mut opt = Adam::new(&s, 0.9, 0.999, 1e-8);
        let mut hit = None;
        for i in 0..100 {
            let x = s.get("x").unwrap().value.data()[0];
            if x.abs() < 0.1 {
                hit = Some(i);
                break;
            }
            opt.step(&mut s, &[vec![2.0 * x]], |_| 0.1).unwrap();
        }
        assert!(hit.is_some());
    }

    #[test]
    fn groups_use_their_own_rate() {
        let mut s = ParamStore::new();
        s.insert("e", ParamGroup::Encoder, Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        s.insert("h", ParamGroup::RgbHead, Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        let mut opt = Adam::new(&s, 0.9, 0.999, 1e-8);
        opt.step(&mut s, &[vec![1.0], vec![1.0]], |g| if g == ParamGroup::Encoder { 0.1 } else { 0.01 })
            .unwrap();
        assert!((s.get("e").unwrap().value.data()[0] + 0.1).abs() < 1e-6);
        assert!((s.get("h").unwrap().value.data()[0] + 0.01).abs() < 1e-6);
    }
}
