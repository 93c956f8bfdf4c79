use std::f64::consts::PI;

/// Fourier feature encoding with `n_freqs` octaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PosEncoding {
    pub n_freqs: usize,
}

impl PosEncoding {
    pub const fn new(n_freqs: usize) -> Self {
        Self { n_freqs }
    }

    pub const fn output_dim(&self, in_dim: usize) -> usize {
        in_dim * (2 * self.n_freqs + 1)
    }

    /// Layout: the raw input, then `sin(2ᵏπx)` for k = 0..L (channels
    /// innermost), then the matching cosines.
    pub fn encode_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(x);
        for k in 0..self.n_freqs {
            let f = (1u64 << k) as f64 * PI;
            out.extend(x.iter().map(|v| (f * v).sin()));
        }
        for k in 0..self.n_freqs {
            let f = (1u64 << k) as f64 * PI;
            out.extend(x.iter().map(|v| (f * v).cos()));
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(x.len()));
        self.encode_into(x, &mut out);
        out
    }
}

pub fn positional_encode(x: &[f64], n_freqs: usize) -> Vec<f64> {
    PosEncoding::new(n_freqs).encode(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_frequencies_give_63_dims() {
        assert_eq!(PosEncoding::new(10).output_dim(3), 63);
        assert_eq!(positional_encode(&[0.1, 0.2, 0.3], 10).len(), 63);
    }

    #[test]
    fn zero_input() {
        for l in [0, 1, 4, 10] {
            let e = positional_encode(&[0.0; 3], l);
            let split = 3 + 3 * l;
            assert!(e[..split].iter().all(|&v| v == 0.0));
            assert!(e[split..].iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn periodic_components_bounded() {
        let e = positional_encode(&[123.456, -7.0, 0.333], 10);
        assert!(e[3..].iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
