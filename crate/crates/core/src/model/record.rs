use serde::{Deserialize, Serialize};

/// Attention maps of one ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub n_samples: usize,
    pub n_views: usize,
    pub dim: usize,
    pub heads: usize,
    /// Per view block, `M x N x dim`, normalized over the view axis.
    pub view_attn: Vec<Vec<f64>>,
    /// `M x N` view validity.
    pub view_mask: Vec<bool>,
    /// Per ray block, `H x M x M`, rows normalized over keys.
    pub ray_attn: Vec<Vec<f64>>,
}

impl AttentionRecord {
    pub fn view_weight(&self, block: usize, point: usize, view: usize, channel: usize) -> f64 {
        self.view_attn[block][(point * self.n_views + view) * self.dim + channel]
    }

    pub fn ray_weight(&self, block: usize, head: usize, query: usize, key: usize) -> f64 {
        let m = self.n_samples;
        self.ray_attn[block][(head * m + query) * m + key]
    }

    pub fn is_valid(&self, point: usize, view: usize) -> bool {
        self.view_mask[point * self.n_views + view]
    }
}
