use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::BevGrid;

/// Order in which the multi-scale search features are aggregated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MfaDirection {
    /// Sparse shallow layers are propagated onto denser deep layers.
    Specific,
    /// Sparse deep layers are propagated onto denser shallow layers.
    Usual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_template: usize,
    pub n_search: usize,
    pub feat_dim: usize,
    pub ttm_layers: usize,
    pub heads: usize,
    pub gcn_radius: f64,
    pub gcn_layers: usize,
    pub gcn_neighbors: usize,
    /// Search points kept from the earlier layers, shallow to deep.
    pub mfa_samples: Vec<usize>,
    pub mfa_direction: MfaDirection,
    /// Feed-forward hidden width as a multiple of `feat_dim`.
    pub ffn_mult: usize,
    pub bev_grid: BevGrid,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_template: 512,
            n_search: 1024,
            feat_dim: 64,
            ttm_layers: 3,
            heads: 4,
            gcn_radius: 0.3,
            gcn_layers: 2,
            gcn_neighbors: 16,
            mfa_samples: vec![256, 512],
            mfa_direction: MfaDirection::Specific,
            ffn_mult: 2,
            bev_grid: BevGrid::new((-4.8, 4.8), (-4.8, 4.8), (-2.0, 2.0), 0.3).expect("default grid"),
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.feat_dim / self.heads
    }

    /// Width of the augmented per-point features: score, coordinates, features.
    pub fn bev_channels(&self) -> usize {
        1 + 3 + self.feat_dim
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_template == 0 || self.n_search == 0 || self.feat_dim == 0 {
            return fail("point counts and feat_dim must be positive".into());
        }
        if self.heads == 0 || self.feat_dim % self.heads != 0 {
            return fail(format!("feat_dim {} not divisible by {} heads", self.feat_dim, self.heads));
        }
        if self.ttm_layers == 0 || self.gcn_layers == 0 || self.gcn_neighbors == 0 || self.ffn_mult == 0 {
            return fail("ttm_layers, gcn_layers, gcn_neighbors and ffn_mult must be at least 1".into());
        }
        if !(self.gcn_radius > 0.0) || !(self.ln_eps > 0.0) {
            return fail("gcn_radius and ln_eps must be positive".into());
        }
        if self.mfa_samples.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("mfa_samples {:?} not strictly increasing", self.mfa_samples));
        }
        if self.mfa_samples.iter().any(|&s| s == 0 || s >= self.n_search) {
            return fail(format!("mfa_samples {:?} must lie in 1..{}", self.mfa_samples, self.n_search));
        }
        if self.mfa_samples.len() < self.ttm_layers - 1 {
            return fail(format!(
                "{} attention layers need {} mfa_samples, got {:?}",
                self.ttm_layers,
                self.ttm_layers - 1,
                self.mfa_samples
            ));
        }
        self.bev_grid.validate()
    }

    /// Search points handed to aggregation by each attention layer, first to last.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let k = self.ttm_layers - 1;
        let mut sizes: Vec<usize> = self.mfa_samples[self.mfa_samples.len() - k..].to_vec();
        sizes.push(self.n_search);
        if self.mfa_direction == MfaDirection::Usual {
            sizes.reverse();
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_schedule() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 16);
        assert_eq!(c.bev_channels(), 68);
        assert_eq!((c.bev_grid.nx, c.bev_grid.ny), (32, 32));
        assert_eq!(c.layer_sizes(), vec![256, 512, 1024]);
        let usual = ModelConfig {
            mfa_direction: MfaDirection::Usual,
            ..c.clone()
        };
        assert_eq!(usual.layer_sizes(), vec![1024, 512, 256]);
        let one = ModelConfig { ttm_layers: 1, ..c.clone() };
        assert_eq!(one.layer_sizes(), vec![1024]);
        let two = ModelConfig { ttm_layers: 2, ..c };
        assert_eq!(two.layer_sizes(), vec![512, 1024]);
    }

    #[test]
    fn invalid_configs() {
        let c = ModelConfig::default();
        assert!(ModelConfig { heads: 3, ..c.clone() }.validate().is_err());
        assert!(ModelConfig { mfa_samples: vec![512, 256], ..c.clone() }.validate().is_err());
        assert!(ModelConfig { mfa_samples: vec![256, 1024], ..c.clone() }.validate().is_err());
        assert!(ModelConfig { ttm_layers: 4, ..c.clone() }.validate().is_err());
        assert!(ModelConfig { ttm_layers: 0, ..c }.validate().is_err());
    }
}
