use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// One graph-convolution layer: the message is split into a feature part
/// (absent on the first layer) and a relative-coordinate part.
#[derive(Clone, Copy, Debug)]
pub struct GcnIds {
    pub msg_feat: Option<ParamId>,
    pub msg_coord: ParamId,
    pub msg_bias: ParamId,
    pub out: LinearIds,
}

#[derive(Clone, Copy, Debug)]
pub struct TtmIds {
    pub pe1: LinearIds,
    pub pe2: LinearIds,
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub norm1: NormIds,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
    pub norm2: NormIds,
}

/// Trainable weights plus the handles that locate each block in the store.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub store: ParamStore,
    pub gcn: Vec<GcnIds>,
    pub ttm: Vec<TtmIds>,
    /// One combine projection per aggregation stage (`[2D, D]`).
    pub mfa: Vec<LinearIds>,
    pub seg1: LinearIds,
    pub seg2: LinearIds,
    pub trunk: Vec<ConvIds>,
    pub heat: ConvIds,
    pub offset: ConvIds,
    pub zmap: ConvIds,
}

pub const TRUNK_LAYERS: usize = 3;

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (3.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.store.add(name, Tensor::new(shape, data).expect("parameter shape"))
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> LinearIds {
        LinearIds {
            w: self.uniform(format!("{name}.w"), &[d_in, d_out], d_in),
            b: self.zeros(format!("{name}.b"), &[d_out]),
        }
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> ConvIds {
        ConvIds {
            w: self.uniform(format!("{name}.w"), &[c_out, c_in, k, k], c_in * k * k),
            b: self.zeros(format!("{name}.b"), &[c_out]),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.store.add(format!("{name}.gain"), Tensor::ones(&[d])),
            bias: self.zeros(format!("{name}.bias"), &[d]),
        }
    }
}

impl ModelParams {
    /// Fresh weights drawn from a seeded uniform fan-in initialization.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.feat_dim;
        let mut b = Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let gcn = (0..cfg.gcn_layers)
            .map(|l| {
                let msg_feat = (l > 0).then(|| b.uniform(format!("gcn{l}.msg_feat"), &[d, d], d + 3));
                let fan = if l > 0 { d + 3 } else { 3 };
                GcnIds {
                    msg_feat,
                    msg_coord: b.uniform(format!("gcn{l}.msg_coord"), &[3, d], fan),
                    msg_bias: b.zeros(format!("gcn{l}.msg_bias"), &[d]),
                    out: b.linear(&format!("gcn{l}.out"), d, d),
                }
            })
            .collect();
        let hidden = cfg.ffn_mult * d;
        let ttm = (0..cfg.ttm_layers)
            .map(|l| {
                let n = |s: &str| format!("ttm{l}.{s}");
                TtmIds {
                    pe1: b.linear(&n("pe1"), 3, d),
                    pe2: b.linear(&n("pe2"), d, d),
                    q: b.linear(&n("q"), d, d),
                    k: b.linear(&n("k"), d, d),
                    v: b.linear(&n("v"), d, d),
                    o: b.linear(&n("o"), d, d),
                    norm1: b.norm(&n("norm1"), d),
                    ff1: b.linear(&n("ff1"), d, hidden),
                    ff2: b.linear(&n("ff2"), hidden, d),
                    norm2: b.norm(&n("norm2"), d),
                }
            })
            .collect();
        let mfa = (1..cfg.ttm_layers).map(|s| b.linear(&format!("mfa{s}"), 2 * d, d)).collect();
        let seg1 = b.linear("seg1", d, d);
        let seg2 = b.linear("seg2", d, 1);
        let c = cfg.bev_channels();
        let trunk = (0..TRUNK_LAYERS)
            .map(|l| b.conv(&format!("trunk{l}"), if l == 0 { c } else { d }, d, 3))
            .collect();
        let heat = b.conv("heat", d, 1, 1);
        let offset = b.conv("offset", d, 3, 1);
        let zmap = b.conv("zmap", d, 1, 1);
        Ok(ModelParams {
            store: b.store,
            gcn,
            ttm,
            mfa,
            seg1,
            seg2,
            trunk,
            heat,
            offset,
            zmap,
        })
    }

    /// Rebuilds the layout for `cfg` around a loaded store, checking every shape.
    pub fn from_store(cfg: &ModelConfig, store: ParamStore) -> Result<Self> {
        let mut params = ModelParams::init(cfg, 0)?;
        if store.len() != params.store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, config expects {}",
                store.len(),
                params.store.len()
            )));
        }
        for (expected, got) in params.store.iter().zip(store.iter()) {
            if expected.name != got.name || expected.value.shape() != got.value.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor `{}` {:?} does not match `{}` {:?}",
                    got.name,
                    got.value.shape(),
                    expected.name,
                    expected.value.shape()
                )));
            }
        }
        params.store = store;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_checked() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg, 3).unwrap();
        let b = ModelParams::init(&cfg, 3).unwrap();
        assert!(a.store.iter().zip(b.store.iter()).all(|(x, y)| x.value == y.value));
        assert!(a.store.is_finite());
        assert_eq!(a.mfa.len(), 2);
        assert!(a.gcn[0].msg_feat.is_none() && a.gcn[1].msg_feat.is_some());
        let other = ModelConfig { feat_dim: 32, ..cfg.clone() };
        assert!(ModelParams::from_store(&other, a.store.clone()).is_err());
        assert!(ModelParams::from_store(&cfg, a.store).is_ok());
    }
}
