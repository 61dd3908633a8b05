//! The one-stream network.
//!
//! Each cloud is encoded by a small graph convolution, the template and search
//! rows are concatenated and passed through a stack of joint attention blocks,
//! search features from several depths are fused by feature propagation, and a
//! segmentation-augmented BEV head regresses the box.

mod config;
mod forward;
mod params;

pub use config::{MfaDirection, ModelConfig};
pub use forward::{
    augment_features, predict, AttentionDecomposition, ForwardOptions, HeadOutputs, ModelOutput, Net, OneStream,
    SearchLayer,
};
pub use params::{ConvIds, GcnIds, LinearIds, ModelParams, NormIds, TtmIds, TRUNK_LAYERS};
