//! History encoders, the design policy and the separable critic.

mod critic;
mod encoder;
mod layers;
mod params;
mod policy;

pub use critic::{CriticConfig, CriticNet, ThetaFeatures};
pub use encoder::{EncoderConfig, FeatureScaling, History, HistoryBatch, HistoryEncoder, PoolingKind};
pub use layers::{Activation, Linear, Lstm, Mlp, SelfAttention};
pub use params::{BoundParams, ParamId, ParamStore};
pub use policy::{DesignTransform, PolicyConfig, PolicyNet};
