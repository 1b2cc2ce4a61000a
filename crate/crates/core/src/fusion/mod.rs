//! The learnable quality head: optional attention pooling of token grids,
//! concatenation of all sources, a two-layer MLP per index, mean pooling to
//! a video score, and correlation-loss training with Adam.

pub mod adam;
pub mod checkpoint;
pub mod layout;
pub mod loss;
pub mod mhsa;
pub mod mlp;
pub mod model;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use layout::{concat_features, ConcatLayout, LayoutEntry};
pub use loss::{plcc_loss, plcc_loss_grad, LossKind, PLCC_EPS};
pub use mhsa::MhsaPool;
pub use mlp::{Activation, MlpHead};
pub use model::{pool_scores, FusionModel, InputNorm, VideoInput};
pub use train::{train, EpochStats, HeadConfig, Sample, TrainConfig, TrainOutcome};
