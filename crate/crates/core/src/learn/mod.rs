//! Policy learning: MLPs with manual backprop, a tanh-squashed Gaussian
//! policy, PPO and evaluation.

pub mod adam;
pub mod buffer;
pub mod checkpoint;
pub mod eval;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod train;

pub use checkpoint::Checkpoint;
pub use eval::{evaluate, EvalStats};
pub use policy::{ActorCritic, GaussianPolicy};
pub use train::{train, MetricsSink, TrainConfig, TrainedPolicy, Trainer, UpdateMetrics};
