//! Gaussian MLP policy, value baseline and a PPO learner.

pub mod checkpoint;
pub mod gaussian;
pub mod mlp;
pub mod ppo;
pub mod rollout;

pub use checkpoint::Checkpoint;
pub use gaussian::{clip_to_ball, GaussianPolicy, SampledAction, ValueNet, ACTION_DIM};
pub use mlp::{Activation, Mlp};
pub use ppo::{loss, loss_and_grad, ppo_update, Adam, LossStats, Minibatch, PpoConfig, UpdateStats};
pub use rollout::{gae_advantages, RewardScaler, RolloutBatch};
