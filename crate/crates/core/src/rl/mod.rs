//! On-policy actor-critic agents (PPO and A2C) with manual backpropagation.

pub mod algo;
pub mod checkpoint;
pub mod nn;
pub mod policy;
pub mod train;

pub use checkpoint::Checkpoint;
pub use algo::{Adam, Algo, RolloutBuffer, TrainConfig, UpdateStats};
pub use policy::{sample_action, ActorCritic, AnyPolicy, ContextPolicyNet, PolicyNet};
pub use train::{evaluate, init_network, train, ContextSpec, EpisodeLog, NetPolicy, TrainOutcome};
