//! Proximal policy optimisation with small MLP policies, and independent
//! multi-agent training on the market game.

pub mod buffer;
pub mod marl;
pub mod mlp;
pub mod policy;
pub mod update;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;

pub use buffer::{gae_advantages, RolloutBuffer};
pub use marl::{retrain_single, train_marl, LearningCurve, MakerPolicies, PolicySet, Role, TrainingOutcome};
pub use mlp::Mlp;
pub use policy::{ActionTransform, GaussianPolicy, PolicyOutput, RunningNorm, CHECKPOINT_VERSION};
pub use update::{clipped_surrogate, ppo_update, Adam, UpdateStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PpoError {
    #[error("observation has dimension {got}, policy expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rollout does not end on a terminal step")]
    IncompleteEpisode,
    #[error("empty rollout buffer")]
    EmptyBuffer,
    #[error("loss or gradient is not finite")]
    NonFiniteLoss,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub episodes_per_update: usize,
    pub total_episodes: usize,
    pub hidden: Vec<usize>,
    /// Initial log standard deviation of every action head.
    pub init_log_std: f64,
    /// One parameter set for all makers, each contributing its own rollouts.
    pub shared_makers: bool,
    /// Divide rewards by a running standard deviation of returns.
    pub scale_rewards: bool,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            learning_rate: 3e-4,
            gae_lambda: 0.95,
            gamma: 1.0,
            epochs_per_update: 10,
            minibatch_size: 256,
            entropy_coef: 0.0,
            value_coef: 0.5,
            grad_clip: 0.5,
            episodes_per_update: 10,
            total_episodes: 1000,
            hidden: vec![64, 64],
            init_log_std: -1.5,
            shared_makers: true,
            scale_rewards: true,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.episodes_per_update == 0 || self.minibatch_size == 0 || self.epochs_per_update == 0 {
            return bad("episodes_per_update, minibatch_size and epochs_per_update must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Per-learner random stream derived from the training seed.
pub(crate) fn learner_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rescales rewards by the running standard deviation of discounted returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardScaler {
    stats: RunningNorm,
}

impl Default for RewardScaler {
    fn default() -> Self {
        Self { stats: RunningNorm::new(1) }
    }
}

impl RewardScaler {
    /// Feeds each trajectory's returns-to-go into the statistics and returns
    /// the divisor to apply.
    pub fn update(&mut self, trajectories: &[Vec<f64>], gamma: f64) -> f64 {
        for rewards in trajectories {
            let mut g = 0.0;
            for &r in rewards.iter().rev() {
                g = r + gamma * g;
                self.stats.observe(&[g]);
            }
        }
        let s = self.stats.std(0);
        if s.is_finite() && s > 1e-8 {
            s
        } else {
            1.0
        }
    }
}
