//! TD3 with an entropic-Wasserstein penalty between consecutive critics.
//!
//! The critic loss is `L_TD + λ_k · W_ε(Q̂_k, Q̂_{k−1})`, where both empirical
//! distributions are critic-1 values on the same probe batch: `Q̂_{k−1}` was
//! recorded with the parameters before the previous step, `Q̂_k` is the live
//! critic. `λ_k` follows [`LambdaSchedule`] and changes only at episode ends.

mod replay;
mod schedule;
mod td3;
mod train;

pub use replay::{concat_rows, Batch, ReplayBuffer, Transition};
pub use schedule::{moving_average_reward, LambdaSchedule};
pub use td3::{
    compute_targets, select_action, td_loss, wave_regularization_term, ActionMode, ActorMetrics, Agent,
    CriticMetrics, QSnapshot, RegTerm,
};
pub use train::{
    default_r_threshold, train, write_episode_csv, EpisodeLog, TrainOptions, TrainOutput, EPISODE_CSV_HEADER,
};

use thiserror::Error;

use crate::envs::EnvError;
use crate::nn::NnError;
use crate::sinkhorn::{OtError, SinkhornConfig};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ot(#[from] OtError),
}

/// TD3 hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Td3Config {
    pub gamma: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub policy_delay: usize,
    /// Standard deviation of target smoothing noise, in half action ranges.
    pub target_policy_noise: f64,
    /// Clip of the smoothing noise, in half action ranges.
    pub target_noise_clip: f64,
    /// Standard deviation of exploration noise, in half action ranges.
    pub exploration_noise: f64,
    pub warmup_steps: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub buffer_capacity: usize,
    pub hidden_dims: Vec<usize>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 256,
            tau: 0.005,
            policy_delay: 2,
            target_policy_noise: 0.2,
            target_noise_clip: 0.5,
            exploration_noise: 0.1,
            warmup_steps: 1000,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            buffer_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            hidden_dims: vec![256, 256, 256],
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Invalid(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 || self.policy_delay == 0 || self.buffer_capacity == 0 {
            return bad("batch_size, policy_delay and buffer_capacity must be at least 1".into());
        }
        for (name, v) in [
            ("target_policy_noise", self.target_policy_noise),
            ("target_noise_clip", self.target_noise_clip),
            ("exploration_noise", self.exploration_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return bad("hidden layer widths must be at least 1".into());
        }
        Ok(())
    }
}

/// Where the schedule's return threshold comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RThreshold {
    /// Random-policy mean plus a quarter of the gap to a per-task bound.
    Auto,
    Fixed(f64),
}

/// Regularizer settings. A run without one is plain TD3.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveConfig {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub alpha: f64,
    pub r_threshold: RThreshold,
    pub window: usize,
    pub probe_size: usize,
    pub sinkhorn: SinkhornConfig,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            lambda_max: LambdaSchedule::DEFAULT_LAMBDA_MAX,
            lambda_min: LambdaSchedule::DEFAULT_LAMBDA_MIN,
            alpha: LambdaSchedule::DEFAULT_ALPHA,
            r_threshold: RThreshold::Auto,
            window: LambdaSchedule::DEFAULT_WINDOW,
            probe_size: 64,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

impl WaveConfig {
    /// The regularizer machinery with λ pinned at zero.
    pub fn lambda_off() -> Self {
        Self {
            lambda_max: 0.0,
            lambda_min: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        LambdaSchedule::new(self.lambda_max, self.lambda_min, self.alpha, 0.0, self.window)?;
        if self.probe_size == 0 {
            return Err(AgentError::Invalid("probe_size must be at least 1".into()));
        }
        if !(self.sinkhorn.epsilon > 0.0) || self.sinkhorn.max_iter == 0 || !(self.sinkhorn.tol > 0.0) {
            return Err(AgentError::Invalid("sinkhorn needs epsilon > 0, max_iter ≥ 1, tol > 0".into()));
        }
        Ok(())
    }
}
