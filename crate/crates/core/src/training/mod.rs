//! Imitation learning and double deep Q-learning for the scheduling network.

mod adam;
mod expert;
mod gradcheck;
mod loss;
mod replay;
mod trainer;

pub use adam::Adam;
pub use gradcheck::{gradient_check, GradCheckEntry};
pub use expert::{ExpertDataset, ExpertStep, ExpertTrajectory};
pub use loss::{dqn_loss, dqn_targets, imitation_loss, nstep_return, supervised_loss, DqnSample, ImitationSample, LossParts, NextState};
pub use replay::ReplayBuffer;
pub use trainer::{train_dqn, train_imitation, write_metrics_csv, MetricsRow, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, RewardConfig};
use crate::neural::ModelError;

/// What the DQN phase minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DqnMode {
    /// Supervised loss on expert data plus `lambda3` times the DQN loss.
    #[default]
    Combined,
    /// DQN loss alone, for problems without expert data.
    DqnOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr_imitation: f64,
    pub lr_dqn: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub epsilon: f64,
    pub target_update_steps: u64,
    pub q_offset: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub imitation_steps: u64,
    pub dqn_steps: u64,
    pub dqn_mode: DqnMode,
    pub seed: u64,
    /// Metrics rows average this many steps.
    pub log_every: u64,
    /// Greedy solve rate on the probe set every this many steps.
    pub probe_every: Option<u64>,
    /// Keep a parameter snapshot every this many steps.
    pub snapshot_every: Option<u64>,
    pub reward: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.95,
            lr_imitation: 1e-5,
            lr_dqn: 1e-6,
            lambda1: 0.8,
            lambda2: 0.1,
            lambda3: 2.0,
            epsilon: 0.05,
            target_update_steps: 5000,
            q_offset: 1.0,
            batch_size: 8,
            replay_capacity: 10_000,
            imitation_steps: 50_000,
            dqn_steps: 20_000,
            dqn_mode: DqnMode::Combined,
            seed: 0,
            log_every: 100,
            probe_every: None,
            snapshot_every: None,
            reward: RewardConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.lr_imitation > 0.0 && self.lr_dqn > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.q_offset > 0.0) {
            return bad("q_offset must be positive");
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be a non-negative number")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.target_update_steps == 0 || self.log_every == 0 {
            return bad("batch size, replay capacity, target update and log intervals must be positive");
        }
        if self.probe_every == Some(0) || self.snapshot_every == Some(0) {
            return bad("probe and snapshot intervals must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: String },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("expert data: {0}")]
    Expert(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("metrics output: {0}")]
    Csv(#[from] csv::Error),
}
