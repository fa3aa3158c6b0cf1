use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::instance::{GeneratorConfig, ProblemInstance};
use crate::neural::{ModelConfig, QNetwork};
use crate::training::{ExpertDataset, MetricsRow, TrainConfig, Trainer};

use super::HarnessError;

/// File stem for the instance drawn from `seed`.
pub fn instance_name(seed: u64) -> String {
    format!("inst-{seed:06}")
}

pub fn generate_corpus(cfg: &GeneratorConfig, seeds: Range<u64>) -> Result<Vec<(String, Arc<ProblemInstance>)>, HarnessError> {
    seeds
        .map(|s| Ok((instance_name(s), Arc::new(cfg.generate(s)?))))
        .collect()
}

/// The train-small experiment: corpora, expert budget, model and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_instances: u64,
    pub test_instances: u64,
    /// Test seeds start here so the corpora never overlap.
    pub test_seed_offset: u64,
    pub expert_budget_secs: f64,
    /// Ensemble members are the last this-many snapshots.
    pub ensemble_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generator: GeneratorConfig::with_tasks(8, 10),
            model: ModelConfig::for_team(2, 2),
            train: TrainConfig {
                lr_imitation: 1e-4,
                lr_dqn: 1e-5,
                snapshot_every: Some(5000),
                ..TrainConfig::default()
            },
            train_instances: 500,
            test_instances: 200,
            test_seed_offset: 1_000_000,
            expert_budget_secs: 120.0,
            ensemble_size: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn train_seeds(&self) -> Range<u64> {
        0..self.train_instances
    }

    pub fn test_seeds(&self) -> Range<u64> {
        self.test_seed_offset..self.test_seed_offset + self.test_instances
    }

    /// Same experiment with model and training seeds set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.model.init_seed = seed;
        c.train.seed = seed;
        c
    }
}

/// Output of one training run.
pub struct TrainedRun {
    pub net: QNetwork,
    /// Snapshots from distinct training steps, oldest first.
    pub ensemble: Vec<QNetwork>,
    pub ensemble_steps: Vec<u64>,
    pub metrics: Vec<MetricsRow>,
}

/// Imitation on `expert`, then the DQN phase on `problems` with the same
/// expert data for the supervised term.
pub fn train_run(
    cfg: &ExperimentConfig,
    problems: &[Arc<ProblemInstance>],
    expert: &ExpertDataset,
) -> Result<TrainedRun, HarnessError> {
    let net = QNetwork::new(cfg.model.clone())?;
    let mut trainer = Trainer::new(net, cfg.train.clone())?;
    trainer.train_imitation(expert, cfg.train.imitation_steps)?;
    if cfg.train.dqn_steps > 0 {
        trainer.train_dqn(problems, cfg.train.dqn_steps, Some(expert))?;
    }
    let mut snaps = std::mem::take(&mut trainer.snapshots);
    if snaps.last().map(|(s, _)| *s) != Some(trainer.step) {
        snaps.push((trainer.step, trainer.net.clone()));
    }
    let keep = snaps.len().saturating_sub(cfg.ensemble_size.max(1));
    let members: Vec<(u64, QNetwork)> = snaps.split_off(keep);
    Ok(TrainedRun {
        net: trainer.net,
        ensemble_steps: members.iter().map(|(s, _)| *s).collect(),
        ensemble: members.into_iter().map(|(_, n)| n).collect(),
        metrics: trainer.metrics,
    })
}
