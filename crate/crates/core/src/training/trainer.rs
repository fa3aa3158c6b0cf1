use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ScheduleState};
use crate::instance::ProblemInstance;
use crate::neural::QNetwork;
use crate::policy::{argmax_action, greedy_rollout};

use super::adam::Adam;
use super::expert::ExpertDataset;
use super::loss::{dqn_loss, imitation_loss, DqnSample, ImitationSample, LossParts, NextState};
use super::replay::ReplayBuffer;
use super::{DqnMode, TrainConfig, TrainError};

/// One metrics line: losses averaged over the logging interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss_ex: f64,
    pub loss_alt: f64,
    pub loss_l2: f64,
    pub loss_dqn: f64,
    pub epsilon: f64,
    pub solve_rate_probe: Option<f64>,
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Default)]
struct Interval {
    sum: LossParts,
    steps: u64,
}

impl Interval {
    fn add(&mut self, p: &LossParts) {
        self.sum.ex += p.ex;
        self.sum.alt += p.alt;
        self.sum.l2 += p.l2;
        self.sum.dqn += p.dqn;
        self.steps += 1;
    }
}

/// Owns the online network, optimizer state, RNG and metrics of one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub net: QNetwork,
    adam: Adam,
    rng: ChaCha8Rng,
    /// Gradient steps taken across all phases.
    pub step: u64,
    pub metrics: Vec<MetricsRow>,
    /// `(step, parameters)` captured every `snapshot_every` steps.
    pub snapshots: Vec<(u64, QNetwork)>,
    /// Self-play transitions, kept across DQN calls.
    pub replay: ReplayBuffer<DqnSample>,
    /// Lagged copy valuing bootstrap targets; set by the first DQN call.
    pub target: Option<QNetwork>,
    /// DQN step counts at which the target was refreshed.
    pub target_syncs: Vec<u64>,
    probe: Vec<Arc<ProblemInstance>>,
    interval: Interval,
}

impl Trainer {
    pub fn new(net: QNetwork, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(Trainer {
            adam: Adam::new(&net.params),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            net,
            step: 0,
            metrics: Vec::new(),
            snapshots: Vec::new(),
            replay: ReplayBuffer::new(config.replay_capacity),
            target: None,
            target_syncs: Vec::new(),
            probe: Vec::new(),
            interval: Interval::default(),
            config,
        })
    }

    /// Problems whose greedy solve rate is logged every `probe_every` steps.
    pub fn with_probe(mut self, probe: Vec<Arc<ProblemInstance>>) -> Self {
        self.probe = probe;
        self
    }

    pub fn probe_solve_rate(&self) -> Option<f64> {
        if self.probe.is_empty() {
            return None;
        }
        let solved = self.probe.iter().filter(|p| greedy_rollout(&self.net, p).solved).count();
        Some(solved as f64 / self.probe.len() as f64)
    }

    /// Flattens expert trajectories into regression samples.
    pub fn prepare_expert(&self, data: &ExpertDataset) -> Result<Vec<ImitationSample>, TrainError> {
        let mut out = Vec::with_capacity(data.num_steps());
        for traj in &data.trajectories {
            let returns = traj.returns(self.config.gamma);
            for (step, target) in traj.steps.iter().zip(returns) {
                self.net.check_state(&step.state)?;
                out.push(ImitationSample {
                    graph: self.net.graph(&step.state),
                    candidates: step.state.unscheduled().collect(),
                    action: step.action,
                    target,
                });
            }
        }
        Ok(out)
    }

    fn finish_step(&mut self, parts: LossParts, epsilon: f64) {
        self.step += 1;
        self.interval.add(&parts);
        let probe_due = self.config.probe_every.is_some_and(|k| self.step.is_multiple_of(k));
        if self.step.is_multiple_of(self.config.log_every) || probe_due {
            let n = self.interval.steps.max(1) as f64;
            let s = self.interval.sum;
            let solve_rate_probe = if probe_due { self.probe_solve_rate() } else { None };
            self.metrics.push(MetricsRow {
                step: self.step,
                loss_ex: s.ex / n,
                loss_alt: s.alt / n,
                loss_l2: s.l2 / n,
                loss_dqn: s.dqn / n,
                epsilon,
                solve_rate_probe,
            });
            self.interval = Interval::default();
        }
        if self.config.snapshot_every.is_some_and(|k| self.step.is_multiple_of(k)) {
            self.snapshots.push((self.step, self.net.clone()));
        }
    }

    fn check_finite(&self, parts: &LossParts) -> Result<(), TrainError> {
        if parts.total.is_finite() {
            Ok(())
        } else {
            Err(TrainError::NonFinite {
                step: self.step,
                what: "loss".into(),
            })
        }
    }

    fn sample_expert<'a>(&mut self, samples: &'a [ImitationSample]) -> Vec<&'a ImitationSample> {
        (0..self.config.batch_size)
            .map(|_| &samples[self.rng.gen_range(0..samples.len())])
            .collect()
    }

    /// `steps` Adam updates on the supervised loss over uniformly drawn
    /// expert decisions.
    pub fn train_imitation(&mut self, data: &ExpertDataset, steps: u64) -> Result<(), TrainError> {
        let samples = self.prepare_expert(data)?;
        if samples.is_empty() {
            return Err(TrainError::Empty("expert dataset"));
        }
        for _ in 0..steps {
            let batch = self.sample_expert(&samples);
            let (parts, grad) = imitation_loss(&self.net, &batch, &self.config);
            self.check_finite(&parts)?;
            self.adam.step(&mut self.net.params, &grad, self.config.lr_imitation)?;
            self.finish_step(parts, 0.0);
        }
        Ok(())
    }

    /// Epsilon-greedy choice over every (unscheduled task, robot) pair.
    fn explore(&mut self, state: &ScheduleState, sample: &DqnSample) -> Action {
        if self.rng.gen::<f64>() < self.config.epsilon {
            let task = *sample.candidates.choose(&mut self.rng).expect("live state");
            let robot = self.rng.gen_range(0..state.problem().num_robots);
            return Action::new(task, robot);
        }
        let fwd = self.net.forward(
            &crate::neural::GraphBatch::new(&[&sample.graph]),
            &sample
                .candidates
                .iter()
                .map(|&task| crate::neural::Query { graph: 0, task })
                .collect::<Vec<_>>(),
        );
        let rows: Vec<(usize, Vec<f64>)> = sample
            .candidates
            .iter()
            .zip(fwd.q.rows())
            .map(|(&t, r)| (t, r.to_vec()))
            .collect();
        argmax_action(&rows).expect("live state")
    }

    /// Interleaves epsilon-greedy self-play (one environment step per
    /// update) with double-Q updates. In combined mode each update also
    /// carries the supervised loss on `expert`.
    pub fn train_dqn(
        &mut self,
        problems: &[Arc<ProblemInstance>],
        steps: u64,
        expert: Option<&ExpertDataset>,
    ) -> Result<(), TrainError> {
        if problems.is_empty() {
            return Err(TrainError::Empty("problem set"));
        }
        for p in problems {
            self.net.check_state(&ScheduleState::new(p.clone()))?;
        }
        let expert_samples = match (self.config.dqn_mode, expert) {
            (DqnMode::Combined, Some(data)) => {
                let s = self.prepare_expert(data)?;
                if s.is_empty() {
                    return Err(TrainError::Empty("expert dataset"));
                }
                Some(s)
            }
            (DqnMode::Combined, None) => return Err(TrainError::Empty("expert dataset")),
            (DqnMode::DqnOnly, _) => None,
        };
        let mut target = self.target.take().unwrap_or_else(|| self.net.clone());
        let mut state: Option<ScheduleState> = None;
        let epsilon = self.config.epsilon;

        for k in 0..steps {
            let current = match state.take() {
                Some(s) if !s.is_terminal() => s,
                _ => {
                    let p = problems[self.rng.gen_range(0..problems.len())].clone();
                    ScheduleState::new(p)
                }
            };
            let mut sample = DqnSample {
                graph: self.net.graph(&current),
                candidates: current.unscheduled().collect(),
                action: Action::new(0, 0),
                reward: 0.0,
                next: None,
            };
            let action = self.explore(&current, &sample);
            let out = current.apply(action, &self.config.reward)?;
            sample.action = action;
            sample.reward = out.reward;
            if !out.terminal {
                sample.next = Some(NextState {
                    graph: self.net.graph(&out.next),
                    candidates: out.next.unscheduled().collect(),
                });
            }
            self.replay.push(sample);
            state = Some(out.next);

            let batch = self.replay.sample(&mut self.rng, self.config.batch_size);
            let (dqn, mut grad) = dqn_loss(&self.net, &target, &batch, &self.config);
            drop(batch);
            let mut parts = LossParts {
                dqn,
                total: self.config.lambda3 * dqn,
                ..LossParts::default()
            };
            if let Some(samples) = &expert_samples {
                grad.tensors_mut()
                    .into_iter()
                    .for_each(|(_, g)| *g *= self.config.lambda3);
                let eb = self.sample_expert(samples);
                let (sup, sup_grad) = imitation_loss(&self.net, &eb, &self.config);
                grad.add_scaled(1.0, &sup_grad);
                parts = LossParts {
                    dqn,
                    total: sup.total + self.config.lambda3 * dqn,
                    ..sup
                };
            } else {
                parts.total = dqn;
            }
            self.check_finite(&parts)?;
            self.adam.step(&mut self.net.params, &grad, self.config.lr_dqn)?;
            self.finish_step(parts, epsilon);
            if (k + 1) % self.config.target_update_steps == 0 {
                target = self.net.clone();
                self.target_syncs.push(k + 1);
            }
        }
        self.target = Some(target);
        Ok(())
    }
}

/// Fresh trainer running only the imitation phase.
pub fn train_imitation(
    net: QNetwork,
    data: &ExpertDataset,
    config: &TrainConfig,
) -> Result<(QNetwork, Vec<MetricsRow>), TrainError> {
    let mut t = Trainer::new(net, config.clone())?;
    t.train_imitation(data, config.imitation_steps)?;
    Ok((t.net, t.metrics))
}

/// Fresh trainer running only the DQN phase.
pub fn train_dqn(
    net: QNetwork,
    problems: &[Arc<ProblemInstance>],
    config: &TrainConfig,
    expert: Option<&ExpertDataset>,
) -> Result<(QNetwork, Vec<MetricsRow>), TrainError> {
    let mut t = Trainer::new(net, config.clone())?;
    t.train_dqn(problems, config.dqn_steps, expert)?;
    Ok((t.net, t.metrics))
}
