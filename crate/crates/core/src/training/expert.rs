use std::collections::HashMap;
use std::sync::Arc;

use crate::baselines::{exact_solve, Budget, SolveResult};
use crate::env::{Action, RewardConfig, ScheduleState};
use crate::instance::ProblemInstance;
use crate::trajectory::{episodes, TransitionRecord};

use super::loss::nstep_return;
use super::TrainError;

/// One expert decision: the state it was taken in and its reward.
#[derive(Debug, Clone)]
pub struct ExpertStep {
    pub state: ScheduleState,
    pub action: Action,
    pub reward: f64,
    pub step: usize,
}

/// A complete, feasible expert episode.
#[derive(Debug, Clone)]
pub struct ExpertTrajectory {
    pub name: String,
    pub problem: Arc<ProblemInstance>,
    pub steps: Vec<ExpertStep>,
}

impl ExpertTrajectory {
    /// Replays `actions` and keeps every intermediate state.
    pub fn from_actions(
        name: impl Into<String>,
        problem: Arc<ProblemInstance>,
        actions: &[Action],
        reward: &RewardConfig,
    ) -> Result<Self, TrainError> {
        let name = name.into();
        let mut state = ScheduleState::new(problem.clone());
        let mut steps = Vec::with_capacity(actions.len());
        for (i, &a) in actions.iter().enumerate() {
            let out = state.apply(a, reward)?;
            if !out.feasible {
                return Err(TrainError::Expert(format!("{name}: step {i} is infeasible")));
            }
            steps.push(ExpertStep {
                state,
                action: a,
                reward: out.reward,
                step: i,
            });
            state = out.next;
        }
        if state.num_unscheduled() != 0 || steps.is_empty() {
            return Err(TrainError::Expert(format!("{name}: trajectory is incomplete")));
        }
        Ok(ExpertTrajectory { name, problem, steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Discounted return from every step.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let r = self.rewards();
        (0..r.len()).map(|t| nstep_return(&r, t, gamma)).collect()
    }

    pub fn to_records(&self) -> Vec<TransitionRecord> {
        let last = self.steps.len() - 1;
        self.steps
            .iter()
            .map(|s| TransitionRecord {
                problem_ref: self.name.clone(),
                step: s.step,
                action: s.action,
                reward: s.reward,
                terminal: s.step == last,
                feasible: true,
            })
            .collect()
    }
}

/// Expert trajectories used for imitation.
#[derive(Debug, Clone, Default)]
pub struct ExpertDataset {
    pub trajectories: Vec<ExpertTrajectory>,
}

impl ExpertDataset {
    /// Solves every problem exactly; solved ones become trajectories.
    /// Returns the dataset and each problem's solver result.
    pub fn build(
        problems: &[(String, Arc<ProblemInstance>)],
        budget: &Budget,
        reward: &RewardConfig,
    ) -> Result<(Self, Vec<SolveResult>), TrainError> {
        let mut trajectories = Vec::new();
        let mut results = Vec::with_capacity(problems.len());
        for (name, p) in problems {
            let r = exact_solve(p, budget);
            if r.solved {
                trajectories.push(ExpertTrajectory::from_actions(name.clone(), p.clone(), &r.trajectory, reward)?);
            }
            results.push(r);
        }
        Ok((ExpertDataset { trajectories }, results))
    }

    /// Rebuilds trajectories from stored records; `problems` maps each
    /// record's `problem_ref` to its instance. Stored rewards must agree
    /// with the replay.
    pub fn from_records(
        problems: &HashMap<String, Arc<ProblemInstance>>,
        records: &[TransitionRecord],
        reward: &RewardConfig,
    ) -> Result<Self, TrainError> {
        let mut trajectories = Vec::new();
        for ep in episodes(records) {
            let name = &ep[0].problem_ref;
            let p = problems
                .get(name)
                .ok_or_else(|| TrainError::Expert(format!("unknown instance {name}")))?;
            let actions: Vec<Action> = ep.iter().map(|r| r.action).collect();
            let traj = ExpertTrajectory::from_actions(name.clone(), p.clone(), &actions, reward)?;
            for (rec, step) in ep.iter().zip(&traj.steps) {
                if (rec.reward - step.reward).abs() > 1e-9 {
                    return Err(TrainError::Expert(format!(
                        "{name}: stored reward at step {} disagrees with replay",
                        rec.step
                    )));
                }
            }
            trajectories.push(traj);
        }
        Ok(ExpertDataset { trajectories })
    }

    pub fn to_records(&self) -> Vec<TransitionRecord> {
        self.trajectories.iter().flat_map(|t| t.to_records()).collect()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }
}
