//! Sequential schedule construction as a Markov decision process, plus the
//! complete-schedule validator.
//!
//! Each action appends an unscheduled task to one robot's sequence. The
//! decision order is also the start order: a task may not start before any
//! previously scheduled task has started. Same-location tasks therefore
//! resolve as "earlier decision finishes first".

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::ProblemInstance;
use crate::stn::{finish_node, start_node, Stn, StnError};

/// Absolute tolerance for schedule validation.
pub const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub task: usize,
    pub robot: usize,
}

impl Action {
    pub fn new(task: usize, robot: usize) -> Self {
        Action { task, robot }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task {} -> robot {}", self.task, self.robot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Divides the makespan change on non-terminal steps; must exceed 1.
    pub divisor: f64,
    /// Reward for an infeasible step; `None` means `-20 * T`.
    pub infeasible_reward: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            divisor: 2.0,
            infeasible_reward: None,
        }
    }
}

impl RewardConfig {
    pub fn infeasible(&self, problem: &ProblemInstance) -> f64 {
        self.infeasible_reward
            .unwrap_or_else(|| -problem.unsolved_penalty())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("task {0} does not exist")]
    UnknownTask(usize),
    #[error("robot {0} does not exist")]
    UnknownRobot(usize),
    #[error("task {0} is already scheduled")]
    AlreadyScheduled(usize),
    #[error("episode already ended")]
    EpisodeOver,
    #[error("schedule covers {got} tasks, instance has {expected}")]
    IncompleteSchedule { expected: usize, got: usize },
    #[error("invalid reward config: {0}")]
    RewardConfig(String),
    #[error(transparent)]
    Stn(#[from] StnError),
}

/// A partial schedule and the STN it induces.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    problem: Arc<ProblemInstance>,
    stn: Stn,
    sequences: Vec<Vec<usize>>,
    order: Vec<Action>,
    assignment: Vec<Option<usize>>,
    failed: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: ScheduleState,
    pub reward: f64,
    pub terminal: bool,
    pub feasible: bool,
}

impl ScheduleState {
    pub fn new(problem: Arc<ProblemInstance>) -> Self {
        let stn = problem.initial_stn();
        let t = problem.num_tasks();
        let n = problem.num_robots;
        ScheduleState {
            problem,
            stn,
            sequences: vec![Vec::new(); n],
            order: Vec::new(),
            assignment: vec![None; t],
            failed: false,
        }
    }

    pub fn problem(&self) -> &ProblemInstance {
        &self.problem
    }

    pub fn problem_arc(&self) -> &Arc<ProblemInstance> {
        &self.problem
    }

    pub fn stn(&self) -> &Stn {
        &self.stn
    }

    pub fn robot_sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    /// Decisions taken so far, in order.
    pub fn order(&self) -> &[Action] {
        &self.order
    }

    pub fn robot_of(&self, task: usize) -> Option<usize> {
        self.assignment.get(task).copied().flatten()
    }

    pub fn is_scheduled(&self, task: usize) -> bool {
        self.robot_of(task).is_some()
    }

    pub fn num_scheduled(&self) -> usize {
        self.order.len()
    }

    pub fn scheduled(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().map(|a| a.task)
    }

    pub fn unscheduled(&self) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i)
    }

    pub fn num_unscheduled(&self) -> usize {
        self.problem.num_tasks() - self.order.len()
    }

    /// The last step was infeasible.
    pub fn is_failed(&self) -> bool {
        self.failed
    }

    pub fn is_terminal(&self) -> bool {
        self.failed || self.num_unscheduled() == 0
    }

    /// Earliest-time makespan of the scheduled tasks.
    pub fn makespan(&self) -> Result<f64, StnError> {
        self.stn.makespan(self.scheduled())
    }

    /// Every (unscheduled task, robot) pair, task-major. With `mask`, only
    /// pairs whose transition keeps the STN consistent.
    pub fn actions(&self, mask: bool) -> Vec<Action> {
        if self.is_terminal() {
            return Vec::new();
        }
        let n = self.problem.num_robots;
        let all = self
            .unscheduled()
            .flat_map(|task| (0..n).map(move |robot| Action { task, robot }));
        if mask {
            all.filter(|&a| self.constrained(a).is_consistent()).collect()
        } else {
            all.collect()
        }
    }

    fn check(&self, a: Action) -> Result<(), EnvError> {
        if self.is_terminal() {
            return Err(EnvError::EpisodeOver);
        }
        if a.task >= self.problem.num_tasks() {
            return Err(EnvError::UnknownTask(a.task));
        }
        if a.robot >= self.problem.num_robots {
            return Err(EnvError::UnknownRobot(a.robot));
        }
        if self.is_scheduled(a.task) {
            return Err(EnvError::AlreadyScheduled(a.task));
        }
        Ok(())
    }

    /// STN after inserting the ordering edges of `a`; assumes `a` is valid.
    fn constrained(&self, a: Action) -> Stn {
        let mut stn = self.stn.clone();
        let ok = "nodes come from the instance";
        let s_new = start_node(a.task);
        // robot sequencing
        if let Some(&prev) = self.sequences[a.robot].last() {
            stn.add_lower_bound(finish_node(prev), s_new, 0.0).expect(ok);
        }
        let loc = self.problem.tasks[a.task].location;
        for k in self.scheduled() {
            // start order
            stn.add_lower_bound(start_node(k), s_new, 0.0).expect(ok);
            // location exclusion
            if self.problem.tasks[k].location == loc {
                stn.add_lower_bound(finish_node(k), s_new, 0.0).expect(ok);
            }
        }
        stn
    }

    /// Pure transition; `self` is left untouched.
    pub fn apply(&self, a: Action, cfg: &RewardConfig) -> Result<StepOutcome, EnvError> {
        self.check(a)?;
        if !(cfg.divisor > 1.0) {
            return Err(EnvError::RewardConfig(format!(
                "divisor must exceed 1, got {}",
                cfg.divisor
            )));
        }
        let before = self.makespan()?;
        let mut next = self.clone();
        next.stn = self.constrained(a);
        next.sequences[a.robot].push(a.task);
        next.order.push(a);
        next.assignment[a.task] = Some(a.robot);

        if !next.stn.is_consistent() {
            next.failed = true;
            return Ok(StepOutcome {
                next,
                reward: cfg.infeasible(&self.problem),
                terminal: true,
                feasible: false,
            });
        }
        let after = next.makespan()?;
        let delta = after - before;
        let terminal = next.is_terminal();
        let reward = if terminal { -delta } else { -delta / cfg.divisor };
        Ok(StepOutcome {
            next,
            reward,
            terminal,
            feasible: true,
        })
    }

    /// Earliest-time schedule of a complete, feasible state.
    pub fn schedule(&self) -> Option<Schedule> {
        if self.failed || self.num_unscheduled() != 0 {
            return None;
        }
        let d = self.stn.distances();
        if !d.is_consistent() {
            return None;
        }
        let t = self.problem.num_tasks();
        let starts = (0..t)
            .map(|i| -d.get(start_node(i), crate::stn::SCHEDULE_START))
            .collect();
        let finishes = (0..t)
            .map(|i| -d.get(finish_node(i), crate::stn::SCHEDULE_START))
            .collect();
        let assignment = self.assignment.iter().map(|r| r.expect("complete")).collect();
        Some(Schedule {
            assignment,
            starts,
            finishes,
        })
    }
}

/// Replay `actions` from the empty state, returning every outcome.
pub fn replay(
    problem: Arc<ProblemInstance>,
    actions: &[Action],
    cfg: &RewardConfig,
) -> Result<(ScheduleState, Vec<StepOutcome>), EnvError> {
    let mut state = ScheduleState::new(problem);
    let mut outcomes = Vec::with_capacity(actions.len());
    for &a in actions {
        let out = state.apply(a, cfg)?;
        state = out.next.clone();
        outcomes.push(out);
    }
    Ok((state, outcomes))
}

/// Complete timed schedule: robot, start and finish per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub assignment: Vec<usize>,
    pub starts: Vec<f64>,
    pub finishes: Vec<f64>,
}

impl Schedule {
    pub fn makespan(&self) -> f64 {
        self.finishes.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// Robot index outside the team.
    Assignment,
    /// Task starts before the schedule origin.
    Origin,
    Duration,
    Deadline,
    Wait,
    /// Two tasks on one robot overlap.
    RobotOverlap,
    /// Two tasks at one location overlap.
    LocationOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub tasks: Vec<usize>,
    /// Amount by which the constraint is exceeded.
    pub excess: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} violated by {:.3} on tasks {:?}", self.kind, self.excess, self.tasks)
    }
}

fn overlap(s: &Schedule, i: usize, j: usize) -> f64 {
    // positive length of the intersection of [s_i, f_i) and [s_j, f_j)
    s.finishes[i].min(s.finishes[j]) - s.starts[i].max(s.starts[j])
}

/// Checks a complete schedule against every constraint of `p`.
pub fn validate_schedule(p: &ProblemInstance, s: &Schedule) -> Result<Vec<Violation>, EnvError> {
    let t = p.num_tasks();
    for got in [s.assignment.len(), s.starts.len(), s.finishes.len()] {
        if got != t {
            return Err(EnvError::IncompleteSchedule { expected: t, got });
        }
    }
    let tol = TIME_TOLERANCE;
    let mut out = Vec::new();
    let mut push = |kind, tasks: Vec<usize>, excess: f64| {
        out.push(Violation { kind, tasks, excess })
    };
    for (i, task) in p.tasks.iter().enumerate() {
        if s.assignment[i] >= p.num_robots {
            push(ConstraintKind::Assignment, vec![i], s.assignment[i] as f64);
        }
        if s.starts[i] < -tol {
            push(ConstraintKind::Origin, vec![i], -s.starts[i]);
        }
        let dur_err = (s.finishes[i] - s.starts[i] - task.duration).abs();
        if dur_err > tol || !dur_err.is_finite() {
            push(ConstraintKind::Duration, vec![i], dur_err);
        }
        if let Some(d) = task.deadline {
            if s.finishes[i] > d + tol {
                push(ConstraintKind::Deadline, vec![i], s.finishes[i] - d);
            }
        }
    }
    for w in &p.waits {
        let gap = s.starts[w.task] - s.finishes[w.after];
        if gap < w.delay - tol {
            push(ConstraintKind::Wait, vec![w.task, w.after], w.delay - gap);
        }
    }
    for i in 0..t {
        for j in i + 1..t {
            let ov = overlap(s, i, j);
            if ov > tol {
                if s.assignment[i] == s.assignment[j] {
                    push(ConstraintKind::RobotOverlap, vec![i, j], ov);
                }
                if p.tasks[i].location == p.tasks[j].location {
                    push(ConstraintKind::LocationOverlap, vec![i, j], ov);
                }
            }
        }
    }
    Ok(out)
}
