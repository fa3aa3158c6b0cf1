//! Reference solvers: earliest-deadline-first and exact branch-and-bound.

mod edf;
mod exact;

pub use edf::edf_solve;
pub use exact::{exact_solve, Budget};

use serde::{Deserialize, Serialize};

use crate::env::{Action, Schedule};

/// Outcome of any solver or policy rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// A schedule satisfying every constraint was produced.
    pub solved: bool,
    /// Optimality over the sequential decision space was proven.
    pub proven_optimal: bool,
    /// The search stopped on its node or time budget.
    pub budget_exhausted: bool,
    pub makespan: Option<f64>,
    pub schedule: Option<Schedule>,
    /// Decisions in order; replaying them through the environment rebuilds
    /// every intermediate state.
    pub trajectory: Vec<Action>,
    pub elapsed_secs: f64,
    pub nodes_expanded: u64,
}

impl SolveResult {
    pub fn unsolved(trajectory: Vec<Action>, elapsed_secs: f64) -> Self {
        SolveResult {
            solved: false,
            proven_optimal: false,
            budget_exhausted: false,
            makespan: None,
            schedule: None,
            trajectory,
            elapsed_secs,
            nodes_expanded: 0,
        }
    }

    /// Makespan when solved, `20 * T` otherwise.
    pub fn adjusted_makespan(&self, num_tasks: usize) -> f64 {
        match (self.solved, self.makespan) {
            (true, Some(m)) => m,
            _ => 20.0 * num_tasks as f64,
        }
    }
}
