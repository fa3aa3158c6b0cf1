//! Multi-robot task allocation and scheduling over simple temporal networks.
//!
//! Problems are built as STNs ([`stn`]), scheduled sequentially through an
//! MDP ([`env`]), solved by reference methods ([`baselines`]) and by a learned
//! graph-attention Q-function ([`neural`], [`training`], [`policy`]).

pub mod baselines;
pub mod env;
pub mod harness;
pub mod instance;
pub mod neural;
pub mod policy;
pub mod stn;
pub mod training;
pub mod trajectory;

#[cfg(test)]
pub(crate) mod testutil;

pub use baselines::{edf_solve, exact_solve, Budget, SolveResult};
pub use env::{validate_schedule, Action, RewardConfig, Schedule, ScheduleState, StepOutcome};
pub use instance::{GeneratorConfig, ProblemInstance, TaskSpec, WaitConstraint};
pub use stn::Stn;
