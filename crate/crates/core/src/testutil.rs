//! Shared fixtures for unit tests.

use std::sync::Arc;

use crate::instance::{ProblemInstance, TaskSpec, WaitConstraint};

/// Tasks as `(duration, deadline, location)`, waits as `(task, after, delay)`.
pub(crate) fn instance(
    robots: usize,
    locations: usize,
    tasks: &[(f64, Option<f64>, usize)],
    waits: &[(usize, usize, f64)],
) -> Arc<ProblemInstance> {
    Arc::new(ProblemInstance {
        num_robots: robots,
        num_locations: locations,
        tasks: tasks
            .iter()
            .enumerate()
            .map(|(id, &(duration, deadline, location))| TaskSpec {
                id,
                duration,
                deadline,
                location,
            })
            .collect(),
        waits: waits
            .iter()
            .map(|&(task, after, delay)| WaitConstraint { task, after, delay })
            .collect(),
        seed: 0,
    })
}
