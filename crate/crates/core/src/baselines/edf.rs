use std::time::Instant;

use crate::env::{validate_schedule, Action, Schedule, TIME_TOLERANCE};
use crate::instance::ProblemInstance;

use super::SolveResult;

/// Event-driven earliest-deadline-first dispatch.
///
/// At each event time, released tasks (wait predecessors finished and delays
/// elapsed, location free) are handed to idle robots: earliest deadline first
/// (no deadline ranks last, ties by task id), lowest idle robot first. The
/// instance counts as solved only if every deadline is met.
pub fn edf_solve(p: &ProblemInstance) -> SolveResult {
    let clock = Instant::now();
    let t_count = p.num_tasks();
    let tol = TIME_TOLERANCE;
    let mut start: Vec<Option<f64>> = vec![None; t_count];
    let mut finish: Vec<f64> = vec![f64::INFINITY; t_count];
    let mut robot_of = vec![usize::MAX; t_count];
    let mut robot_free = vec![0.0f64; p.num_robots];
    let mut location_free = vec![0.0f64; p.num_locations];
    let mut remaining = t_count;
    let mut now = 0.0f64;

    let released = |task: usize, now: f64, start: &[Option<f64>], finish: &[f64]| {
        p.waits_of(task).all(|w| start[w.after].is_some() && finish[w.after] + w.delay <= now + tol)
    };
    let rank = |task: usize| (p.tasks[task].deadline.unwrap_or(f64::INFINITY), task);

    while remaining > 0 {
        loop {
            let Some(robot) = (0..p.num_robots).find(|&r| robot_free[r] <= now + tol) else {
                break;
            };
            let pick = (0..t_count)
                .filter(|&i| start[i].is_none())
                .filter(|&i| location_free[p.tasks[i].location] <= now + tol)
                .filter(|&i| released(i, now, &start, &finish))
                .min_by(|&a, &b| rank(a).partial_cmp(&rank(b)).expect("deadlines are not NaN"));
            let Some(task) = pick else { break };
            let end = now + p.tasks[task].duration;
            start[task] = Some(now);
            finish[task] = end;
            robot_of[task] = robot;
            robot_free[robot] = end;
            location_free[p.tasks[task].location] = end;
            remaining -= 1;
        }
        if remaining == 0 {
            break;
        }
        // next event: a robot or location frees up, or a wait delay elapses
        let mut next = f64::INFINITY;
        for &f in robot_free.iter().chain(location_free.iter()) {
            if f > now + tol {
                next = next.min(f);
            }
        }
        for w in &p.waits {
            if start[w.task].is_none() && start[w.after].is_some() {
                let release = finish[w.after] + w.delay;
                if release > now + tol {
                    next = next.min(release);
                }
            }
        }
        if !next.is_finite() {
            // only reachable with cyclic waits
            return SolveResult::unsolved(Vec::new(), clock.elapsed().as_secs_f64());
        }
        now = next;
    }

    let starts: Vec<f64> = start.iter().map(|s| s.expect("all started")).collect();
    let schedule = Schedule {
        assignment: robot_of,
        starts,
        finishes: finish,
    };
    let mut trajectory: Vec<Action> = (0..t_count)
        .map(|i| Action::new(i, schedule.assignment[i]))
        .collect();
    trajectory.sort_by(|a, b| {
        schedule.starts[a.task]
            .partial_cmp(&schedule.starts[b.task])
            .expect("finite starts")
            .then(a.robot.cmp(&b.robot))
    });
    let solved = validate_schedule(p, &schedule)
        .map(|v| v.is_empty())
        .unwrap_or(false);
    SolveResult {
        solved,
        proven_optimal: false,
        budget_exhausted: false,
        makespan: Some(schedule.makespan()),
        schedule: Some(schedule),
        trajectory,
        elapsed_secs: clock.elapsed().as_secs_f64(),
        nodes_expanded: 0,
    }
}
