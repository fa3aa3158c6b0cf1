//! Schedule construction from a trained Q-network.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::SolveResult;
use crate::env::{validate_schedule, Action, RewardConfig, ScheduleState, TIME_TOLERANCE};
use crate::instance::ProblemInstance;
use crate::neural::QNetwork;
use crate::stn::{finish_node, start_node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutVariant {
    Greedy,
    Opportunistic,
}

/// Highest Q-value over `(task, per-robot values)` rows. Ties go to the
/// lowest task, then the lowest robot; NaN never wins.
pub fn argmax_action(q: &[(usize, Vec<f64>)]) -> Option<Action> {
    let mut best: Option<(Action, f64)> = None;
    for (task, values) in q {
        for (robot, &v) in values.iter().enumerate() {
            let better = match best {
                None => true,
                Some((_, b)) => v > b || (b.is_nan() && !v.is_nan()),
            };
            if better {
                best = Some((Action::new(*task, robot), v));
            }
        }
    }
    best.map(|(a, _)| a)
}

/// Greedy decision for one state, `None` when nothing is left to schedule.
pub fn greedy_action(net: &QNetwork, state: &ScheduleState) -> Option<Action> {
    argmax_action(&net.state_q_values(state))
}

fn finish(state: &ScheduleState, started: Instant) -> SolveResult {
    let elapsed = started.elapsed().as_secs_f64();
    let trajectory = state.order().to_vec();
    let Some(schedule) = state.schedule() else {
        return SolveResult::unsolved(trajectory, elapsed);
    };
    let valid = validate_schedule(state.problem(), &schedule).is_ok_and(|v| v.is_empty());
    if !valid {
        return SolveResult::unsolved(trajectory, elapsed);
    }
    SolveResult {
        solved: true,
        proven_optimal: false,
        budget_exhausted: false,
        makespan: Some(schedule.makespan()),
        schedule: Some(schedule),
        trajectory,
        elapsed_secs: elapsed,
        nodes_expanded: 0,
    }
}

/// Applies the argmax action at every decision step until terminal.
pub fn greedy_rollout(net: &QNetwork, p: &Arc<ProblemInstance>) -> SolveResult {
    greedy_rollout_with(net, p, false)
}

/// Q-values with every action whose insertion is infeasible set to -inf.
fn masked_q_values(net: &QNetwork, state: &ScheduleState) -> Vec<(usize, Vec<f64>)> {
    let allowed = state.actions(true);
    let mut q = net.state_q_values(state);
    for (task, values) in &mut q {
        for (robot, v) in values.iter_mut().enumerate() {
            if !allowed.contains(&Action::new(*task, robot)) {
                *v = f64::NEG_INFINITY;
            }
        }
    }
    q
}

/// Greedy rollout; with `mask`, the argmax skips infeasible actions.
pub fn greedy_rollout_with(net: &QNetwork, p: &Arc<ProblemInstance>, mask: bool) -> SolveResult {
    let started = Instant::now();
    let cfg = RewardConfig::default();
    let mut state = ScheduleState::new(p.clone());
    if !state.stn().is_consistent() {
        return SolveResult::unsolved(Vec::new(), started.elapsed().as_secs_f64());
    }
    loop {
        let q = if mask {
            masked_q_values(net, &state)
        } else {
            net.state_q_values(&state)
        };
        let Some(a) = argmax_action(&q) else { break };
        let out = state.apply(a, &cfg).expect("argmax picks a valid action");
        state = out.next;
        if !out.feasible {
            break;
        }
    }
    finish(&state, started)
}

fn earliest(state: &ScheduleState, node: usize) -> f64 {
    -state.stn().distances().get(node, crate::stn::SCHEDULE_START)
}

/// Time-driven rollout: at each clock event every idle robot, in index
/// order, takes its highest-valued unscheduled task. A pick is discarded
/// (robot stays idle) when the task could not start by the current time or
/// its insertion is infeasible. With no pick possible and no later event,
/// the instance is unsolved.
pub fn opportunistic_rollout(net: &QNetwork, p: &Arc<ProblemInstance>) -> SolveResult {
    opportunistic_trace(net, p, false).0
}

/// Also returns the `(clock, action)` log of accepted picks. With `mask`,
/// each robot's argmax skips tasks whose insertion is infeasible.
pub fn opportunistic_trace(
    net: &QNetwork,
    p: &Arc<ProblemInstance>,
    mask: bool,
) -> (SolveResult, Vec<(f64, Action)>) {
    let started = Instant::now();
    let cfg = RewardConfig::default();
    let tol = TIME_TOLERANCE;
    let mut state = ScheduleState::new(p.clone());
    let mut log = Vec::new();
    if !state.stn().is_consistent() {
        return (SolveResult::unsolved(Vec::new(), started.elapsed().as_secs_f64()), log);
    }
    let mut clock = 0.0f64;
    while state.num_unscheduled() > 0 {
        let mut progress = false;
        for robot in 0..p.num_robots {
            if state.num_unscheduled() == 0 {
                break;
            }
            let free = state.robot_sequences()[robot]
                .last()
                .map_or(0.0, |&k| earliest(&state, finish_node(k)));
            if free > clock + tol {
                continue;
            }
            let q = if mask {
                masked_q_values(net, &state)
            } else {
                net.state_q_values(&state)
            };
            let column: Vec<(usize, Vec<f64>)> = q.into_iter().map(|(t, v)| (t, vec![v[robot]])).collect();
            let task = argmax_action(&column).expect("tasks remain").task;
            let out = state.apply(Action::new(task, robot), &cfg).expect("valid action");
            if !out.feasible || earliest(&out.next, start_node(task)) > clock + tol {
                continue;
            }
            state = out.next;
            log.push((clock, Action::new(task, robot)));
            progress = true;
        }
        if progress || state.num_unscheduled() == 0 {
            continue;
        }
        let d = state.stn().distances();
        let events = state
            .scheduled()
            .map(finish_node)
            .chain(state.unscheduled().map(start_node))
            .map(|node| -d.get(node, crate::stn::SCHEDULE_START))
            .chain(p.waits.iter().filter(|w| state.is_scheduled(w.after)).map(|w| {
                -d.get(finish_node(w.after), crate::stn::SCHEDULE_START) + w.delay
            }));
        let next = events.filter(|&e| e > clock + tol).fold(f64::INFINITY, f64::min);
        if !next.is_finite() {
            break;
        }
        clock = next;
    }
    (finish(&state, started), log)
}

pub fn rollout(net: &QNetwork, p: &Arc<ProblemInstance>, variant: RolloutVariant) -> SolveResult {
    rollout_with(net, p, variant, false)
}

pub fn rollout_with(net: &QNetwork, p: &Arc<ProblemInstance>, variant: RolloutVariant, mask: bool) -> SolveResult {
    match variant {
        RolloutVariant::Greedy => greedy_rollout_with(net, p, mask),
        RolloutVariant::Opportunistic => opportunistic_trace(net, p, mask).0,
    }
}

/// Best feasible result over the members (lowest makespan, earliest member
/// on ties); unsolved only if every member fails.
pub fn ensemble_solve(nets: &[&QNetwork], p: &Arc<ProblemInstance>, variant: RolloutVariant) -> SolveResult {
    ensemble_solve_with(nets, p, variant, false)
}

pub fn ensemble_solve_with(
    nets: &[&QNetwork],
    p: &Arc<ProblemInstance>,
    variant: RolloutVariant,
    mask: bool,
) -> SolveResult {
    assert!(!nets.is_empty(), "ensemble needs at least one model");
    let started = Instant::now();
    let mut best: Option<SolveResult> = None;
    let mut first_failure = None;
    for net in nets {
        let r = rollout_with(net, p, variant, mask);
        if !r.solved {
            first_failure.get_or_insert(r);
            continue;
        }
        let improves = best
            .as_ref()
            .is_none_or(|b| r.makespan.unwrap_or(f64::INFINITY) < b.makespan.unwrap_or(f64::INFINITY));
        if improves {
            best = Some(r);
        }
    }
    let mut out = best.or(first_failure).expect("at least one member ran");
    out.elapsed_secs = started.elapsed().as_secs_f64();
    out
}
