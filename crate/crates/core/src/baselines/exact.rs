use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::{replay, Action, RewardConfig, ScheduleState};
use crate::instance::ProblemInstance;

use super::{edf_solve, SolveResult};

const EPS: f64 = 1e-9;

/// Search limits; `None` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Budget {
    pub max_nodes: Option<u64>,
    pub time_limit: Option<Duration>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::default()
    }

    pub fn seconds(secs: f64) -> Self {
        Budget {
            max_nodes: None,
            time_limit: Some(Duration::from_secs_f64(secs)),
        }
    }

    pub fn nodes(n: u64) -> Self {
        Budget {
            max_nodes: Some(n),
            time_limit: None,
        }
    }
}

/// Partial schedule in decision order. Earliest times of scheduled events
/// never move once fixed, so the state is a handful of arrays.
#[derive(Clone)]
struct Node {
    order: Vec<Action>,
    scheduled: Vec<bool>,
    finish: Vec<f64>,
    robot_free: Vec<f64>,
    location_free: Vec<f64>,
    latest_start: f64,
    makespan: f64,
}

struct Search<'a> {
    p: &'a ProblemInstance,
    /// `(after, delay)` pairs per task.
    waits: Vec<Vec<(usize, f64)>>,
    budget: &'a Budget,
    started: Instant,
    nodes: u64,
    exhausted: bool,
    best: f64,
    best_order: Option<Vec<Action>>,
}

impl Search<'_> {
    fn out_of_budget(&mut self) -> bool {
        if self.exhausted {
            return true;
        }
        let over_nodes = self.budget.max_nodes.is_some_and(|n| self.nodes >= n);
        let over_time = self.nodes.is_multiple_of(256)
            && self
                .budget
                .time_limit
                .is_some_and(|limit| self.started.elapsed() >= limit);
        self.exhausted = over_nodes || over_time;
        self.exhausted
    }

    /// Earliest start of `task` on `robot`, or `None` if a wait partner is
    /// still unscheduled.
    fn start_time(&self, node: &Node, task: usize, robot: usize) -> Option<f64> {
        let mut s = node
            .latest_start
            .max(node.robot_free[robot])
            .max(node.location_free[self.p.tasks[task].location]);
        for &(j, w) in &self.waits[task] {
            if !node.scheduled[j] {
                return None;
            }
            s = s.max(node.finish[j] + w);
        }
        Some(s)
    }

    fn apply(&self, node: &Node, task: usize, robot: usize) -> Option<Node> {
        let s = self.start_time(node, task, robot)?;
        let spec = &self.p.tasks[task];
        let f = s + spec.duration;
        if spec.deadline.is_some_and(|d| f > d + EPS) {
            return None;
        }
        let mut next = node.clone();
        next.order.push(Action::new(task, robot));
        next.scheduled[task] = true;
        next.finish[task] = f;
        next.robot_free[robot] = f;
        next.location_free[spec.location] = f;
        next.latest_start = s;
        next.makespan = node.makespan.max(f);
        Some(next)
    }

    /// Admissible bound on any completion's makespan, `None` when some
    /// unscheduled deadline can no longer be met.
    fn lower_bound(&self, node: &Node) -> Option<f64> {
        let p = self.p;
        let ls = node.latest_start;
        let min_free = node.robot_free.iter().copied().fold(f64::INFINITY, f64::min).max(ls);
        let mut est = vec![0.0; p.num_tasks()];
        let mut location_work = vec![0.0; p.num_locations];
        let mut work = 0.0;
        let mut bound = node.makespan;
        for (i, spec) in p.tasks.iter().enumerate() {
            if node.scheduled[i] {
                continue;
            }
            let mut e = min_free.max(node.location_free[spec.location]);
            for &(j, w) in &self.waits[i] {
                if node.scheduled[j] {
                    e = e.max(node.finish[j] + w);
                }
            }
            est[i] = e;
            work += spec.duration;
            location_work[spec.location] += spec.duration;
        }
        for (i, spec) in p.tasks.iter().enumerate() {
            if node.scheduled[i] {
                continue;
            }
            let mut e = est[i];
            for &(j, w) in &self.waits[i] {
                if !node.scheduled[j] {
                    e = e.max(est[j] + p.tasks[j].duration + w);
                }
            }
            let f = e + spec.duration;
            if spec.deadline.is_some_and(|d| f > d + EPS) {
                return None;
            }
            bound = bound.max(f);
        }
        for (l, &w) in location_work.iter().enumerate() {
            if w > 0.0 {
                bound = bound.max(node.location_free[l].max(min_free) + w);
            }
        }
        let ready: f64 = node.robot_free.iter().map(|&f| f.max(ls)).sum();
        Some(bound.max((ready + work) / p.num_robots as f64))
    }

    fn dfs(&mut self, node: &Node) {
        if self.out_of_budget() {
            return;
        }
        self.nodes += 1;
        if node.order.len() == self.p.num_tasks() {
            if node.makespan < self.best - EPS {
                self.best = node.makespan;
                self.best_order = Some(node.order.clone());
            }
            return;
        }
        let mut children = Vec::new();
        for task in 0..self.p.num_tasks() {
            if node.scheduled[task] {
                continue;
            }
            for robot in 0..self.p.num_robots {
                if !robot_is_canonical(node, robot) {
                    continue;
                }
                let Some(child) = self.apply(node, task, robot) else {
                    continue;
                };
                let Some(lb) = self.lower_bound(&child) else {
                    continue;
                };
                if lb < self.best - EPS {
                    children.push((lb, Action::new(task, robot), child));
                }
            }
        }
        children.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite bound").then(x.1.cmp(&y.1)));
        for (lb, _, child) in children {
            if lb >= self.best - EPS {
                break;
            }
            self.dfs(&child);
            if self.exhausted {
                return;
            }
        }
    }
}

/// Robots are interchangeable, and every robot already free by the latest
/// scheduled start behaves the same for the next decision: only the lowest
/// index of each equivalence class is expanded.
fn robot_is_canonical(node: &Node, robot: usize) -> bool {
    let key = |r: usize| node.robot_free[r].max(node.latest_start);
    let k = key(robot);
    (0..robot).all(|r| key(r) != k)
}

/// Depth-first branch-and-bound over decision sequences, minimizing the
/// earliest-time makespan. The EDF schedule, replayed in start order, seeds
/// the incumbent when feasible. The winning sequence is replayed through the
/// environment before it is returned.
pub fn exact_solve(p: &Arc<ProblemInstance>, budget: &Budget) -> SolveResult {
    let started = Instant::now();
    let reward = RewardConfig::default();
    let t = p.num_tasks();
    let mut waits = vec![Vec::new(); t];
    for w in &p.waits {
        waits[w.task].push((w.after, w.delay));
    }
    let mut search = Search {
        p,
        waits,
        budget,
        started,
        nodes: 0,
        exhausted: false,
        best: f64::INFINITY,
        best_order: None,
    };

    if !ScheduleState::new(p.clone()).stn().is_consistent() {
        return SolveResult::unsolved(Vec::new(), started.elapsed().as_secs_f64());
    }
    let warm = edf_solve(p);
    if warm.solved {
        if let Ok((state, _)) = replay(p.clone(), &warm.trajectory, &reward) {
            if let Some(s) = state.schedule() {
                search.best = s.makespan();
                search.best_order = Some(state.order().to_vec());
            }
        }
    }
    let root = Node {
        order: Vec::with_capacity(t),
        scheduled: vec![false; t],
        finish: vec![0.0; t],
        robot_free: vec![0.0; p.num_robots],
        location_free: vec![0.0; p.num_locations],
        latest_start: 0.0,
        makespan: 0.0,
    };
    if search.lower_bound(&root).is_some_and(|lb| lb < search.best - EPS) {
        search.dfs(&root);
    }

    let elapsed = started.elapsed().as_secs_f64();
    let Some(order) = search.best_order else {
        let mut r = SolveResult::unsolved(Vec::new(), elapsed);
        r.budget_exhausted = search.exhausted;
        r.nodes_expanded = search.nodes;
        return r;
    };
    let (state, _) = replay(p.clone(), &order, &reward).expect("incumbent replays");
    let schedule = state.schedule().expect("incumbent is feasible");
    SolveResult {
        solved: true,
        proven_optimal: !search.exhausted,
        budget_exhausted: search.exhausted,
        makespan: Some(schedule.makespan()),
        schedule: Some(schedule),
        trajectory: order,
        elapsed_secs: elapsed,
        nodes_expanded: search.nodes,
    }
}
