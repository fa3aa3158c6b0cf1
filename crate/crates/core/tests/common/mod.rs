//! Oracles shared by the integration tests. Nothing here calls the solvers
//! under test.
#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robosched::{ProblemInstance, TaskSpec, WaitConstraint};

/// Single-source shortest paths by Bellman–Ford; `None` on a negative cycle
/// reachable from `src`.
pub fn bellman_ford(n: usize, edges: &[(usize, usize, f64)], src: usize) -> Option<Vec<f64>> {
    let mut d = vec![f64::INFINITY; n];
    d[src] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for &(u, v, w) in edges {
            if d[u] + w < d[v] {
                d[v] = d[u] + w;
                changed = true;
            }
        }
        if !changed {
            return Some(d);
        }
    }
    for &(u, v, w) in edges {
        if d[u] + w < d[v] {
            return None;
        }
    }
    Some(d)
}

/// Random sparse weighted digraph; `negative` allows negative weights.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64, negative: bool) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen::<f64>() < density {
                let lo = if negative { -5 } else { 0 };
                edges.push((u, v, rng.gen_range(lo..=20) as f64));
            }
        }
    }
    edges
}

pub fn instance(
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

/// Random instance with up to `max_tasks` tasks, tight-ish deadlines and
/// waits; every draw is kept, feasible or not.
pub fn random_small_instance(seed: u64, max_tasks: usize, robots: usize) -> Arc<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.gen_range(1..=max_tasks);
    let locations = robots;
    let mut tasks = Vec::new();
    for _ in 0..t {
        let dur = rng.gen_range(1..=10) as f64;
        let deadline = (rng.gen::<f64>() < 0.3).then(|| rng.gen_range(dur..=(4.0 * t as f64).max(dur + 1.0)));
        tasks.push((dur, deadline, rng.gen_range(0..locations)));
    }
    let mut waits = Vec::new();
    for i in 0..t {
        if t > 1 && rng.gen::<f64>() < 0.3 {
            let mut j = rng.gen_range(0..t - 1);
            if j >= i {
                j += 1;
            }
            if !waits.iter().any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i)) {
                waits.push((i, j, rng.gen_range(1..=10) as f64));
            }
        }
    }
    instance(robots, locations, &tasks, &waits)
}

/// Best makespan over every total start order and robot assignment, with
/// times propagated forward: each task starts as early as its robot, its
/// location, its waits and the start order allow. `None` if no sequence is
/// feasible.
pub fn exhaustive_optimum(p: &ProblemInstance) -> Option<f64> {
    struct Walk<'a> {
        p: &'a ProblemInstance,
        start: Vec<f64>,
        finish: Vec<f64>,
        done: Vec<bool>,
        best: Option<f64>,
    }
    fn go(w: &mut Walk, robot_free: &[f64], last_start: f64, span: f64, left: usize) {
        if left == 0 {
            w.best = Some(w.best.map_or(span, |b: f64| b.min(span)));
            return;
        }
        let t = w.p.tasks.len();
        for i in 0..t {
            if w.done[i] {
                continue;
            }
            let mut ready = last_start;
            let mut blocked = false;
            for c in w.p.waits.iter().filter(|c| c.task == i) {
                if w.done[c.after] {
                    ready = ready.max(w.finish[c.after] + c.delay);
                } else {
                    blocked = true;
                }
            }
            if blocked {
                continue;
            }
            for k in 0..t {
                if w.done[k] && w.p.tasks[k].location == w.p.tasks[i].location {
                    ready = ready.max(w.finish[k]);
                }
            }
            for r in 0..robot_free.len() {
                let s = ready.max(robot_free[r]);
                let f = s + w.p.tasks[i].duration;
                if w.p.tasks[i].deadline.is_some_and(|d| f > d + 1e-9) {
                    continue;
                }
                let mut rf = robot_free.to_vec();
                rf[r] = f;
                w.done[i] = true;
                w.start[i] = s;
                w.finish[i] = f;
                go(w, &rf, s, span.max(f), left - 1);
                w.done[i] = false;
            }
        }
    }
    let t = p.tasks.len();
    let mut w = Walk {
        p,
        start: vec![0.0; t],
        finish: vec![0.0; t],
        done: vec![false; t],
        best: None,
    };
    go(&mut w, &vec![0.0; p.num_robots], 0.0, 0.0, t);
    w.best
}
