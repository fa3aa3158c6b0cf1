use ndarray::Array2;

use crate::env::Action;
use crate::neural::{Graph, GraphBatch, Gradients, QNetwork, Query};

use super::TrainConfig;

/// Discounted reward sum from step `t` to the end of the episode.
pub fn nstep_return(rewards: &[f64], t: usize, gamma: f64) -> f64 {
    assert!(t < rewards.len(), "step {t} outside a {}-step episode", rewards.len());
    rewards[t..].iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// One expert decision with its regression target.
#[derive(Debug, Clone)]
pub struct ImitationSample {
    pub graph: Graph,
    /// Unscheduled tasks at this state, ascending.
    pub candidates: Vec<usize>,
    pub action: Action,
    /// Discounted return from this step.
    pub target: f64,
}

/// Next state of a non-terminal transition.
#[derive(Debug, Clone)]
pub struct NextState {
    pub graph: Graph,
    pub candidates: Vec<usize>,
}

/// One replayed transition.
#[derive(Debug, Clone)]
pub struct DqnSample {
    pub graph: Graph,
    pub candidates: Vec<usize>,
    pub action: Action,
    pub reward: f64,
    pub next: Option<NextState>,
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub ex: f64,
    pub alt: f64,
    pub l2: f64,
    pub dqn: f64,
    pub total: f64,
}

fn queries(candidates: &[&[usize]]) -> (Vec<Query>, Vec<usize>) {
    let mut qs = Vec::new();
    let mut first_row = Vec::with_capacity(candidates.len());
    for (graph, tasks) in candidates.iter().enumerate() {
        first_row.push(qs.len());
        qs.extend(tasks.iter().map(|&task| Query { graph, task }));
    }
    (qs, first_row)
}

fn row_of(candidates: &[usize], task: usize) -> usize {
    candidates
        .binary_search(&task)
        .unwrap_or_else(|_| panic!("task {task} is not a candidate"))
}

/// `L_ex + lambda1 * L_alt + lambda2 * L2` and its gradient.
///
/// `L_ex` is the batch mean of `(Q[expert] - R)^2`. `L_alt` is the batch
/// mean of the per-sample average, over every other (task, robot) pair, of
/// `max(0, Q - (R - q_o))^2`. `L2` sums squared non-bias weights.
pub fn imitation_loss(net: &QNetwork, batch: &[&ImitationSample], cfg: &TrainConfig) -> (LossParts, Gradients) {
    supervised_loss(net, batch, cfg.q_offset, [1.0, cfg.lambda1, cfg.lambda2])
}

/// `w[0] * L_ex + w[1] * L_alt + w[2] * L2`; terms with zero weight still
/// report their value but contribute no gradient.
pub fn supervised_loss(
    net: &QNetwork,
    batch: &[&ImitationSample],
    q_offset: f64,
    w: [f64; 3],
) -> (LossParts, Gradients) {
    assert!(!batch.is_empty(), "empty imitation batch");
    let graphs: Vec<&Graph> = batch.iter().map(|s| &s.graph).collect();
    let gb = GraphBatch::new(&graphs);
    let cands: Vec<&[usize]> = batch.iter().map(|s| s.candidates.as_slice()).collect();
    let (qs, first_row) = queries(&cands);
    let fwd = net.forward(&gb, &qs);
    let n_robots = fwd.q.ncols();
    let scale = 1.0 / batch.len() as f64;
    let mut d_q = Array2::<f64>::zeros(fwd.q.dim());
    let (mut ex, mut alt) = (0.0, 0.0);
    for (b, s) in batch.iter().enumerate() {
        let base = first_row[b];
        let ex_row = base + row_of(&s.candidates, s.action.task);
        let diff = fwd.q[[ex_row, s.action.robot]] - s.target;
        ex += scale * diff * diff;
        d_q[[ex_row, s.action.robot]] += w[0] * 2.0 * scale * diff;

        let n_alt = s.candidates.len() * n_robots - 1;
        if n_alt == 0 {
            continue;
        }
        let bound = s.target - q_offset;
        let share = scale / n_alt as f64;
        for row in base..base + s.candidates.len() {
            for r in 0..n_robots {
                if row == ex_row && r == s.action.robot {
                    continue;
                }
                let excess = fwd.q[[row, r]] - bound;
                if excess > 0.0 {
                    alt += share * excess * excess;
                    d_q[[row, r]] += w[1] * 2.0 * share * excess;
                }
            }
        }
    }
    let mut grad = net.backward(&gb, &fwd, &d_q);
    let l2 = net.params.l2();
    if w[2] != 0.0 {
        net.params.add_l2_grad(w[2], &mut grad);
    }
    let parts = LossParts {
        ex,
        alt,
        l2,
        dqn: 0.0,
        total: w[0] * ex + w[1] * alt + w[2] * l2,
    };
    (parts, grad)
}

/// Double-Q bootstrap targets: the online network picks the next action,
/// the target network values it. Terminal transitions use the reward alone.
pub fn dqn_targets(net: &QNetwork, target: &QNetwork, batch: &[&DqnSample], gamma: f64) -> Vec<f64> {
    let live: Vec<(usize, &NextState)> = batch
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.next.as_ref().map(|n| (i, n)))
        .collect();
    let mut y: Vec<f64> = batch.iter().map(|s| s.reward).collect();
    if live.is_empty() {
        return y;
    }
    let graphs: Vec<&Graph> = live.iter().map(|(_, n)| &n.graph).collect();
    let gb = GraphBatch::new(&graphs);
    let cands: Vec<&[usize]> = live.iter().map(|(_, n)| n.candidates.as_slice()).collect();
    let (qs, first_row) = queries(&cands);
    let online = net.forward(&gb, &qs).q;
    let valued = target.forward(&gb, &qs).q;
    for (k, (i, n)) in live.iter().enumerate() {
        let rows: Vec<(usize, Vec<f64>)> = (0..n.candidates.len())
            .map(|j| (j, online.row(first_row[k] + j).to_vec()))
            .collect();
        let pick = crate::policy::argmax_action(&rows).expect("live next states have candidates");
        y[*i] += gamma * valued[[first_row[k] + pick.task, pick.robot]];
    }
    y
}

/// Batch mean of `(y - Q(s, a))^2` with double-Q targets held fixed.
pub fn dqn_loss(net: &QNetwork, target: &QNetwork, batch: &[&DqnSample], cfg: &TrainConfig) -> (f64, Gradients) {
    assert!(!batch.is_empty(), "empty replay batch");
    let y = dqn_targets(net, target, batch, cfg.gamma);
    let graphs: Vec<&Graph> = batch.iter().map(|s| &s.graph).collect();
    let gb = GraphBatch::new(&graphs);
    let qs: Vec<Query> = batch
        .iter()
        .enumerate()
        .map(|(graph, s)| Query {
            graph,
            task: s.action.task,
        })
        .collect();
    let fwd = net.forward(&gb, &qs);
    let scale = 1.0 / batch.len() as f64;
    let mut d_q = Array2::<f64>::zeros(fwd.q.dim());
    let mut loss = 0.0;
    for (b, s) in batch.iter().enumerate() {
        let diff = fwd.q[[b, s.action.robot]] - y[b];
        loss += scale * diff * diff;
        d_q[[b, s.action.robot]] = 2.0 * scale * diff;
    }
    (loss, net.backward(&gb, &fwd, &d_q))
}
