use std::sync::Arc;

use serde::Serialize;

use crate::env::{Action, RewardConfig, ScheduleState};
use crate::instance::GeneratorConfig;
use crate::neural::{EdgeMode, Gradients, ModelConfig, QNetwork};

use super::loss::{dqn_loss, supervised_loss, DqnSample, ImitationSample, NextState};
use super::TrainConfig;

/// Worst central-difference disagreement for one (loss, tensor) pair.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub loss: String,
    pub tensor: String,
    pub max_rel_error: f64,
}

const STEP: f64 = 1e-6;

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
}

fn check(
    label: &str,
    net: &QNetwork,
    grad: &Gradients,
    loss: &dyn Fn(&QNetwork) -> f64,
) -> Vec<GradCheckEntry> {
    let names: Vec<String> = net.params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (ti, name) in names.into_iter().enumerate() {
        let analytic = grad.tensors()[ti].1.iter().copied().collect::<Vec<_>>();
        let mut worst = 0.0f64;
        let mut probe = net.clone();
        let set = |n: &mut QNetwork, k: usize, v: f64| {
            n.params.tensors_mut()[ti].1.as_slice_mut().expect("contiguous")[k] = v;
        };
        let base: Vec<f64> = net.params.tensors()[ti].1.iter().copied().collect();
        for (k, &a) in analytic.iter().enumerate() {
            set(&mut probe, k, base[k] + STEP);
            let plus = loss(&probe);
            set(&mut probe, k, base[k] - STEP);
            let minus = loss(&probe);
            set(&mut probe, k, base[k]);
            worst = worst.max(relative(a, (plus - minus) / (2.0 * STEP)));
        }
        out.push(GradCheckEntry {
            loss: label.to_string(),
            tensor: name,
            max_rel_error: worst,
        });
    }
    out
}

/// Finite-difference check of the expert, alternate and DQN losses on
/// small random two-task (six-node) graphs, for every tensor of a reduced
/// model in both edge modes.
pub fn gradient_check(seed: u64) -> Vec<GradCheckEntry> {
    let gen = GeneratorConfig::with_tasks(2, 2);
    let reward = RewardConfig::default();
    let mut out = Vec::new();
    for mode in [EdgeMode::Directed, EdgeMode::UndirectedUnweighted] {
        let net = QNetwork::new(ModelConfig {
            heads: 2,
            head_dim: 3,
            q_hidden: 4,
            edge_mode: mode,
            init_seed: seed,
            ..ModelConfig::for_team(2, 2)
        })
        .expect("valid config");
        let target = QNetwork::new(ModelConfig {
            init_seed: seed + 1,
            ..net.config.clone()
        })
        .expect("valid config");
        let problems: Vec<_> = (0..3)
            .map(|i| Arc::new(gen.generate(seed * 7 + i).expect("generator config is valid")))
            .collect();
        let mut imitation = Vec::new();
        let mut replay = Vec::new();
        for (i, p) in problems.iter().enumerate() {
            let s0 = ScheduleState::new(p.clone());
            let a = Action::new(i % 2, i % 2);
            imitation.push(ImitationSample {
                graph: net.graph(&s0),
                candidates: s0.unscheduled().collect(),
                action: a,
                target: -3.0 - i as f64,
            });
            let out = s0.apply(a, &reward).expect("valid action");
            let next = (!out.terminal).then(|| NextState {
                graph: net.graph(&out.next),
                candidates: out.next.unscheduled().collect(),
            });
            replay.push(DqnSample {
                graph: net.graph(&s0),
                candidates: s0.unscheduled().collect(),
                action: a,
                reward: out.reward,
                next,
            });
        }
        let batch: Vec<&ImitationSample> = imitation.iter().collect();
        let suffix = match mode {
            EdgeMode::Directed => "",
            EdgeMode::UndirectedUnweighted => "/undirected",
        };
        for (label, w) in [("ex", [1.0, 0.0, 0.0]), ("alt", [0.0, 1.0, 0.0]), ("l2", [0.0, 0.0, 1.0])] {
            let (_, grad) = supervised_loss(&net, &batch, 1.0, w);
            let f = |n: &QNetwork| supervised_loss(n, &batch, 1.0, w).0.total;
            out.extend(check(&format!("{label}{suffix}"), &net, &grad, &f));
        }
        let rb: Vec<&DqnSample> = replay.iter().collect();
        let cfg = TrainConfig::default();
        let (_, grad) = dqn_loss(&net, &target, &rb, &cfg);
        let targets = super::loss::dqn_targets(&net, &target, &rb, cfg.gamma);
        // bootstrap targets are held fixed while differencing
        let f = |n: &QNetwork| frozen_dqn(n, &rb, &targets);
        out.extend(check(&format!("dqn{suffix}"), &net, &grad, &f));
    }
    out
}

fn frozen_dqn(net: &QNetwork, batch: &[&DqnSample], y: &[f64]) -> f64 {
    let graphs: Vec<_> = batch.iter().map(|s| &s.graph).collect();
    let gb = crate::neural::GraphBatch::new(&graphs);
    let qs: Vec<_> = batch
        .iter()
        .enumerate()
        .map(|(graph, s)| crate::neural::Query {
            graph,
            task: s.action.task,
        })
        .collect();
    let q = net.forward(&gb, &qs).q;
    batch
        .iter()
        .enumerate()
        .map(|(b, s)| (q[[b, s.action.robot]] - y[b]).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}
