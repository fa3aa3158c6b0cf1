use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robosched::neural::*;
use robosched::stn::UNBOUNDED;
use robosched::*;

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Naive per-node, per-head evaluation straight from the distance matrix.
fn reference_q(net: &QNetwork, state: &ScheduleState) -> Vec<(usize, Vec<f64>)> {
    let d = state.stn().distances();
    let n = d.len();
    let directed = net.config.edge_mode == EdgeMode::Directed;
    let mut h: Vec<Vec<f64>> = encode_node_features(state).outer_iter().map(|r| r.to_vec()).collect();
    for layer in &net.params.layers {
        let (heads, f) = (layer.heads, layer.out_dim);
        let z: Vec<Vec<f64>> = h
            .iter()
            .map(|x| {
                (0..heads * f)
                    .map(|c| x.iter().enumerate().map(|(r, v)| v * layer.w[[r, c]]).sum())
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let neigh: Vec<(usize, f64)> = (0..n)
                .filter_map(|j| {
                    if j == i {
                        return Some((j, 0.0));
                    }
                    if directed {
                        let w = d.get(j, i);
                        (w != UNBOUNDED).then_some((j, w))
                    } else {
                        (d.get(j, i) != UNBOUNDED || d.get(i, j) != UNBOUNDED).then_some((j, 0.0))
                    }
                })
                .collect();
            let mut per_head = Vec::new();
            for k in 0..heads {
                let zk = |node: usize, c: usize| z[node][k * f + c];
                let we = |c: usize| layer.w_edge[[k, c]];
                let logits: Vec<f64> = neigh
                    .iter()
                    .map(|&(j, w)| {
                        let mut u = 0.0;
                        for c in 0..f {
                            u += layer.attn[[k, c]] * zk(i, c);
                            u += layer.attn[[k, f + c]] * zk(j, c);
                            u += layer.attn[[k, 2 * f + c]] * we(c) * w;
                        }
                        leaky(u)
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let total: f64 = ex.iter().sum();
                let agg: Vec<f64> = (0..f)
                    .map(|c| {
                        neigh
                            .iter()
                            .zip(&ex)
                            .map(|(&(j, w), e)| e / total * (zk(j, c) + we(c) * w))
                            .sum::<f64>()
                            .max(0.0)
                    })
                    .collect();
                per_head.push(agg);
            }
            out.push(match layer.aggregation {
                Aggregation::Concat => per_head.concat(),
                Aggregation::Average => (0..f).map(|c| per_head.iter().map(|hd| hd[c]).sum::<f64>() / heads as f64).collect(),
            });
        }
        h = out;
    }
    let width = h[0].len();
    let hg: Vec<f64> = (0..width).map(|c| h.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
    let head = &net.params.head;
    state
        .unscheduled()
        .map(|task| {
            let (s, f) = (2 + 2 * task, 3 + 2 * task);
            let x: Vec<f64> = hg.iter().cloned().chain((0..width).map(|c| (h[s][c] + h[f][c]) / 2.0)).collect();
            let hidden: Vec<f64> = (0..head.w1.ncols())
                .map(|c| (head.b1[[0, c]] + x.iter().enumerate().map(|(r, v)| v * head.w1[[r, c]]).sum::<f64>()).max(0.0))
                .collect();
            let q = (0..head.w2.ncols())
                .map(|c| head.b2[[0, c]] + hidden.iter().enumerate().map(|(r, v)| v * head.w2[[r, c]]).sum::<f64>())
                .collect();
            (task, q)
        })
        .collect()
}

fn partial(seed: u64, steps: usize) -> ScheduleState {
    let p = Arc::new(GeneratorConfig::with_tasks(4, 6).generate(seed).unwrap());
    let mut s = ScheduleState::new(p);
    for _ in 0..steps {
        let acts = s.actions(true);
        if acts.is_empty() {
            break;
        }
        s = s.apply(acts[0], &RewardConfig::default()).unwrap().next;
    }
    s
}

#[test]
fn forward_matches_reference_recomputation() {
    for (mode, seed) in [(EdgeMode::Directed, 1), (EdgeMode::UndirectedUnweighted, 2)] {
        let cfg = ModelConfig {
            heads: 3,
            head_dim: 5,
            q_hidden: 7,
            edge_mode: mode,
            init_seed: seed,
            ..ModelConfig::for_team(2, 2)
        };
        let mut net = QNetwork::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in net.params.tensors_mut() {
            t.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        for steps in [0, 2, 3] {
            let s = partial(seed * 10 + steps as u64, steps);
            let got = net.state_q_values(&s);
            let want = reference_q(&net, &s);
            assert_eq!(got.len(), want.len());
            for ((ta, qa), (tb, qb)) in got.iter().zip(&want) {
                assert_eq!(ta, tb);
                for (a, b) in qa.iter().zip(qb) {
                    assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{mode:?}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn embeddings_match_column_means() {
    let net = QNetwork::new(ModelConfig {
        heads: 2,
        head_dim: 4,
        ..ModelConfig::for_team(2, 2)
    })
    .unwrap();
    let s = partial(4, 2);
    let g = net.graph(&s);
    let batch = GraphBatch::new(&[&g]);
    let (emb, _) = net.encode(&batch);
    let hg = graph_embedding(&batch, &emb, 0);
    for c in 0..emb.ncols() {
        let mean = (0..emb.nrows()).map(|r| emb[[r, c]]).sum::<f64>() / emb.nrows() as f64;
        assert!((hg[c] - mean).abs() < 1e-12);
    }
    let ht = task_embedding(&batch, &emb, 0, 1);
    for c in 0..emb.ncols() {
        assert!((ht[c] - (emb[[4, c]] + emb[[5, c]]) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn feature_rows_follow_the_layout() {
    let p = common_instance();
    let s = ScheduleState::new(p.clone());
    let s = s.apply(Action::new(0, 1), &RewardConfig::default()).unwrap().next;
    let x = encode_node_features(&s);
    assert_eq!(x.ncols(), 7);
    assert_eq!(x.row(2).to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    assert_eq!(x.row(0).to_vec(), vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    assert_eq!(x.row(1).to_vec(), vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(x.row(5).to_vec(), vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
}

fn common_instance() -> Arc<ProblemInstance> {
    Arc::new(ProblemInstance {
        num_robots: 2,
        num_locations: 2,
        tasks: vec![
            TaskSpec { id: 0, duration: 3.0, deadline: None, location: 0 },
            TaskSpec { id: 1, duration: 2.0, deadline: Some(9.0), location: 1 },
        ],
        waits: vec![],
        seed: 0,
    })
}

#[test]
fn one_parameter_set_runs_on_any_task_count() {
    let net = QNetwork::new(ModelConfig::for_team(2, 2)).unwrap();
    for t in [5, 20, 50] {
        let p = Arc::new(GeneratorConfig::with_tasks(t, t).generate(1).unwrap());
        let q = net.state_q_values(&ScheduleState::new(p));
        assert_eq!(q.len(), t);
        assert!(q.iter().all(|(_, v)| v.len() == 2 && v.iter().all(|x| x.is_finite())));
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = QNetwork::new(ModelConfig {
        init_seed: 99,
        ..ModelConfig::for_team(2, 2)
    })
    .unwrap();
    let path = dir.path().join("m.json");
    net.save(&path).unwrap();
    assert_eq!(QNetwork::load(&path).unwrap(), net);
    std::fs::write(&path, "{\"version\": 1}").unwrap();
    assert!(QNetwork::load(&path).is_err());
}
