//! Directed, edge-weighted multi-head graph attention layer.
//!
//! Per head `k`, node `i` aggregates over incoming neighbors `j`:
//!
//! ```text
//! z_j      = W_k h_j
//! e_ij     = LeakyReLU(a_k . [z_i || z_j || We_k w_ji])
//! alpha_ij = softmax_j(e_ij)
//! h'_i     = ReLU(sum_j alpha_ij (z_j + We_k w_ji))
//! ```
//!
//! Heads are concatenated or averaged. There are no bias terms.

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::graph::GraphBatch;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Concat,
    Average,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub heads: usize,
    pub out_dim: usize,
    pub aggregation: Aggregation,
    /// `in_dim x (heads * out_dim)`; head `k` owns columns `k*F..(k+1)*F`.
    pub w: Array2<f64>,
    /// `heads x out_dim` edge-weight transform.
    pub w_edge: Array2<f64>,
    /// `heads x 3*out_dim`: destination, source and edge parts.
    pub attn: Array2<f64>,
}

/// Values kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct GatCache {
    input: Array2<f64>,
    z: Array2<f64>,
    /// Pre-ReLU aggregate per head, `n x heads*F`.
    pre: Array2<f64>,
    /// Attention logits before LeakyReLU, `edges x heads`.
    logits: Array2<f64>,
    /// Attention coefficients, `edges x heads`.
    alpha: Array2<f64>,
    /// `sum_j alpha_ij w_ji`, `n x heads`.
    beta: Array2<f64>,
}

impl GatCache {
    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }
}

#[inline]
fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

impl GatLayerParams {
    pub fn zeros(in_dim: usize, heads: usize, out_dim: usize, aggregation: Aggregation) -> Self {
        GatLayerParams {
            heads,
            out_dim,
            aggregation,
            w: Array2::zeros((in_dim, heads * out_dim)),
            w_edge: Array2::zeros((heads, out_dim)),
            attn: Array2::zeros((heads, 3 * out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Concat => self.heads * self.out_dim,
            Aggregation::Average => self.out_dim,
        }
    }

    pub fn forward(&self, batch: &GraphBatch, input: &Array2<f64>) -> (Array2<f64>, GatCache) {
        assert_eq!(input.ncols(), self.in_dim(), "layer input width mismatch");
        assert_eq!(input.nrows(), batch.num_nodes(), "layer input height mismatch");
        let (k_heads, f) = (self.heads, self.out_dim);
        let n = input.nrows();
        let n_edges = batch.src.len();
        let z = input.dot(&self.w);

        let mut s_dst = Array2::<f64>::zeros((n, k_heads));
        let mut s_src = Array2::<f64>::zeros((n, k_heads));
        let mut c_edge = vec![0.0; k_heads];
        for k in 0..k_heads {
            let a_dst = self.attn.slice(s![k, 0..f]);
            let a_src = self.attn.slice(s![k, f..2 * f]);
            let a_edge = self.attn.slice(s![k, 2 * f..3 * f]);
            c_edge[k] = dot(a_edge, self.w_edge.row(k));
            for i in 0..n {
                let zi = z.slice(s![i, k * f..(k + 1) * f]);
                s_dst[[i, k]] = dot(a_dst, zi);
                s_src[[i, k]] = dot(a_src, zi);
            }
        }

        let mut logits = Array2::<f64>::zeros((n_edges, k_heads));
        let mut alpha = Array2::<f64>::zeros((n_edges, k_heads));
        let mut beta = Array2::<f64>::zeros((n, k_heads));
        let mut pre = Array2::<f64>::zeros((n, k_heads * f));
        for i in 0..n {
            let range = batch.offsets[i]..batch.offsets[i + 1];
            for k in 0..k_heads {
                let mut max = f64::NEG_INFINITY;
                for e in range.clone() {
                    let u = s_dst[[i, k]] + s_src[[batch.src[e], k]] + batch.weight[e] * c_edge[k];
                    logits[[e, k]] = u;
                    max = max.max(leaky(u));
                }
                let mut total = 0.0;
                for e in range.clone() {
                    let v = (leaky(logits[[e, k]]) - max).exp();
                    alpha[[e, k]] = v;
                    total += v;
                }
                let mut b = 0.0;
                for e in range.clone() {
                    let a = alpha[[e, k]] / total;
                    alpha[[e, k]] = a;
                    b += a * batch.weight[e];
                }
                beta[[i, k]] = b;
                let mut out = pre.slice_mut(s![i, k * f..(k + 1) * f]);
                for e in range.clone() {
                    let zj = z.slice(s![batch.src[e], k * f..(k + 1) * f]);
                    out.scaled_add(alpha[[e, k]], &zj);
                }
                out.scaled_add(b, &self.w_edge.row(k));
            }
        }

        let activated = pre.mapv(|x| x.max(0.0));
        let output = match self.aggregation {
            Aggregation::Concat => activated,
            Aggregation::Average => {
                let mut acc = Array2::<f64>::zeros((n, f));
                for k in 0..k_heads {
                    acc += &activated.slice(s![.., k * f..(k + 1) * f]);
                }
                acc / k_heads as f64
            }
        };
        let cache = GatCache {
            input: input.clone(),
            z,
            pre,
            logits,
            alpha,
            beta,
        };
        (output, cache)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// w.r.t. the layer input when `want_input` is set.
    pub fn backward(
        &self,
        batch: &GraphBatch,
        cache: &GatCache,
        d_out: &Array2<f64>,
        grad: &mut GatLayerParams,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let (k_heads, f) = (self.heads, self.out_dim);
        let n = cache.input.nrows();
        assert_eq!(d_out.dim(), (n, self.output_dim()), "upstream gradient shape mismatch");

        // through ReLU and head aggregation
        let mut d_pre = Array2::<f64>::zeros((n, k_heads * f));
        for i in 0..n {
            for k in 0..k_heads {
                for c in 0..f {
                    let col = k * f + c;
                    if cache.pre[[i, col]] > 0.0 {
                        d_pre[[i, col]] = match self.aggregation {
                            Aggregation::Concat => d_out[[i, col]],
                            Aggregation::Average => d_out[[i, c]] / k_heads as f64,
                        };
                    }
                }
            }
        }

        let mut d_z = Array2::<f64>::zeros((n, k_heads * f));
        let mut d_s_dst = Array2::<f64>::zeros((n, k_heads));
        let mut d_s_src = Array2::<f64>::zeros((n, k_heads));
        let mut d_c_edge = vec![0.0; k_heads];
        let mut d_alpha = Vec::new();
        for i in 0..n {
            let range = batch.offsets[i]..batch.offsets[i + 1];
            for k in 0..k_heads {
                let g = d_pre.slice(s![i, k * f..(k + 1) * f]);
                grad.w_edge
                    .row_mut(k)
                    .scaled_add(cache.beta[[i, k]], &g);
                let d_beta = dot(g, self.w_edge.row(k));
                d_alpha.clear();
                let mut weighted = 0.0;
                for e in range.clone() {
                    let j = batch.src[e];
                    let zj = cache.z.slice(s![j, k * f..(k + 1) * f]);
                    let da = dot(g, zj) + batch.weight[e] * d_beta;
                    let a = cache.alpha[[e, k]];
                    weighted += a * da;
                    d_alpha.push(da);
                    d_z.slice_mut(s![j, k * f..(k + 1) * f]).scaled_add(a, &g);
                }
                for (e, &da) in range.clone().zip(d_alpha.iter()) {
                    let a = cache.alpha[[e, k]];
                    let de = a * (da - weighted);
                    let du = if cache.logits[[e, k]] > 0.0 { de } else { LEAKY_SLOPE * de };
                    d_s_dst[[i, k]] += du;
                    d_s_src[[batch.src[e], k]] += du;
                    d_c_edge[k] += du * batch.weight[e];
                }
            }
        }

        for k in 0..k_heads {
            let cols = k * f..(k + 1) * f;
            let a_dst = self.attn.slice(s![k, 0..f]).to_owned();
            let a_src = self.attn.slice(s![k, f..2 * f]).to_owned();
            for i in 0..n {
                let zi = cache.z.slice(s![i, cols.clone()]);
                let (gd, gs) = (d_s_dst[[i, k]], d_s_src[[i, k]]);
                grad.attn.slice_mut(s![k, 0..f]).scaled_add(gd, &zi);
                grad.attn.slice_mut(s![k, f..2 * f]).scaled_add(gs, &zi);
                let mut dzi = d_z.slice_mut(s![i, cols.clone()]);
                dzi.scaled_add(gd, &a_dst);
                dzi.scaled_add(gs, &a_src);
            }
            let a_edge = self.attn.slice(s![k, 2 * f..3 * f]).to_owned();
            grad.attn
                .slice_mut(s![k, 2 * f..3 * f])
                .scaled_add(d_c_edge[k], &self.w_edge.row(k));
            grad.w_edge.row_mut(k).scaled_add(d_c_edge[k], &a_edge);
        }

        grad.w += &cache.input.t().dot(&d_z);
        want_input.then(|| d_z.dot(&self.w.t()))
    }
}
