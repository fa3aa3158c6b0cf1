use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{edf_solve, exact_solve, Budget, SolveResult};
use crate::instance::ProblemInstance;
use crate::neural::QNetwork;
use crate::policy::{ensemble_solve_with, rollout_with, RolloutVariant};

use super::HarnessError;

/// A named instance.
pub type Corpus = Vec<(String, Arc<ProblemInstance>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Edf,
    Exact,
    GnnGreedy,
    GnnOpportunistic,
    GnnEnsemble,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Edf,
        Method::Exact,
        Method::GnnGreedy,
        Method::GnnOpportunistic,
        Method::GnnEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Edf => "edf",
            Method::Exact => "exact",
            Method::GnnGreedy => "gnn-greedy",
            Method::GnnOpportunistic => "gnn-opportunistic",
            Method::GnnEnsemble => "gnn-ensemble",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Method::GnnGreedy | Method::GnnOpportunistic | Method::GnnEnsemble)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Usage(format!("unknown method `{s}`")))
    }
}

/// Everything a method may need besides the instance.
#[derive(Debug, Clone, Copy)]
pub struct SolverContext<'a> {
    pub budget: Budget,
    /// Single-model methods use the first entry; the ensemble uses all.
    pub models: &'a [QNetwork],
    pub ensemble_variant: RolloutVariant,
    /// Learned policies skip actions whose insertion is infeasible.
    pub mask_infeasible: bool,
}

impl Default for SolverContext<'_> {
    fn default() -> Self {
        SolverContext {
            budget: Budget::seconds(120.0),
            models: &[],
            ensemble_variant: RolloutVariant::Opportunistic,
            mask_infeasible: false,
        }
    }
}

pub fn solve_one(method: Method, p: &Arc<ProblemInstance>, ctx: &SolverContext) -> Result<SolveResult, HarnessError> {
    if method.needs_model() {
        let Some(first) = ctx.models.first() else {
            return Err(HarnessError::Usage(format!("method {method} needs a model checkpoint")));
        };
        first.check_state(&crate::env::ScheduleState::new(p.clone()))?;
    }
    Ok(match method {
        Method::Edf => edf_solve(p),
        Method::Exact => exact_solve(p, &ctx.budget),
        Method::GnnGreedy => rollout_with(&ctx.models[0], p, RolloutVariant::Greedy, ctx.mask_infeasible),
        Method::GnnOpportunistic => {
            rollout_with(&ctx.models[0], p, RolloutVariant::Opportunistic, ctx.mask_infeasible)
        }
        Method::GnnEnsemble => {
            let refs: Vec<&QNetwork> = ctx.models.iter().collect();
            ensemble_solve_with(&refs, p, ctx.ensemble_variant, ctx.mask_infeasible)
        }
    })
}

/// Solves every instance, in corpus order. `threads` sizes a dedicated pool.
pub fn solve_corpus(
    method: Method,
    corpus: &[(String, Arc<ProblemInstance>)],
    ctx: &SolverContext,
    threads: Option<usize>,
) -> Result<Vec<SolveResult>, HarnessError> {
    let run = || {
        corpus
            .par_iter()
            .map(|(_, p)| solve_one(method, p, ctx))
            .collect::<Result<Vec<_>, _>>()
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::Runtime(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// One (method, instance) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub instance: String,
    pub num_tasks: usize,
    pub solved: bool,
    pub makespan: Option<f64>,
    /// Makespan if solved, `20 * T` otherwise.
    pub adjusted: f64,
    /// `adjusted / exact makespan`; empty when no exact solution is known.
    pub normalized: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub instances: usize,
    pub solved: usize,
    pub proportion_solved: f64,
    pub adjusted_makespan_mean: f64,
    /// Mean over instances with a known exact makespan.
    pub normalized_mean: Option<f64>,
    pub normalized_instances: usize,
    /// Instances left out of the normalized mean.
    pub excluded_from_normalization: Vec<String>,
    pub wall_secs_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summaries: Vec<MethodSummary>,
    pub rows: Vec<EvalRow>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    instance: &'a str,
    num_tasks: usize,
    solved: bool,
    makespan: Option<f64>,
    adjusted: f64,
    normalized: Option<f64>,
}

impl EvalReport {
    /// `results[m].1[i]` is method `m` on `corpus[i]`. `exact`, when given,
    /// is aligned with `corpus` and provides the normalizer.
    pub fn build(
        corpus: &[(String, Arc<ProblemInstance>)],
        results: &[(String, Vec<SolveResult>)],
        exact: Option<&[SolveResult]>,
    ) -> Result<Self, HarnessError> {
        if let Some(e) = exact {
            if e.len() != corpus.len() {
                return Err(HarnessError::Runtime("exact results do not match the corpus".into()));
            }
        }
        let mut rows = Vec::new();
        let mut summaries = Vec::new();
        for (method, rs) in results {
            if rs.len() != corpus.len() {
                return Err(HarnessError::Runtime(format!("{method}: result count does not match the corpus")));
            }
            let mut method_rows = Vec::with_capacity(rs.len());
            for (i, ((name, p), r)) in corpus.iter().zip(rs).enumerate() {
                let adjusted = r.adjusted_makespan(p.num_tasks());
                let reference = exact
                    .map(|e| &e[i])
                    .filter(|e| e.solved)
                    .and_then(|e| e.makespan)
                    .filter(|&m| m > 0.0);
                method_rows.push(EvalRow {
                    method: method.clone(),
                    instance: name.clone(),
                    num_tasks: p.num_tasks(),
                    solved: r.solved,
                    makespan: if r.solved { r.makespan } else { None },
                    adjusted,
                    normalized: reference.map(|m| adjusted / m),
                    wall_secs: r.elapsed_secs,
                });
            }
            summaries.push(summarize(method, &method_rows));
            rows.extend(method_rows);
        }
        Ok(EvalReport { summaries, rows })
    }

    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Per-instance rows without wall times, so identical inputs give
    /// identical bytes.
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                method: &r.method,
                instance: &r.instance,
                num_tasks: r.num_tasks,
                solved: r.solved,
                makespan: r.makespan,
                adjusted: r.adjusted,
                normalized: r.normalized,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// `method,instance,wall_secs` lines.
    pub fn write_timings_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "instance", "wall_secs"])?;
        for r in &self.rows {
            w.write_record([r.method.as_str(), r.instance.as_str(), &r.wall_secs.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summaries).expect("summaries serialize")
    }
}

fn summarize(method: &str, rows: &[EvalRow]) -> MethodSummary {
    let n = rows.len();
    let solved = rows.iter().filter(|r| r.solved).count();
    let normalized: Vec<f64> = rows.iter().filter_map(|r| r.normalized).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let adjusted: Vec<f64> = rows.iter().map(|r| r.adjusted).collect();
    MethodSummary {
        method: method.to_string(),
        instances: n,
        solved,
        proportion_solved: if n == 0 { 0.0 } else { solved as f64 / n as f64 },
        adjusted_makespan_mean: mean(&adjusted).unwrap_or(0.0),
        normalized_mean: mean(&normalized),
        normalized_instances: normalized.len(),
        excluded_from_normalization: rows
            .iter()
            .filter(|r| r.normalized.is_none())
            .map(|r| r.instance.clone())
            .collect(),
        wall_secs_total: rows.iter().map(|r| r.wall_secs).sum(),
    }
}
