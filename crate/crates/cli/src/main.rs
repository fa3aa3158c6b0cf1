use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use robosched::baselines::{Budget, SolveResult};
use robosched::harness::{
    instance_name, solve_corpus, EvalReport, ExperimentConfig, HarnessError, Method, SolverContext,
};
use robosched::instance::ProblemInstance;
use robosched::neural::QNetwork;
use robosched::policy::RolloutVariant;
use robosched::trajectory::{read_records, write_records, Manifest, ManifestEntry};
use robosched::training::{gradient_check, write_metrics_csv, DqnMode, ExpertDataset, Trainer};

#[derive(Parser)]
#[command(name = "robosched", version, about = "Multi-robot scheduling: generate, solve, train, evaluate")]
struct Cli {
    /// Worker threads for per-instance work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one instance file per seed.
    Generate {
        /// Experiment config; its `generator` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Half-open seed range `a..b`.
        #[arg(long, conflicts_with = "seed")]
        seeds: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve instances and print or write the results as JSON.
    Solve {
        #[arg(long)]
        method: String,
        #[command(flatten)]
        solver: SolverArgs,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        instances: Vec<PathBuf>,
    },
    /// Solve instances exactly and write expert trajectories plus a manifest.
    Expert {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 120.0)]
        budget_secs: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        instances: Vec<PathBuf>,
    },
    /// Train a model; writes checkpoints and a metrics CSV.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Expert manifest written by `expert`.
        #[arg(long)]
        expert: Option<PathBuf>,
        /// Self-play instances for the DQN phase; defaults to the manifest's.
        #[arg(long)]
        instances: Vec<PathBuf>,
        /// Start from this checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate methods on a corpus; writes rows, timings and a summary.
    Eval {
        /// Comma-separated or repeated; `exact` also normalizes the others.
        #[arg(long, value_delimiter = ',', required = true)]
        method: Vec<String>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        instances: Vec<PathBuf>,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

#[derive(clap::Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 120.0)]
    budget_secs: f64,
    /// Checkpoints for learned methods; the ensemble uses all of them.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Variant::Opportunistic)]
    ensemble_variant: Variant,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    mask_infeasible: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMode {
    Imitation,
    Dqn,
    Combined,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Greedy,
    Opportunistic,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(HarnessError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Generate { config, seeds, seed, out } => generate(config, seeds, seed, &out),
        Command::Solve {
            method,
            solver,
            out,
            instances,
        } => solve(&method, &solver, out, &instances, cli.threads),
        Command::Expert {
            config,
            budget_secs,
            out,
            instances,
        } => expert(config, budget_secs, &out, &instances),
        Command::Train {
            mode,
            config,
            expert,
            instances,
            init,
            seed,
            out,
        } => train(mode, config, expert, &instances, init, seed, &out),
        Command::Eval {
            method,
            solver,
            out,
            instances,
        } => eval(&method, &solver, &out, &instances, cli.threads),
        Command::Gradcheck { seed, tolerance } => gradcheck(seed, tolerance),
    }
}

fn load_config(path: Option<PathBuf>) -> Result<ExperimentConfig, HarnessError> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))
}

fn parse_seeds(s: &str) -> Result<std::ops::Range<u64>, HarnessError> {
    let bad = || HarnessError::Usage(format!("--seeds expects `a..b`, got `{s}`"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a >= b {
        return Err(bad());
    }
    Ok(a..b)
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn generate(config: Option<PathBuf>, seeds: Option<String>, seed: Option<u64>, out: &Path) -> Result<(), HarnessError> {
    let cfg = load_config(config)?;
    let range = match (seeds, seed) {
        (Some(s), _) => parse_seeds(&s)?,
        (None, Some(s)) => s..s + 1,
        (None, None) => return Err(HarnessError::Usage("give --seeds a..b or --seed n".into())),
    };
    cfg.generator
        .validate()
        .map_err(|e| HarnessError::Usage(e.to_string()))?;
    create_dir(out)?;
    for s in range {
        let p = cfg.generator.generate(s)?;
        p.save(out.join(format!("{}.json", instance_name(s))))?;
    }
    Ok(())
}

fn load_instances(paths: &[PathBuf]) -> Result<Vec<(String, Arc<ProblemInstance>)>, HarnessError> {
    let mut corpus: Vec<(String, Arc<ProblemInstance>)> = paths
        .iter()
        .map(|p| Ok((p.display().to_string(), Arc::new(ProblemInstance::load(p)?))))
        .collect::<Result<_, HarnessError>>()?;
    corpus.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(corpus)
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<QNetwork>, HarnessError> {
    paths.iter().map(|p| Ok(QNetwork::load(p)?)).collect()
}

fn context<'a>(args: &SolverArgs, models: &'a [QNetwork]) -> Result<SolverContext<'a>, HarnessError> {
    if !(args.budget_secs > 0.0 && args.budget_secs.is_finite()) {
        return Err(HarnessError::Usage("--budget-secs must be positive".into()));
    }
    Ok(SolverContext {
        budget: Budget::seconds(args.budget_secs),
        models,
        ensemble_variant: match args.ensemble_variant {
            Variant::Greedy => RolloutVariant::Greedy,
            Variant::Opportunistic => RolloutVariant::Opportunistic,
        },
        mask_infeasible: args.mask_infeasible,
    })
}

#[derive(Serialize)]
struct NamedResult<'a> {
    instance: &'a str,
    method: &'a str,
    result: &'a SolveResult,
}

fn solve(
    method: &str,
    args: &SolverArgs,
    out: Option<PathBuf>,
    paths: &[PathBuf],
    threads: Option<usize>,
) -> Result<(), HarnessError> {
    let method: Method = method.parse()?;
    let models = load_models(&args.model)?;
    let ctx = context(args, &models)?;
    let corpus = load_instances(paths)?;
    let results = solve_corpus(method, &corpus, &ctx, threads)?;
    let named: Vec<NamedResult> = corpus
        .iter()
        .zip(&results)
        .map(|((name, _), r)| NamedResult {
            instance: name,
            method: method.name(),
            result: r,
        })
        .collect();
    let text = serde_json::to_string_pretty(&named)?;
    match out {
        Some(path) => write_file(&path, text + "\n"),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

const TRAJECTORY_FILE: &str = "trajectories.jsonl";

fn expert(config: Option<PathBuf>, budget_secs: f64, out: &Path, paths: &[PathBuf]) -> Result<(), HarnessError> {
    let cfg = load_config(config)?;
    if !(budget_secs > 0.0 && budget_secs.is_finite()) {
        return Err(HarnessError::Usage("--budget-secs must be positive".into()));
    }
    let corpus = load_instances(paths)?;
    let (data, results) = ExpertDataset::build(&corpus, &Budget::seconds(budget_secs), &cfg.train.reward)?;
    create_dir(out)?;
    let mut lines = Vec::new();
    write_records(&mut lines, &data.to_records()).map_err(|e| HarnessError::io(out, e))?;
    write_file(&out.join(TRAJECTORY_FILE), lines)?;
    let manifest = Manifest {
        version: 1,
        trajectories: TRAJECTORY_FILE.into(),
        entries: corpus
            .iter()
            .zip(&results)
            .map(|((name, _), r)| ManifestEntry {
                instance: name.clone(),
                solved: r.solved,
                proven_optimal: r.proven_optimal,
                makespan: r.makespan,
            })
            .collect(),
    };
    write_file(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let solved = results.iter().filter(|r| r.solved).count();
    println!("{solved}/{} instances solved, {} expert steps", corpus.len(), data.num_steps());
    Ok(())
}

/// Resolves a manifest entry against the working directory, then against
/// the manifest's own directory.
fn resolve(entry: &str, manifest_dir: &Path) -> PathBuf {
    let direct = PathBuf::from(entry);
    if direct.exists() {
        direct
    } else {
        manifest_dir.join(entry)
    }
}

fn load_expert(path: &Path, cfg: &ExperimentConfig) -> Result<(ExpertDataset, Vec<Arc<ProblemInstance>>), HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let manifest = Manifest::from_json(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut by_name = HashMap::new();
    let mut problems = Vec::new();
    for entry in &manifest.entries {
        let p = Arc::new(ProblemInstance::load(resolve(&entry.instance, dir))?);
        by_name.insert(entry.instance.clone(), p.clone());
        problems.push(p);
    }
    let traj_path = dir.join(&manifest.trajectories);
    let file = fs::File::open(&traj_path).map_err(|e| HarnessError::io(&traj_path, e))?;
    let records = read_records(std::io::BufReader::new(file)).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let data = ExpertDataset::from_records(&by_name, &records, &cfg.train.reward)?;
    Ok((data, problems))
}

fn train(
    mode: TrainMode,
    config: Option<PathBuf>,
    expert: Option<PathBuf>,
    instance_paths: &[PathBuf],
    init: Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), HarnessError> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.train.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
    let (data, mut problems) = match &expert {
        Some(path) => {
            let (d, p) = load_expert(path, &cfg)?;
            (Some(d), p)
        }
        None => (None, Vec::new()),
    };
    if !instance_paths.is_empty() {
        problems = load_instances(instance_paths)?.into_iter().map(|(_, p)| p).collect();
    }
    let net = match init {
        Some(path) => QNetwork::load(path)?,
        None => QNetwork::new(cfg.model.clone())?,
    };
    let mut train_cfg = cfg.train.clone();
    if matches!(mode, TrainMode::Dqn) {
        train_cfg.dqn_mode = DqnMode::DqnOnly;
    }
    let mut trainer = Trainer::new(net, train_cfg.clone())?;
    if matches!(mode, TrainMode::Imitation | TrainMode::Combined) {
        let data = data
            .as_ref()
            .ok_or_else(|| HarnessError::Usage("imitation needs --expert".into()))?;
        trainer.train_imitation(data, train_cfg.imitation_steps)?;
    }
    if matches!(mode, TrainMode::Dqn | TrainMode::Combined) && train_cfg.dqn_steps > 0 {
        if problems.is_empty() {
            return Err(HarnessError::Usage("the DQN phase needs instances (--instances or --expert)".into()));
        }
        let expert_ref = match train_cfg.dqn_mode {
            DqnMode::Combined => Some(
                data.as_ref()
                    .ok_or_else(|| HarnessError::Usage("combined DQN needs --expert".into()))?,
            ),
            DqnMode::DqnOnly => None,
        };
        trainer.train_dqn(&problems, train_cfg.dqn_steps, expert_ref)?;
    }
    create_dir(out)?;
    trainer.net.save(out.join("model.json"))?;
    for (step, snap) in &trainer.snapshots {
        snap.save(out.join(format!("snapshot-{step:07}.json")))?;
    }
    let mut csv_bytes = Vec::new();
    write_metrics_csv(&mut csv_bytes, &trainer.metrics)?;
    write_file(&out.join("metrics.csv"), csv_bytes)?;
    println!("{} steps, model written to {}", trainer.step, out.join("model.json").display());
    Ok(())
}

fn eval(
    methods: &[String],
    args: &SolverArgs,
    out: &Path,
    paths: &[PathBuf],
    threads: Option<usize>,
) -> Result<(), HarnessError> {
    let methods: Vec<Method> = methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    let models = load_models(&args.model)?;
    let ctx = context(args, &models)?;
    let corpus = load_instances(paths)?;
    let mut results = Vec::new();
    let mut exact = None;
    for m in &methods {
        let rs = solve_corpus(*m, &corpus, &ctx, threads)?;
        if *m == Method::Exact {
            exact = Some(rs.clone());
        }
        results.push((m.name().to_string(), rs));
    }
    let report = EvalReport::build(&corpus, &results, exact.as_deref())?;
    create_dir(out)?;
    let mut rows = Vec::new();
    report.write_rows_csv(&mut rows)?;
    write_file(&out.join("rows.csv"), rows)?;
    let mut timings = Vec::new();
    report.write_timings_csv(&mut timings)?;
    write_file(&out.join("timings.csv"), timings)?;
    write_file(&out.join("summary.json"), report.summary_json() + "\n")?;
    for s in &report.summaries {
        let norm = s.normalized_mean.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<18} solved {:>4}/{:<4} ({:.3})  adjusted {:.3}  normalized {norm}",
            s.method, s.solved, s.instances, s.proportion_solved, s.adjusted_makespan_mean
        );
    }
    Ok(())
}

fn gradcheck(seed: u64, tolerance: f64) -> Result<(), HarnessError> {
    let entries = gradient_check(seed);
    let mut failed = 0;
    for e in &entries {
        let ok = e.max_rel_error < tolerance;
        failed += usize::from(!ok);
        println!(
            "{:<6} {:<22} {:<16} {:.3e}",
            if ok { "ok" } else { "FAIL" },
            e.loss,
            e.tensor,
            e.max_rel_error
        );
    }
    if failed > 0 {
        return Err(HarnessError::Runtime(format!("{failed} gradient checks above {tolerance}")));
    }
    Ok(())
}
