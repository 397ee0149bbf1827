//! The outer meta-learning loop, regret accounting and the sweeps built on it.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{Environment, SyntheticWorld};
use crate::error::{Error, Result};
use crate::policy::{PolicyConfig, PolicyKind, TaskPolicy};
use crate::subspace::{projection_error_metric, ProjectionPair, SubspaceModel};

/// Random stream ids; every seed owns one ChaCha stream per purpose so
/// that, e.g., a policy drawing more samples never shifts the contexts.
pub mod streams {
    pub const TASKS: u64 = 0;
    pub const ROUNDS: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const HELD_OUT: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How the learned policies pick `p = rank(P̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RankMode {
    /// Largest eigengap of the CCIPCA spectrum.
    #[default]
    Auto,
    Fixed(usize),
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankMode::Auto => f.write_str("auto"),
            RankMode::Fixed(p) => write!(f, "fixed:{p}"),
        }
    }
}

impl FromStr for RankMode {
    type Err = Error;

    /// `auto`, `fixed:<p>` or a bare `<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RankMode::Auto);
        }
        let num = s.strip_prefix("fixed:").unwrap_or(s);
        num.parse()
            .map(RankMode::Fixed)
            .map_err(|_| Error::InvalidConfig(format!("bad rank mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub num_tasks: usize,
    pub rounds_per_task: usize,
    pub policy: PolicyKind,
    pub policy_config: PolicyConfig,
    pub seeds: Vec<u64>,
    pub rank_mode: RankMode,
    /// Tasks run without meta-knowledge before the learned projection is
    /// trusted. `None` means `d`.
    pub init_tasks: Option<usize>,
}

impl ExperimentConfig {
    /// Default policy hyperparameters for `dim`, seed list `[0]`, auto rank.
    pub fn new(policy: PolicyKind, dim: usize, num_tasks: usize, rounds: usize, v_bound: f64) -> Self {
        Self {
            num_tasks,
            rounds_per_task: rounds,
            policy,
            policy_config: PolicyConfig::defaults(dim, rounds, v_bound),
            seeds: vec![0],
            rank_mode: RankMode::Auto,
            init_tasks: None,
        }
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn with_policy(mut self, policy: PolicyKind) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_tasks == 0 {
            return bad("num_tasks must be >= 1".into());
        }
        if self.rounds_per_task == 0 {
            return bad("rounds_per_task must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if let RankMode::Fixed(p) = self.rank_mode {
            if p == 0 || p > dim {
                return bad(format!("fixed rank {p} outside 1..={dim}"));
            }
        }
        self.policy_config.validate()
    }

    /// Number of leading tasks run with `P̂ = I` by the learned policies.
    pub fn init_len(&self, dim: usize) -> usize {
        self.init_tasks.unwrap_or(dim)
    }

    /// sha256 over the config and the environment description.
    pub fn content_hash(&self, env_description: &serde_json::Value) -> String {
        let doc = serde_json::json!({ "experiment": self, "environment": env_description });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }
}

/// Instantaneous regret of every round of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTrace {
    pub seed: u64,
    pub task: usize,
    pub inst_regret: Vec<f64>,
}

impl TaskTrace {
    pub fn total(&self) -> f64 {
        self.inst_regret.iter().sum()
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.inst_regret
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretLog {
    pub policy: String,
    pub config_hash: String,
    /// Ordered by seed (in config order), then task.
    pub traces: Vec<TaskTrace>,
    pub failed_seeds: Vec<(u64, String)>,
}

impl RegretLog {
    /// Seeds that completed, in order.
    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for t in &self.traces {
            if out.last() != Some(&t.seed) {
                out.push(t.seed);
            }
        }
        out
    }

    /// Total regret over all tasks, per completed seed.
    pub fn total_by_seed(&self) -> Vec<(u64, f64)> {
        self.seeds()
            .into_iter()
            .map(|s| {
                let total = self.traces.iter().filter(|t| t.seed == s).map(TaskTrace::total).sum();
                (s, total)
            })
            .collect()
    }

    /// Seed-averaged total regret and its standard error.
    pub fn mean_total(&self) -> (f64, f64) {
        let totals: Vec<f64> = self.total_by_seed().into_iter().map(|(_, t)| t).collect();
        mean_and_stderr(&totals)
    }
}

/// Sample mean and `s/√n` (zero for a single sample).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Pair and effective config for task `t` under `kind`.
fn task_pair(
    kind: PolicyKind,
    t: usize,
    model: &SubspaceModel,
    cfg: &ExperimentConfig,
    truth: Option<&ProjectionPair>,
) -> Result<(ProjectionPair, PolicyConfig)> {
    let d = model.dim();
    let pc = cfg.policy_config;
    Ok(match kind {
        PolicyKind::LinUcb | PolicyKind::Ts => (ProjectionPair::identity(d), pc.plain_ridge()),
        PolicyKind::OracleUcb | PolicyKind::OracleTs => {
            let pair = truth.ok_or_else(|| {
                Error::InvalidConfig("oracle policies need an environment with a known projection".into())
            })?;
            (pair.clone(), pc)
        }
        PolicyKind::BOful => (ProjectionPair::full_bias(model.running_mean()), pc),
        PolicyKind::PLinUcb | PolicyKind::PTs => {
            if t < cfg.init_len(d) {
                (ProjectionPair::identity(d), pc)
            } else {
                let p = match cfg.rank_mode {
                    RankMode::Auto => model.select_rank()?,
                    RankMode::Fixed(p) => p,
                };
                (model.build_projections(p)?, pc)
            }
        }
    })
}

/// One seed of the meta-learning loop. `after_task(t, model)` sees the
/// subspace model right after it absorbed task `t`.
fn run_seed<E: Environment>(
    env: &E,
    cfg: &ExperimentConfig,
    seed: u64,
    truth: Option<&ProjectionPair>,
    mut after_task: impl FnMut(usize, &SubspaceModel) -> Result<()>,
) -> Result<Vec<TaskTrace>> {
    let d = env.dim();
    let tasks = env.sample_tasks(cfg.num_tasks, &mut stream_rng(seed, streams::TASKS))?;
    let mut round_rng = stream_rng(seed, streams::ROUNDS);
    let mut noise_rng = stream_rng(seed, streams::NOISE);
    let mut policy_rng = stream_rng(seed, streams::POLICY);
    let mut model = SubspaceModel::new(d);
    let mut traces = Vec::with_capacity(tasks.len());

    for (t, task) in tasks.iter().enumerate() {
        let (pair, pc) = task_pair(cfg.policy, t, &model, cfg, truth)?;
        let mut policy = TaskPolicy::new(cfg.policy, &pair, pc)?;
        let mut inst_regret = Vec::with_capacity(cfg.rounds_per_task);
        for _ in 0..cfg.rounds_per_task {
            let round = env.round(task, &mut round_rng)?;
            let arm = policy.select(&round.arms, &mut policy_rng)?;
            let reward = round.reward(arm, &mut noise_rng);
            inst_regret.push(round.regret(arm));
            policy.update(&round.arms.context(arm), reward)?;
        }
        model.update(&policy.state().ridge_estimate()?)?;
        after_task(t, &model)?;
        traces.push(TaskTrace {
            seed,
            task: t,
            inst_regret,
        });
    }
    Ok(traces)
}

/// Runs every seed (in parallel) and merges the traces. A seed that hits an
/// error is recorded in `failed_seeds` and skipped.
pub fn run_experiment<E: Environment>(env: &E, cfg: &ExperimentConfig) -> Result<RegretLog> {
    cfg.validate(env.dim())?;
    let truth = env.true_projection();
    if cfg.policy.is_oracle() && truth.is_none() {
        return Err(Error::InvalidConfig(format!(
            "{} needs an environment with a known projection",
            cfg.policy
        )));
    }
    let results: Vec<(u64, Result<Vec<TaskTrace>>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(env, cfg, seed, truth.as_ref(), |_, _| Ok(()))))
        .collect();
    let mut log = RegretLog {
        policy: cfg.policy.name().to_string(),
        config_hash: cfg.content_hash(&env.describe()),
        traces: Vec::new(),
        failed_seeds: Vec::new(),
    };
    for (seed, r) in results {
        match r {
            Ok(t) => log.traces.extend(t),
            Err(e) => log.failed_seeds.push((seed, e.to_string())),
        }
    }
    Ok(log)
}

/// Mean curve with a standard-error band.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Number of curves averaged.
    pub samples: usize,
}

impl RegretCurve {
    fn from_rows(rows: &[Vec<f64>]) -> Self {
        let len = rows.iter().map(Vec::len).min().unwrap_or(0);
        let (mean, stderr) = (0..len)
            .map(|k| {
                let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                mean_and_stderr(&col)
            })
            .unzip();
        Self {
            mean,
            stderr,
            samples: rows.len(),
        }
    }
}

/// Cumulative regret up to round `k`, averaged over every (seed, task).
pub fn expected_transfer_regret(log: &RegretLog) -> RegretCurve {
    let rows: Vec<Vec<f64>> = log.traces.iter().map(TaskTrace::cumulative).collect();
    RegretCurve::from_rows(&rows)
}

/// Running sum over tasks of per-task total regret, averaged over seeds.
pub fn cumulative_regret_over_tasks(log: &RegretLog) -> RegretCurve {
    let rows: Vec<Vec<f64>> = log
        .seeds()
        .into_iter()
        .map(|s| {
            let mut acc = 0.0;
            log.traces
                .iter()
                .filter(|t| t.seed == s)
                .map(|t| {
                    acc += t.total();
                    acc
                })
                .collect()
        })
        .collect();
    RegretCurve::from_rows(&rows)
}

/// One run per `q = rank(P̂⊥)`: classic LinUCB at `q = 0`, otherwise
/// P-LinUCB with the rank fixed to `d − q`. Sweep points run in parallel.
pub fn rank_sweep<E: Environment>(
    env: &E,
    cfg: &ExperimentConfig,
    q_values: &[usize],
) -> Result<Vec<(usize, RegretLog)>> {
    let d = env.dim();
    if let Some(&q) = q_values.iter().find(|&&q| q >= d) {
        return Err(Error::InvalidConfig(format!("q = {q} outside 0..{d}")));
    }
    q_values
        .par_iter()
        .map(|&q| {
            let point = if q == 0 {
                ExperimentConfig {
                    policy: PolicyKind::LinUcb,
                    ..cfg.clone()
                }
            } else {
                ExperimentConfig {
                    policy: PolicyKind::PLinUcb,
                    rank_mode: RankMode::Fixed(d - q),
                    ..cfg.clone()
                }
            };
            Ok((q, run_experiment(env, &point)?))
        })
        .collect()
}

/// Relative error `|E[W]²/Var_ρ − 1|` after one task.
#[derive(Debug, Clone, PartialEq)]
pub struct WErrorRow {
    pub seed: u64,
    pub task: usize,
    /// The learned pair for the next task is still the init-phase `P̂ = I`.
    pub init: bool,
    /// Pair the learned policy would use for the next task.
    pub learned: f64,
    /// `P̂⊥ = I` toward the same running mean.
    pub full_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WErrorCurve {
    pub rows: Vec<WErrorRow>,
    pub failed_seeds: Vec<(u64, String)>,
}

impl WErrorCurve {
    /// Seed-averaged `(learned, full_bias)` per task.
    pub fn mean_by_task(&self) -> Vec<(f64, f64)> {
        let tasks = self.rows.iter().map(|r| r.task + 1).max().unwrap_or(0);
        (0..tasks)
            .map(|t| {
                let rows: Vec<&WErrorRow> = self.rows.iter().filter(|r| r.task == t).collect();
                let n = rows.len() as f64;
                (
                    rows.iter().map(|r| r.learned).sum::<f64>() / n,
                    rows.iter().map(|r| r.full_bias).sum::<f64>() / n,
                )
            })
            .collect()
    }
}

/// `|(mean W)²/Var_ρ − 1|` over held-out parameters.
pub fn relative_w_error(pair: &ProjectionPair, held_out: &[DVector<f64>], mean: &DVector<f64>, var: f64) -> f64 {
    let w = held_out
        .iter()
        .map(|th| projection_error_metric(pair, th, mean))
        .sum::<f64>()
        / held_out.len() as f64;
    (w * w / var - 1.0).abs()
}

/// Runs the learned policy of `cfg` and, after every task, scores the
/// projection it would use next against `held_out` fresh task draws.
pub fn w_error_curve(env: &SyntheticWorld, cfg: &ExperimentConfig, held_out: usize) -> Result<WErrorCurve> {
    cfg.validate(env.dim())?;
    let var = env.spec().task_variance;
    if !(var > 0.0) || env.spec().true_rank == env.spec().dim {
        return Err(Error::InvalidConfig(
            "the W error needs a positive off-subspace task variance".into(),
        ));
    }
    if held_out == 0 {
        return Err(Error::InvalidConfig("held_out must be >= 1".into()));
    }
    let learned_kind = if cfg.policy.uses_sampling() {
        PolicyKind::PTs
    } else {
        PolicyKind::PLinUcb
    };
    let run_cfg = ExperimentConfig {
        policy: learned_kind,
        ..cfg.clone()
    };
    let d = env.dim();
    let results: Vec<(u64, Result<Vec<WErrorRow>>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = stream_rng(seed, streams::HELD_OUT);
            let mut rows = Vec::new();
            let r = run_seed(env, &run_cfg, seed, None, |t, model| {
                let draws: Vec<DVector<f64>> =
                    (0..held_out).map(|_| env.gen_task(&mut rng).theta_star).collect();
                let (learned, _) = task_pair(learned_kind, t + 1, model, &run_cfg, None)?;
                let bias = ProjectionPair::full_bias(model.running_mean());
                rows.push(WErrorRow {
                    seed,
                    task: t,
                    init: t + 1 < run_cfg.init_len(d),
                    learned: relative_w_error(&learned, &draws, model.running_mean(), var),
                    full_bias: relative_w_error(&bias, &draws, model.running_mean(), var),
                });
                Ok(())
            });
            (seed, r.map(|_| rows))
        })
        .collect();
    let mut curve = WErrorCurve {
        rows: Vec::new(),
        failed_seeds: Vec::new(),
    };
    for (seed, r) in results {
        match r {
            Ok(rows) => curve.rows.extend(rows),
            Err(e) => curve.failed_seeds.push((seed, e.to_string())),
        }
    }
    Ok(curve)
}
