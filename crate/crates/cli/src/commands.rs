//! Subcommand bodies: build the environment, run, write CSVs and a manifest.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use metaband::report::{
    curve_rows, tagged_name, write_rank_sweep_csv, write_regret_csv, write_summary_csv,
    write_task_summary_csv, write_w_error_csv,
};
use metaband::selfcheck;
use metaband::{
    cumulative_regret_over_tasks, expected_transfer_regret, Environment, ExperimentConfig,
    MovieLensEnv, RegretLog, RunManifest, SyntheticWorld,
};
use serde_json::json;

use crate::settings::{Flags, Settings};
use crate::Failure;

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn out_dir(s: &Settings) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(&s.out).map_err(|e| Failure::Data(format!("{}: {e}", s.out.display())))?;
    Ok(s.out.clone())
}

struct Clock {
    started_at: u64,
    start: Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            started_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            start: Instant::now(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    dir: &Path,
    argv: &[String],
    config: serde_json::Value,
    environment: serde_json::Value,
    hash: &str,
    seeds: Vec<u64>,
    failed_seeds: Vec<(u64, String)>,
    clock: &Clock,
    outputs: Vec<PathBuf>,
) -> Result<PathBuf, Failure> {
    let path = dir.join(tagged_name("manifest", hash, "json"));
    RunManifest {
        command: argv.join(" "),
        config,
        environment,
        config_hash: hash.to_string(),
        seeds,
        failed_seeds,
        started_at: clock.started_at,
        wall_clock_secs: clock.start.elapsed().as_secs_f64(),
        outputs,
    }
    .write(&path)?;
    Ok(path)
}

fn report_failures(label: &str, failed: &[(u64, String)], total: usize) -> Result<(), Failure> {
    for (seed, msg) in failed {
        eprintln!("warning: {label}: seed {seed} failed: {msg}");
    }
    if failed.len() == total {
        return Err(Failure::Data(format!("{label}: every seed failed")));
    }
    Ok(())
}

/// Runs each requested policy and writes raw, per-round and per-task CSVs
/// plus a manifest per policy.
fn run_policies<E: Environment>(env: &E, s: &Settings, argv: &[String]) -> Result<(), Failure> {
    let dir = out_dir(s)?;
    let env_desc = env.describe();
    for &kind in &s.policies {
        let clock = Clock::start();
        let cfg: ExperimentConfig = s.for_policy(kind);
        let log: RegretLog = metaband::run_experiment(env, &cfg)?;
        report_failures(kind.name(), &log.failed_seeds, cfg.seeds.len())?;
        let hash = &log.config_hash;
        let raw = dir.join(tagged_name(&format!("regret-{kind}"), hash, "csv"));
        let rounds = dir.join(tagged_name(&format!("summary-rounds-{kind}"), hash, "csv"));
        let tasks = dir.join(tagged_name(&format!("summary-tasks-{kind}"), hash, "csv"));
        write_regret_csv(&log, &raw)?;
        write_summary_csv(&rounds, &curve_rows(kind.name(), &expected_transfer_regret(&log)))?;
        write_task_summary_csv(&tasks, &curve_rows(kind.name(), &cumulative_regret_over_tasks(&log)))?;
        let manifest = write_manifest(
            &dir,
            argv,
            json!(cfg),
            env_desc.clone(),
            hash,
            log.seeds(),
            log.failed_seeds.clone(),
            &clock,
            vec![raw, rounds, tasks],
        )?;
        let (mean, se) = log.mean_total();
        println!(
            "{kind}: mean total regret {mean:.3} ± {se:.3} over {} seeds ({})",
            log.seeds().len(),
            manifest.display()
        );
    }
    Ok(())
}

fn synthetic_world(s: &Settings) -> Result<SyntheticWorld, Failure> {
    Ok(SyntheticWorld::new(s.spec.clone())?)
}

pub fn synth(flags: &Flags, argv: &[String]) -> Result<(), Failure> {
    let s = Settings::resolve(flags, None).map_err(usage)?;
    let world = synthetic_world(&s)?;
    run_policies(&world, &s, argv)
}

pub fn movielens(flags: &Flags, argv: &[String]) -> Result<(), Failure> {
    let s = Settings::resolve(flags, Some(metaband::env::GENRES.len())).map_err(usage)?;
    if let Some(k) = s.policies.iter().find(|k| k.is_oracle()) {
        return Err(usage(format!("{k} needs a known task population; not available for MovieLens")));
    }
    let dir = s
        .data_path
        .clone()
        .ok_or_else(|| usage("--data-path (or MOVIELENS_PATH) is required"))?;
    let env = MovieLensEnv::load(&dir, s.group, s.spec.arms_per_round).map_err(|e| Failure::Data(e.to_string()))?;
    println!("loaded {} users of group {} from {}", env.users().len(), env.group(), dir.display());
    run_policies(&env, &s, argv)
}

pub fn rank_sweep(flags: &Flags, argv: &[String]) -> Result<(), Failure> {
    let s = Settings::resolve(flags, None).map_err(usage)?;
    let world = synthetic_world(&s)?;
    let d = world.dim();
    let qs = s.q_values.clone().unwrap_or_else(|| (0..d).collect());
    let cfg = s.experiment.clone();
    let env_desc = json!({ "environment": world.describe(), "q_values": qs });
    let hash = cfg.content_hash(&env_desc);
    let clock = Clock::start();
    let points = metaband::rank_sweep(&world, &cfg, &qs)?;
    let mut failed = Vec::new();
    for (q, log) in &points {
        report_failures(&format!("q={q}"), &log.failed_seeds, cfg.seeds.len())?;
        failed.extend(log.failed_seeds.iter().cloned());
    }
    let dir = out_dir(&s)?;
    let csv = dir.join(tagged_name("rank-sweep", &hash, "csv"));
    write_rank_sweep_csv(&csv, d, &points)?;
    let manifest = write_manifest(&dir, argv, json!(cfg), env_desc, &hash, cfg.seeds.clone(), failed, &clock, vec![csv])?;
    for (q, log) in &points {
        let (m, se) = log.mean_total();
        println!("q={q:>2} p={:>2}: mean total regret {m:.3} ± {se:.3}", d - q);
    }
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn w_error(flags: &Flags, argv: &[String]) -> Result<(), Failure> {
    let s = Settings::resolve(flags, None).map_err(usage)?;
    let world = synthetic_world(&s)?;
    let cfg = s.experiment.clone();
    let env_desc = json!({ "environment": world.describe(), "held_out": s.held_out });
    let hash = cfg.content_hash(&env_desc);
    let clock = Clock::start();
    let curve = metaband::w_error_curve(&world, &cfg, s.held_out)?;
    report_failures("w-error", &curve.failed_seeds, cfg.seeds.len())?;
    let dir = out_dir(&s)?;
    let csv = dir.join(tagged_name("w-error", &hash, "csv"));
    write_w_error_csv(&csv, &curve)?;
    let seeds = cfg
        .seeds
        .iter()
        .copied()
        .filter(|x| !curve.failed_seeds.iter().any(|(f, _)| f == x))
        .collect();
    let manifest = write_manifest(
        &dir,
        argv,
        json!(cfg),
        env_desc,
        &hash,
        seeds,
        curve.failed_seeds.clone(),
        &clock,
        vec![csv],
    )?;
    if let Some((learned, full)) = curve.mean_by_task().last() {
        println!("after {} tasks: learned {learned:.4}, full-bias {full:.4}", cfg.num_tasks);
    }
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn check(flags: &Flags) -> Result<(), Failure> {
    let s = Settings::resolve(flags, None).map_err(usage)?;
    let seed = s.experiment.seeds[0];
    let outcomes = selfcheck::run_all(seed);
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    if outcomes.iter().all(|o| o.passed) {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}
