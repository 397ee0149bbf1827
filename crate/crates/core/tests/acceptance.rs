//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p metaband-core --test acceptance --release`.
//! The MovieLens check needs `MOVIELENS_PATH` pointing at an unpacked ml-1m
//! directory and is skipped without it.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use metaband::nalgebra::{DMatrix, DVector};
use metaband::policy::{ts_select, ucb_select};
use metaband::report::{curve_rows, read_regret_csv, write_regret_csv, write_summary_csv};
use metaband::runner::stream_rng;
use metaband::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ACCEPTANCE_SEEDS: std::ops::Range<u64> = 0..10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

// ---------------------------------------------------------------------------
// Independent numerics: plain Vec-based routines that share no code with the
// library's Cholesky path.

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn gauss_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        let e: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        let col = gauss_solve(rows.clone(), e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    inv
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| normal(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `p` orthonormal vectors in `R^d` by Gram-Schmidt on Gaussian draws.
fn orthonormal_columns(d: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    while basis.len() < p {
        let mut v = normal_vec(d, rng);
        for _ in 0..2 {
            for u in &basis {
                let c = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= c * ui);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn projector(d: usize, basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| basis.iter().map(|u| u[i] * u[j]).sum()).collect())
        .collect()
}

fn context_in_ball(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = normal_vec(d, rng);
    let n = dot(&v, &v).sqrt().max(1e-300);
    let r: f64 = rng.random();
    v.into_iter().map(|x| x * r / n).collect()
}

/// Projector identities checked entry by entry.
fn pair_violation(pair: &ProjectionPair) -> Option<String> {
    let d = pair.dim();
    let p = &pair.p_hat;
    let mut worst = [0.0f64; 3];
    for i in 0..d {
        for j in 0..d {
            let pp: f64 = (0..d).map(|k| p[(i, k)] * p[(k, j)]).sum();
            worst[0] = worst[0].max((pp - p[(i, j)]).abs());
            worst[1] = worst[1].max((p[(i, j)] - p[(j, i)]).abs());
            let id = if i == j { 1.0 } else { 0.0 };
            worst[2] = worst[2].max((p[(i, j)] + pair.p_perp[(i, j)] - id).abs());
        }
    }
    let tr: f64 = (0..d).map(|i| p[(i, i)]).sum();
    let tr_err = (tr - pair.rank_p as f64).abs();
    let names = ["P² = P", "Pᵀ = P", "P + P⊥ = I"];
    for (k, w) in worst.iter().enumerate() {
        if *w > 1e-6 {
            return Some(format!("{} off by {w:e} at d={d} p={}", names[k], pair.rank_p));
        }
    }
    if tr_err > 1e-6 {
        return Some(format!("trace off by {tr_err:e} at d={d} p={}", pair.rank_p));
    }
    None
}

/// Every pair built by the criteria below, for the projection check.
#[derive(Default)]
struct PairLog {
    pairs: Vec<ProjectionPair>,
}

// ---------------------------------------------------------------------------

fn estimator_equivalence(log: &mut PairLog) -> Outcome {
    let mut rng = stream_rng(11, 0);
    let lambdas = [1.0, 10.0, 100.0];
    let mut worst = 0.0f64;
    let mut ranks_seen = std::collections::BTreeSet::new();
    for i in 0..500 {
        let d = 1 + i % 8;
        let p = (i / 8) % (d + 1);
        let k = rng.random_range(0..=50);
        let l1: f64 = lambdas[rng.random_range(0..3)];
        let l2: f64 = lambdas[rng.random_range(0..3)];
        let (l1, l2) = (l1.max(l2), l1.min(l2));
        ranks_seen.insert((d, p));

        let basis = orthonormal_columns(d, p, &mut rng);
        let p_hat = projector(d, &basis);
        let theta_bar = normal_vec(d, &mut rng);
        let u = DMatrix::from_fn(d, p, |r, c| basis[c][r]);
        let pair = ProjectionPair::from_basis(&u, &DVector::from_vec(theta_bar.clone()));
        let cfg = PolicyConfig {
            lambda1: l1,
            lambda2: l2,
            ..PolicyConfig::defaults(d, 100, 1.0)
        };
        let mut state = ProjectedPolicyState::new(&pair, &cfg).unwrap();

        // Normal equations of the stacked objective
        //   ‖Dθ − y‖² + λ₁‖P⊥θ − P⊥θ̄‖² + λ₂‖Pθ‖²
        // accumulated row by row.
        let mut m = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        let add_row = |row: &[f64], target: f64, m: &mut Vec<Vec<f64>>, rhs: &mut Vec<f64>| {
            for a in 0..d {
                rhs[a] += row[a] * target;
                for b in 0..d {
                    m[a][b] += row[a] * row[b];
                }
            }
        };
        let p_perp: Vec<Vec<f64>> = (0..d)
            .map(|a| (0..d).map(|b| if a == b { 1.0 } else { 0.0 } - p_hat[a][b]).collect())
            .collect();
        for a in 0..d {
            let s1 = l1.sqrt();
            let row: Vec<f64> = p_perp[a].iter().map(|v| v * s1).collect();
            add_row(&row, s1 * dot(&p_perp[a], &theta_bar), &mut m, &mut rhs);
            let s2 = l2.sqrt();
            let row: Vec<f64> = p_hat[a].iter().map(|v| v * s2).collect();
            add_row(&row, 0.0, &mut m, &mut rhs);
        }
        let truth = normal_vec(d, &mut rng);
        for _ in 0..k {
            let x = context_in_ball(d, &mut rng);
            let y = dot(&x, &truth) + 0.1 * normal(&mut rng);
            state.update(&DVector::from_vec(x.clone()), y).unwrap();
            add_row(&x, y, &mut m, &mut rhs);
        }
        let want = gauss_solve(m, rhs);
        for (a, w) in want.iter().enumerate() {
            worst = worst.max((state.theta_hat()[a] - w).abs());
        }
        log.pairs.push(pair);
    }
    let all_ranks = (1..=8).all(|d| (0..=d).all(|p| ranks_seen.contains(&(d, p))));
    outcome(
        worst <= 1e-8 && all_ranks,
        format!("500 instances, every (d, p) covered: {all_ranks}, max abs error {worst:.2e} (tol 1e-8)"),
    )
}

/// Top-`p` eigenprojector of a symmetric PSD matrix by deflated power
/// iteration.
fn power_projector(cov: &[Vec<f64>], p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = cov.len();
    let mut a: Vec<Vec<f64>> = cov.to_vec();
    let mut vecs = Vec::new();
    for _ in 0..p {
        let mut v = normal_vec(d, rng);
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let w: Vec<f64> = (0..d).map(|i| dot(&a[i], &v)).collect();
            let n = dot(&w, &w).sqrt();
            v = w.into_iter().map(|x| x / n).collect();
            lambda = n;
        }
        for i in 0..d {
            for j in 0..d {
                a[i][j] -= lambda * v[i] * v[j];
            }
        }
        vecs.push(v);
    }
    projector(d, &vecs)
}

fn ccipca_vs_batch(log: &mut PairLog) -> Outcome {
    let d = 10;
    let spectrum: Vec<f64> = (0..d)
        .map(|i| if i == 0 { 9.0 } else { 4.0 * 0.25f64.powi(i as i32 - 1) })
        .collect();
    let seeds = 20;
    let mut total = 0.0;
    for s in 0..seeds {
        let mut rng = stream_rng(100 + s, 0);
        let basis = orthonormal_columns(d, d, &mut rng);
        let samples: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let z: Vec<f64> = spectrum.iter().map(|l| l.sqrt() * normal(&mut rng)).collect();
                (0..d).map(|i| (0..d).map(|j| basis[j][i] * z[j]).sum()).collect()
            })
            .collect();
        let mut model = SubspaceModel::new(d);
        for x in &samples {
            model.update(&DVector::from_vec(x.clone())).unwrap();
        }
        let learned = model.build_projections(2).unwrap();

        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|x| x[i]).sum::<f64>() / n).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for x in &samples {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
                }
            }
        }
        let batch = power_projector(&cov, 2, &mut rng);
        let diff: f64 = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (learned.p_hat[(i, j)] - batch[i][j]).powi(2))
            .sum::<f64>()
            .sqrt();
        total += diff;
        log.pairs.push(learned);
    }
    let err = total / seeds as f64;
    outcome(
        err <= 0.2,
        format!("d=10, p=2, t=2000, 20 seeds: mean ‖P̂ − P_batch‖_F = {err:.4} (tol 0.2)"),
    )
}

fn projection_invariants(log: &mut PairLog) -> Outcome {
    // Pairs the runner would build: learned ones at every rank, the
    // degenerate init and full-bias pairs, and the true synthetic pair.
    let world = SyntheticWorld::new(SyntheticSpec::default()).unwrap();
    log.pairs.push(world.true_pair().clone());
    let mut rng = stream_rng(12, 0);
    for d in [1usize, 2, 5, 30] {
        let mut model = SubspaceModel::new(d);
        for _ in 0..3 * d {
            model.update(&DVector::from_vec(normal_vec(d, &mut rng))).unwrap();
        }
        log.pairs.push(ProjectionPair::identity(d));
        log.pairs.push(ProjectionPair::full_bias(model.running_mean()));
        for p in 1..=d {
            log.pairs.push(model.build_projections(p).unwrap());
        }
    }
    let failure = log.pairs.iter().find_map(pair_violation);
    outcome(
        failure.is_none(),
        failure.unwrap_or_else(|| format!("{} pairs satisfy all four identities (tol 1e-6)", log.pairs.len())),
    )
}

fn confidence_coverage(log: &mut PairLog) -> Outcome {
    let d = 5;
    let n = 100;
    let seeds = 500u64;
    let world = SyntheticWorld::new(SyntheticSpec {
        dim: d,
        true_rank: 2,
        noise_std: 1.0,
        ..Default::default()
    })
    .unwrap();
    let mut covered = vec![0usize; n + 1];
    for seed in 0..seeds {
        let mut rng = stream_rng(seed, 0);
        let task = world.gen_task(&mut rng);
        let p = rng.random_range(0..=d);
        let basis = orthonormal_columns(d, p, &mut rng);
        let u = DMatrix::from_fn(d, p, |r, c| basis[c][r]);
        let pair = ProjectionPair::from_basis(&u, &DVector::zeros(d));
        let mut cfg = PolicyConfig::defaults(d, n, 1.0);
        cfg.delta = 0.1;
        cfg.w_bound = (&pair.p_perp * &task.theta_star).norm();
        let mut state = ProjectedPolicyState::new(&pair, &cfg).unwrap();
        for k in 0..=n {
            let gamma = state.confidence_radius(&cfg);
            let e = state.theta_hat() - &task.theta_star;
            let b_norm = (e.transpose() * state.b_matrix().as_matrix() * &e)[(0, 0)].sqrt();
            if b_norm <= gamma {
                covered[k] += 1;
            }
            if k == n {
                break;
            }
            let arms = world.sample_contexts(&mut rng);
            let a = ucb_select(&state, &arms, gamma).unwrap();
            let x = arms.context(a);
            let r = x.dot(&task.theta_star) + normal(&mut rng);
            state.update(&x, r).unwrap();
        }
        log.pairs.push(pair);
    }
    let (k_min, c_min) = covered
        .iter()
        .enumerate()
        .min_by_key(|(_, c)| **c)
        .map(|(k, c)| (k, *c as f64 / seeds as f64))
        .unwrap();
    outcome(
        c_min >= 0.85,
        format!("d=5, n=100, δ=0.1, 500 seeds: min per-round coverage {c_min:.3} at round {k_min} (need ≥ 0.85)"),
    )
}

fn ts_fidelity(log: &mut PairLog) -> Outcome {
    let d = 4;
    let mut rng = stream_rng(13, 0);
    let basis = orthonormal_columns(d, 2, &mut rng);
    let u = DMatrix::from_fn(d, 2, |r, c| basis[c][r]);
    let pair = ProjectionPair::from_basis(&u, &DVector::from_vec(normal_vec(d, &mut rng)));
    let cfg = PolicyConfig {
        lambda1: 10.0,
        lambda2: 1.0,
        ..PolicyConfig::defaults(d, 250, 1.0)
    };
    let mut state = ProjectedPolicyState::new(&pair, &cfg).unwrap();
    for _ in 0..30 {
        let x = DVector::from_vec(context_in_ball(d, &mut rng));
        state.update(&x, normal(&mut rng)).unwrap();
    }
    let v = cfg.posterior_scale(d);
    let draws = 100_000;
    let mean = state.theta_hat().clone();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut sum = DVector::<f64>::zeros(d);
    let samples: Vec<DVector<f64>> = (0..draws)
        .map(|_| state.factor().sample_precision(&mean, v, &mut rng).unwrap())
        .collect();
    for s in &samples {
        sum += s;
    }
    let m = sum / draws as f64;
    for s in &samples {
        let c = s - &m;
        cov += &c * c.transpose();
    }
    cov /= (draws - 1) as f64;
    let want = gauss_inverse(state.b_matrix().as_matrix()) * (v * v);
    let rel = (&cov - &want).norm() / want.norm();

    let sym_pair = ProjectionPair::identity(2);
    let mut sym = ProjectedPolicyState::new(&sym_pair, &cfg).unwrap();
    let e1 = DVector::from_vec(vec![1.0, 0.0]);
    let e2 = DVector::from_vec(vec![0.0, 1.0]);
    sym.update(&e1, 0.5).unwrap();
    sym.update(&e2, 0.5).unwrap();
    let arms = ArmSet::from_rows(&[e1, e2]).unwrap();
    let v2 = cfg.posterior_scale(2);
    let first = (0..draws)
        .filter(|_| ts_select(&sym, &arms, v2, &mut rng).unwrap() == 0)
        .count() as f64
        / draws as f64;
    log.pairs.push(pair);
    log.pairs.push(sym_pair);
    outcome(
        rel <= 0.05 && (first - 0.5).abs() <= 0.02,
        format!("10⁵ draws: covariance Frobenius rel. error {rel:.4} (tol 0.05), symmetric-arm share {first:.4} (0.5 ± 0.02)"),
    )
}

/// Experiment settings for the synthetic regret comparisons.
fn synthetic_config(policy: PolicyKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(policy, 30, 100, 250, 1.0).with_seeds(ACCEPTANCE_SEEDS.collect());
    cfg.policy_config.lambda1 = 10.0;
    cfg.policy_config.w_bound = 0.0;
    cfg.policy_config.posterior_scale = Some(0.03);
    cfg
}

fn regret_ordering() -> Outcome {
    let world = SyntheticWorld::new(SyntheticSpec::default()).unwrap();
    let total = |k: PolicyKind| {
        let log = run_experiment(&world, &synthetic_config(k)).unwrap();
        assert!(log.failed_seeds.is_empty(), "{k}: {:?}", log.failed_seeds);
        log.mean_total()
    };
    let mut detail = Vec::new();
    let mut passed = true;
    for [oracle, learned, classic] in [
        [PolicyKind::OracleUcb, PolicyKind::PLinUcb, PolicyKind::LinUcb],
        [PolicyKind::OracleTs, PolicyKind::PTs, PolicyKind::Ts],
    ] {
        let (mo, so) = total(oracle);
        let (ml, sl) = total(learned);
        let (mc, sc) = total(classic);
        let gap = (mc - ml) / (sl * sl + sc * sc).sqrt();
        let ok = mo <= ml && gap >= 2.0;
        passed &= ok;
        detail.push(format!(
            "{oracle} {mo:.0}±{so:.0}, {learned} {ml:.0}±{sl:.0}, {classic} {mc:.0}±{sc:.0}, gap {gap:.1} SE{}",
            if ok { "" } else { " [violated]" }
        ));
        if learned == PolicyKind::PLinUcb {
            let gain = 1.0 - ml / mc;
            passed &= gain >= 0.15;
            detail.push(format!("P-LinUCB improvement {:.1}% (need ≥ 15%)", 100.0 * gain));
        }
    }
    outcome(passed, detail.join("; "))
}

fn rank_sweep_minimum() -> Outcome {
    let world = SyntheticWorld::new(SyntheticSpec::default()).unwrap();
    let qs = [0, 5, 10, 13, 15, 17, 20, 25];
    let sweep = rank_sweep(&world, &synthetic_config(PolicyKind::PLinUcb), &qs).unwrap();
    let totals: Vec<(usize, f64)> = sweep.iter().map(|(q, log)| (*q, log.mean_total().0)).collect();
    let (argmin, _) = *totals.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let q0 = totals[0].1;
    let all_beat = totals[1..].iter().all(|(_, t)| *t < q0);
    let listing: Vec<String> = totals.iter().map(|(q, t)| format!("q={q}:{t:.0}")).collect();
    outcome(
        [13, 15, 17].contains(&argmin) && all_beat,
        format!("argmin q={argmin}, every q>0 below q=0: {all_beat} ({})", listing.join(" ")),
    )
}

fn w_error_separation() -> Outcome {
    let world = SyntheticWorld::new(SyntheticSpec::default()).unwrap();
    let curve = w_error_curve(&world, &synthetic_config(PolicyKind::PLinUcb), 200).unwrap();
    let seeds: std::collections::BTreeSet<u64> = curve.rows.iter().map(|r| r.seed).collect();
    let (learned, full_bias) = *curve.mean_by_task().last().unwrap();
    outcome(
        learned < full_bias && seeds.len() == 10,
        format!("after 100 tasks over {} seeds: learned {learned:.3} vs full-bias {full_bias:.3}", seeds.len()),
    )
}

fn reductions(log: &mut PairLog) -> Outcome {
    let world = SyntheticWorld::new(SyntheticSpec::default()).unwrap();
    let projected = ExperimentConfig::new(PolicyKind::PLinUcb, 30, 1, 250, 1.0).with_seeds(vec![3]);
    let mut classic = projected.clone().with_policy(PolicyKind::LinUcb);
    classic.policy_config.lambda_ridge = projected.policy_config.lambda2;
    let a = run_experiment(&world, &projected).unwrap();
    let b = run_experiment(&world, &classic).unwrap();
    let identical = a.traces == b.traces && !a.traces.is_empty();

    let mut rng = stream_rng(14, 0);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = 1 + i % 8;
        let p = rng.random_range(0..=d);
        let lambda = [1.0, 10.0, 100.0][i % 3];
        let basis = orthonormal_columns(d, p, &mut rng);
        let u = DMatrix::from_fn(d, p, |r, c| basis[c][r]);
        let pair = ProjectionPair::from_basis(&u, &DVector::zeros(d));
        let cfg = PolicyConfig {
            lambda1: lambda,
            lambda2: lambda,
            ..PolicyConfig::defaults(d, 100, 1.0)
        };
        let mut state = ProjectedPolicyState::new(&pair, &cfg).unwrap();
        let mut m: Vec<Vec<f64>> = (0..d)
            .map(|a| (0..d).map(|b| if a == b { lambda } else { 0.0 }).collect())
            .collect();
        let mut rhs = vec![0.0; d];
        for _ in 0..rng.random_range(0..=40) {
            let x = context_in_ball(d, &mut rng);
            let y = normal(&mut rng);
            for a in 0..d {
                rhs[a] += x[a] * y;
                for b in 0..d {
                    m[a][b] += x[a] * x[b];
                }
            }
            state.update(&DVector::from_vec(x), y).unwrap();
        }
        let ridge = gauss_solve(m, rhs);
        for (a, r) in ridge.iter().enumerate() {
            worst = worst.max((state.theta_hat()[a] - r).abs());
        }
        log.pairs.push(pair);
    }
    outcome(
        identical && worst <= 1e-10,
        format!(
            "T=1 projected trace equals classic trace: {identical}; equal-λ estimator vs ridge max abs error {worst:.2e} (tol 1e-10)"
        ),
    )
}

fn movielens_smoke() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("MOVIELENS_PATH")?);
    let env = match MovieLensEnv::load(&dir, GroupFilter::All, 25) {
        Ok(env) => env,
        Err(e) => return Some(outcome(false, format!("loading {}: {e}", dir.display()))),
    };
    let mut ok = true;
    let mut problems = Vec::new();
    for user in env.users() {
        for &(movie, rating) in &user.ratings {
            let x = env.context(movie).unwrap();
            if x.len() != 18 || x.norm() > 1.0 + 1e-12 || !(0.0..=1.0).contains(&rating) {
                ok = false;
                problems.push(format!("movie {movie}"));
            }
        }
    }
    let out = tempfile::tempdir().unwrap();
    let kinds = [
        PolicyKind::PLinUcb,
        PolicyKind::PTs,
        PolicyKind::LinUcb,
        PolicyKind::Ts,
        PolicyKind::BOful,
    ];
    for kind in kinds {
        let cfg = ExperimentConfig::new(kind, 18, 50, 250, 1.0).with_seeds(vec![0]);
        let log = match run_experiment(&env, &cfg) {
            Ok(log) if log.failed_seeds.is_empty() && log.traces.len() == 50 => log,
            Ok(log) => {
                ok = false;
                problems.push(format!("{kind}: {} traces, failures {:?}", log.traces.len(), log.failed_seeds));
                continue;
            }
            Err(e) => {
                ok = false;
                problems.push(format!("{kind}: {e}"));
                continue;
            }
        };
        let raw = out.path().join(format!("{kind}.csv"));
        let summary = out.path().join(format!("{kind}_summary.csv"));
        write_regret_csv(&log, &raw).unwrap();
        write_summary_csv(&summary, &curve_rows(&log.policy, &expected_transfer_regret(&log))).unwrap();
        let back = read_regret_csv(&raw).unwrap();
        let summary_lines = std::fs::read_to_string(&summary).unwrap().lines().count();
        if back.traces != log.traces || summary_lines != 251 {
            ok = false;
            problems.push(format!("{kind}: CSV round trip or summary shape"));
        }
    }
    Some(outcome(
        ok,
        if ok {
            format!("{} users, 18-dim contexts in the unit ball, 5 policies × 50 users × 250 rounds written and re-read", env.users().len())
        } else {
            problems.join("; ")
        },
    ))
}

fn main() {
    let mut pairs = PairLog::default();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Option<Outcome>| {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        match result {
            None => println!("SKIP {id:>2} {name}: MOVIELENS_PATH not set"),
            Some(o) => {
                let in_time = limit.is_none_or(|l| elapsed <= l);
                let passed = o.passed && in_time;
                let budget = limit.map(|l| format!(", limit {} s", l.as_secs())).unwrap_or_default();
                println!(
                    "{} {id:>2} {name}: {} ({:.1} s{budget})",
                    if passed { "PASS" } else { "FAIL" },
                    o.detail,
                    elapsed.as_secs_f64()
                );
                if !passed {
                    failed += 1;
                }
            }
        }
    };
    let secs = |s: u64| Some(Duration::from_secs(s));
    report(1, "estimator matches brute force", secs(10), &mut || Some(estimator_equivalence(&mut pairs)));
    report(2, "CCIPCA matches batch PCA", secs(5), &mut || Some(ccipca_vs_batch(&mut pairs)));
    report(4, "confidence coverage", secs(60), &mut || Some(confidence_coverage(&mut pairs)));
    report(5, "TS posterior fidelity", secs(30), &mut || Some(ts_fidelity(&mut pairs)));
    report(9, "reductions", None, &mut || Some(reductions(&mut pairs)));
    report(3, "projection invariants", None, &mut || Some(projection_invariants(&mut pairs)));
    report(6, "regret ordering", secs(15 * 60), &mut || Some(regret_ordering()));
    report(7, "rank-sweep minimum", secs(45 * 60), &mut || Some(rank_sweep_minimum()));
    report(8, "W-error separation", secs(15 * 60), &mut || Some(w_error_separation()));
    report(10, "MovieLens pipeline", None, &mut movielens_smoke);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
