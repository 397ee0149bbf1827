//! Numerical self-checks behind `metaband check`: the estimator against a
//! dense least-squares solve, streaming PCA against batch PCA, and the
//! projector identities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::random_orthogonal;
use crate::linalg::standard_normal_vector;
use crate::policy::{PolicyConfig, ProjectedPolicyState};
use crate::runner::stream_rng;
use crate::subspace::{ProjectionPair, SubspaceModel};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// `(9, 4, 1, 1/4, 1/16, …)`: the top two directions carry almost all of
/// the variance.
pub fn decaying_spectrum(dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| match i {
            0 => 9.0,
            _ => 4.0 * 0.25f64.powi(i as i32 - 1),
        })
        .collect()
}

/// Samples `N(0, Q diag(spectrum) Qᵀ)`.
pub fn gaussian_stream(q: &DMatrix<f64>, spectrum: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let scale = DVector::from_iterator(spectrum.len(), spectrum.iter().map(|s| s.sqrt()));
    (0..n)
        .map(|_| q * standard_normal_vector(spectrum.len(), rng).component_mul(&scale))
        .collect()
}

/// Projector onto the top-`p` eigenvectors of the sample covariance.
pub fn batch_pca_projector(samples: &[DVector<f64>], p: usize) -> DMatrix<f64> {
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
    let mut cov = DMatrix::zeros(d, d);
    for x in samples {
        let c = x - &mean;
        cov.ger(1.0 / n, &c, &c, 1.0);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut proj = DMatrix::zeros(d, d);
    for &j in order.iter().take(p) {
        let u = eig.eigenvectors.column(j);
        proj += u * u.transpose();
    }
    proj
}

/// Random projection pair of rank `p` with a random mean.
pub fn random_pair(dim: usize, p: usize, rng: &mut ChaCha8Rng) -> ProjectionPair {
    let q = random_orthogonal(dim, rng);
    let mean = standard_normal_vector(dim, rng);
    ProjectionPair::from_basis(&q.columns(0, p).into_owned(), &mean)
}

/// Minimizer of `‖Dθ − y‖² + λ₁‖P̂⊥(θ − θ̄)‖² + λ₂‖P̂θ‖²` as one stacked
/// least-squares problem, solved through its normal equations by LU.
pub fn brute_force_estimate(
    contexts: &[DVector<f64>],
    rewards: &[f64],
    pair: &ProjectionPair,
    theta_bar: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> DVector<f64> {
    let d = pair.dim();
    let k = contexts.len();
    let mut m = DMatrix::zeros(k + 2 * d, d);
    let mut rhs = DVector::zeros(k + 2 * d);
    for (i, x) in contexts.iter().enumerate() {
        m.row_mut(i).copy_from(&x.transpose());
        rhs[i] = rewards[i];
    }
    m.rows_mut(k, d).copy_from(&(&pair.p_perp * lambda1.sqrt()));
    rhs.rows_mut(k, d).copy_from(&(&pair.p_perp * theta_bar * lambda1.sqrt()));
    m.rows_mut(k + d, d).copy_from(&(&pair.p_hat * lambda2.sqrt()));
    let mt = m.transpose();
    (&mt * &m).lu().solve(&(mt * rhs)).expect("stacked system has full column rank")
}

fn unit_context(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let x = standard_normal_vector(dim, rng);
    let n = x.norm();
    x * (rng.random::<f64>() / n.max(1e-300))
}

/// Max-abs gap between the incremental estimate and the dense solve over
/// `instances` random problems (`d ≤ 8`, `k ≤ 50`, every rank).
pub fn estimator_vs_brute_force(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = stream_rng(seed, 0);
    let lambdas = [1.0f64, 10.0, 100.0];
    let mut worst = 0.0f64;
    for i in 0..instances {
        let d = rng.random_range(1..=8);
        let p = i % (d + 1);
        let k = rng.random_range(0..=50);
        let l2 = lambdas[rng.random_range(0..3)];
        let l1 = lambdas[rng.random_range(0..3)].max(l2);
        let theta_bar = standard_normal_vector(d, &mut rng);
        let q = random_orthogonal(d, &mut rng);
        let pair = ProjectionPair::from_basis(&q.columns(0, p).into_owned(), &theta_bar);
        let cfg = PolicyConfig {
            lambda1: l1,
            lambda2: l2,
            ..PolicyConfig::defaults(d, 100, 1.0)
        };
        let mut state = ProjectedPolicyState::new(&pair, &cfg).expect("valid pair");
        let truth = standard_normal_vector(d, &mut rng);
        let mut xs = Vec::with_capacity(k);
        let mut ys = Vec::with_capacity(k);
        for _ in 0..k {
            let x = unit_context(d, &mut rng);
            let y = x.dot(&truth) + 0.1 * rng.random::<f64>();
            state.update(&x, y).expect("update");
            xs.push(x);
            ys.push(y);
        }
        let want = brute_force_estimate(&xs, &ys, &pair, &theta_bar, l1, l2);
        worst = worst.max((state.theta_hat() - want).amax());
    }
    CheckOutcome {
        name: "estimator-vs-brute-force",
        passed: worst <= 1e-8,
        detail: format!("{instances} instances, max abs error {worst:.3e} (tol 1e-8)"),
    }
}

/// Mean `‖P̂ − P_batch‖_F` at rank 2 over `seeds` Gaussian streams of
/// length `samples` in `d = 10`.
pub fn ccipca_vs_batch_error(seeds: u64, samples: usize) -> f64 {
    let d = 10;
    let spectrum = decaying_spectrum(d);
    let mut total = 0.0;
    for s in 0..seeds {
        let mut rng = stream_rng(s, 0);
        let q = random_orthogonal(d, &mut rng);
        let xs = gaussian_stream(&q, &spectrum, samples, &mut rng);
        let mut model = SubspaceModel::new(d);
        for x in &xs {
            model.update(x).expect("dimension matches");
        }
        let learned = model.build_projections(2).expect("rank in range");
        total += (&learned.p_hat - batch_pca_projector(&xs, 2)).norm();
    }
    total / seeds as f64
}

pub fn ccipca_vs_batch(seeds: u64, samples: usize) -> CheckOutcome {
    let err = ccipca_vs_batch_error(seeds, samples);
    CheckOutcome {
        name: "ccipca-vs-batch-pca",
        passed: err <= 0.2,
        detail: format!("{seeds} streams of {samples}, mean Frobenius gap {err:.4} (tol 0.2)"),
    }
}

/// Projector identities for learned and random pairs of every rank.
pub fn projection_invariants(seed: u64) -> CheckOutcome {
    let mut rng = stream_rng(seed, 0);
    let mut checked = 0;
    let mut failure = None;
    for d in 1..=12 {
        let mut model = SubspaceModel::new(d);
        for _ in 0..3 * d {
            model.update(&standard_normal_vector(d, &mut rng)).expect("dimension matches");
        }
        let mut pairs = vec![ProjectionPair::identity(d), ProjectionPair::full_bias(model.running_mean())];
        for p in 1..=d {
            pairs.push(model.build_projections(p).expect("rank in range"));
            pairs.push(random_pair(d, p, &mut rng));
        }
        for pair in pairs {
            checked += 1;
            if let Err(e) = pair.check_invariants(1e-6) {
                failure.get_or_insert(format!("d={d} p={}: {e}", pair.rank_p));
            }
        }
    }
    CheckOutcome {
        name: "projection-invariants",
        passed: failure.is_none(),
        detail: failure.unwrap_or_else(|| format!("{checked} pairs satisfy all identities (tol 1e-6)")),
    }
}

pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        estimator_vs_brute_force(500, seed),
        ccipca_vs_batch(20, 2000),
        projection_invariants(seed),
    ]
}
