use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Environment, Round};
use crate::error::{Error, Result};
use crate::linalg::standard_normal_vector;
use crate::policy::ArmSet;
use crate::subspace::ProjectionPair;

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub true_rank: usize,
    /// `Var_ρ = E‖P⊥(θ* − μ)‖²`.
    pub task_variance: f64,
    /// `V`, the bound on `‖θ*‖`.
    pub param_scale: f64,
    pub arms_per_round: usize,
    pub noise_std: f64,
    pub context_cov_seed: u64,
    pub subspace_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 30,
            true_rank: 15,
            task_variance: 1e-3,
            param_scale: 1.0,
            arms_per_round: 25,
            noise_std: 0.1,
            context_cov_seed: 0x05ee_dc0f,
            subspace_seed: 0x05ee_d5b5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.true_rank == 0 || self.true_rank > self.dim {
            return bad("true_rank must lie in 1..=dim");
        }
        if !(self.task_variance >= 0.0) || !(self.noise_std >= 0.0) {
            return bad("task_variance and noise_std must be nonnegative");
        }
        if !(self.param_scale > 0.0) {
            return bad("param_scale must be positive");
        }
        if self.arms_per_round == 0 {
            return bad("arms_per_round must be >= 1");
        }
        Ok(())
    }
}

/// One sampled task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub theta_star: DVector<f64>,
}

impl SyntheticTask {
    pub fn expected_reward(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.theta_star)
    }
}

/// The fixed parts of a synthetic experiment: the true subspace and the
/// context covariance. Built once from the spec's seeds.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    spec: SyntheticSpec,
    basis: DMatrix<f64>,
    true_pair: ProjectionPair,
    context_var: DVector<f64>,
}

impl SyntheticWorld {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.subspace_seed);
        let q = random_orthogonal(d, &mut rng);
        let basis = q.columns(0, spec.true_rank).into_owned();
        let true_pair = ProjectionPair::from_basis(&basis, &DVector::zeros(d));
        let mut rng = ChaCha8Rng::seed_from_u64(spec.context_cov_seed);
        let context_var = DVector::from_fn(d, |_, _| rng.random::<f64>());
        Ok(Self {
            spec,
            basis,
            true_pair,
            context_var,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    /// Orthonormal basis of the true subspace (`d × p`).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// The population mean `μ` (the origin for this generator).
    pub fn mean(&self) -> DVector<f64> {
        DVector::zeros(self.spec.dim)
    }

    pub fn true_pair(&self) -> &ProjectionPair {
        &self.true_pair
    }

    /// Diagonal of the context covariance.
    pub fn context_variances(&self) -> &DVector<f64> {
        &self.context_var
    }

    /// `θ* = P·θ_raw + P⊥·g`, `θ_raw` uniform on the V-ball,
    /// `g ~ N(0, (Var_ρ/q)·I)`; rescaled onto the V-sphere if it escapes.
    pub fn gen_task<R: Rng + ?Sized>(&self, rng: &mut R) -> SyntheticTask {
        let d = self.spec.dim;
        let v = self.spec.param_scale;
        let dir = loop {
            let g = standard_normal_vector(d, rng);
            let n = g.norm();
            if n > 0.0 {
                break g / n;
            }
        };
        let radius = v * rng.random::<f64>().powf(1.0 / d as f64);
        let raw = dir * radius;
        let mut theta = &self.true_pair.p_hat * raw;
        let q = self.spec.dim - self.spec.true_rank;
        if q > 0 && self.spec.task_variance > 0.0 {
            let sd = (self.spec.task_variance / q as f64).sqrt();
            let g = standard_normal_vector(d, rng) * sd;
            theta += &self.true_pair.p_perp * g;
        }
        let norm = theta.norm();
        if norm > v {
            theta *= v / norm;
        }
        SyntheticTask { theta_star: theta }
    }

    /// A context drawn from `N(0, diag(c))` without the unit-ball rescale.
    pub fn sample_raw_context<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.spec.dim, |i, _| {
            self.context_var[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
    }

    /// `K` contexts from `N(0, diag(c))`, rows longer than 1 rescaled to unit norm.
    pub fn sample_contexts<R: Rng + ?Sized>(&self, rng: &mut R) -> ArmSet {
        let k = self.spec.arms_per_round;
        let d = self.spec.dim;
        let mut m = DMatrix::zeros(k, d);
        for a in 0..k {
            let mut x = self.sample_raw_context(rng);
            let n = x.norm();
            if n > 1.0 {
                x /= n;
            }
            m.row_mut(a).copy_from(&x.transpose());
        }
        ArmSet::new(m, (0..k).collect()).expect("contexts are normalized and K >= 1")
    }

    /// Reward and instantaneous regret of pulling `arm` from `arms`.
    pub fn synthetic_reward<R: Rng + ?Sized>(
        &self,
        task: &SyntheticTask,
        arms: &ArmSet,
        arm: usize,
        rng: &mut R,
    ) -> (f64, f64) {
        let round = self.make_round(task, arms.clone());
        (round.reward(arm, rng), round.regret(arm))
    }

    fn make_round(&self, task: &SyntheticTask, arms: ArmSet) -> Round {
        let mean_rewards = (arms.contexts() * &task.theta_star).iter().copied().collect();
        Round {
            arms,
            mean_rewards,
            noise_std: self.spec.noise_std,
        }
    }
}

impl Environment for SyntheticWorld {
    type Task = SyntheticTask;

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "synthetic": self.spec })
    }

    fn true_projection(&self) -> Option<ProjectionPair> {
        Some(self.true_pair.clone())
    }

    fn sample_tasks(&self, num_tasks: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SyntheticTask>> {
        Ok((0..num_tasks).map(|_| self.gen_task(rng)).collect())
    }

    fn round(&self, task: &SyntheticTask, rng: &mut ChaCha8Rng) -> Result<Round> {
        let arms = self.sample_contexts(rng);
        Ok(self.make_round(task, arms))
    }

    fn theta_star<'t>(&self, task: &'t SyntheticTask) -> Option<&'t DVector<f64>> {
        Some(&task.theta_star)
    }
}
