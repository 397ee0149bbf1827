//! Reward environments: a synthetic low-rank task population and a
//! MovieLens-1M backed population of users.

mod movielens;
mod synthetic;

pub use movielens::{normalize_rating, write_fixture, GroupFilter, MovieLensEnv, UserRatings, GENRES};
pub use synthetic::{random_orthogonal, SyntheticSpec, SyntheticTask, SyntheticWorld};

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::policy::ArmSet;
use crate::subspace::ProjectionPair;

/// A population of bandit tasks the meta-learner visits in sequence.
pub trait Environment: Sync {
    type Task: Send + Sync;

    fn dim(&self) -> usize;

    /// Short identifier recorded in run manifests.
    fn describe(&self) -> serde_json::Value;

    /// The population's true projection and mean, when known.
    fn true_projection(&self) -> Option<ProjectionPair> {
        None
    }

    /// Draws the ordered task sequence for one seed.
    fn sample_tasks(&self, num_tasks: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Self::Task>>;

    /// Presents one round of arms for `task`.
    fn round(&self, task: &Self::Task, rng: &mut ChaCha8Rng) -> Result<Round>;

    /// The task's true parameter, when the environment has one.
    fn theta_star<'t>(&self, _task: &'t Self::Task) -> Option<&'t DVector<f64>> {
        None
    }
}

/// A presented arm set together with each arm's expected reward.
#[derive(Debug, Clone)]
pub struct Round {
    pub arms: ArmSet,
    pub mean_rewards: Vec<f64>,
    pub noise_std: f64,
}

impl Round {
    /// Observed reward: expected reward plus Gaussian noise (when enabled).
    pub fn reward<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> f64 {
        let mean = self.mean_rewards[arm];
        if self.noise_std > 0.0 {
            mean + self.noise_std * rng.sample::<f64, _>(StandardNormal)
        } else {
            mean
        }
    }

    /// Best expected reward in the set minus the chosen arm's.
    pub fn regret(&self, arm: usize) -> f64 {
        let best = self
            .mean_rewards
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        best - self.mean_rewards[arm]
    }
}
