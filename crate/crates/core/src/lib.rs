//! Meta-learning for linear contextual bandits.
//!
//! A stream of bandit tasks shares a low-dimensional affine subspace of
//! parameters. After each task, [`SubspaceModel`] absorbs the task's ridge
//! estimate; the next task runs LinUCB or Thompson sampling regularized
//! strongly toward the learned mean along the complement of that subspace.
//!
//! ```
//! use metaband::{ExperimentConfig, PolicyKind, SyntheticSpec, SyntheticWorld, run_experiment};
//!
//! let spec = SyntheticSpec { dim: 4, true_rank: 2, arms_per_round: 5, ..Default::default() };
//! let world = SyntheticWorld::new(spec).unwrap();
//! let cfg = ExperimentConfig::new(PolicyKind::PLinUcb, 4, 6, 20, 1.0).with_seeds(vec![1, 2]);
//! let log = run_experiment(&world, &cfg).unwrap();
//! assert_eq!(log.traces.len(), 2 * 6);
//! ```

pub mod env;
pub mod error;
pub mod linalg;
pub mod policy;
pub mod report;
pub mod runner;
pub mod selfcheck;
pub mod subspace;

pub use nalgebra;

pub use env::{Environment, GroupFilter, MovieLensEnv, Round, SyntheticSpec, SyntheticTask, SyntheticWorld};
pub use error::{Error, Result};
pub use linalg::{SpdFactor, SpdMatrix};
pub use policy::{ArmSet, PolicyConfig, PolicyKind, ProjectedPolicyState, TaskPolicy};
pub use report::{RunManifest, SummaryRow};
pub use runner::{
    cumulative_regret_over_tasks, expected_transfer_regret, rank_sweep, run_experiment, w_error_curve,
    ExperimentConfig, RankMode, RegretCurve, RegretLog, TaskTrace, WErrorCurve,
};
pub use subspace::{ProjectionPair, SubspaceModel};
