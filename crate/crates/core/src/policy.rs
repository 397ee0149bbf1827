//! Projection-biased LinUCB and Thompson sampling, plus the baselines that
//! fall out of the same estimator as special cases.
//!
//! The per-task estimator solves
//!
//! ```text
//!   min_θ ‖Dθ − y‖² + λ₁‖P̂⊥(θ − θ̄)‖² + λ₂‖P̂θ‖²
//!   θ̂ = B⁻¹b,  B = DᵀD + λ₁P̂⊥ + λ₂P̂,  b = Dᵀy + λ₁P̂⊥w,  w = P̂⊥θ̄
//! ```
//!
//! Classic LinUCB / linear TS are the `P̂ = I` case with `λ₁ = λ₂ = λ`;
//! the mean-biased OFUL baseline is the `P̂⊥ = I` case.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SpdFactor, SpdMatrix};
use crate::subspace::ProjectionPair;

/// Slack allowed on `‖x‖ ≤ 1` for arm contexts.
pub const CONTEXT_NORM_TOL: f64 = 1e-12;

/// Hyperparameters shared by every policy.
///
/// `lambda1` is the strength of the pull toward the task mean along `P̂⊥`.
/// The regret analysis suggests `λ₁ = 1/√Y` for a population-dependent `Y`
/// that cannot be computed online, so it is left as the main tunable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Ridge parameter of the per-task estimate fed to the subspace learner
    /// and of the classic baselines.
    pub lambda_ridge: f64,
    pub delta: f64,
    /// Bound `V` on `‖θ*‖`.
    pub v_bound: f64,
    /// Stand-in for the unobservable `W = ‖P̂⊥(θ* − θ̄)‖`; capped at `2V`.
    pub w_bound: f64,
    /// TS tail parameter `α ∈ (0, 1)`.
    pub alpha: f64,
    pub horizon: usize,
    /// Multiplier on the UCB radius and on the TS posterior scale.
    /// `1.0` uses the theoretical constants unchanged.
    pub exploration_scale: f64,
    /// Fixes the TS posterior scale `v` directly, bypassing the formula.
    pub posterior_scale: Option<f64>,
}

impl PolicyConfig {
    /// Defaults for dimension `dim`, horizon `n` and parameter bound `v`:
    /// `λ₂ = 1/V²`, `λ = 1/(nV²)`, `δ = 1/n`, `λ₁ = 10·λ₂·d`, `W = 2V`,
    /// `α = 1/log n`.
    pub fn defaults(dim: usize, horizon: usize, v_bound: f64) -> Self {
        let n = horizon.max(1) as f64;
        let lambda2 = 1.0 / (v_bound * v_bound);
        Self {
            lambda1: 10.0 * lambda2 * dim as f64,
            lambda2,
            lambda_ridge: 1.0 / (n * v_bound * v_bound),
            delta: if horizon >= 2 { 1.0 / n } else { 0.5 },
            v_bound,
            w_bound: 2.0 * v_bound,
            alpha: default_alpha(horizon),
            horizon,
            exploration_scale: 1.0,
            posterior_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return bad("lambda2 must be positive");
        }
        if !(self.lambda1 >= self.lambda2 && self.lambda1.is_finite()) {
            return bad("lambda1 must be >= lambda2");
        }
        if !(self.lambda_ridge > 0.0 && self.lambda_ridge.is_finite()) {
            return bad("lambda_ridge must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.v_bound > 0.0 && self.w_bound >= 0.0) {
            return bad("v_bound must be positive and w_bound nonnegative");
        }
        if !(self.exploration_scale >= 0.0 && self.exploration_scale.is_finite()) {
            return bad("exploration_scale must be finite and nonnegative");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        Ok(())
    }

    /// `min(w_bound, 2V)`.
    pub fn w_surrogate(&self) -> f64 {
        self.w_bound.min(2.0 * self.v_bound)
    }

    /// `v = 4·sqrt(log(1/δ)·(d+2)/α)`, times the exploration scale,
    /// unless overridden.
    pub fn posterior_scale(&self, dim: usize) -> f64 {
        self.posterior_scale.unwrap_or_else(|| {
            4.0 * ((1.0 / self.delta).ln() * (dim as f64 + 2.0) / self.alpha).sqrt()
                * self.exploration_scale
        })
    }

    /// The config the classic baselines run with: `λ₁ = λ₂ = λ`.
    pub fn plain_ridge(&self) -> Self {
        Self {
            lambda1: self.lambda_ridge,
            lambda2: self.lambda_ridge,
            ..*self
        }
    }
}

/// `α = 1/log n`, clamped to `(0, 0.999]`; `0.5` when `n ≤ 3`.
pub fn default_alpha(horizon: usize) -> f64 {
    if horizon <= 3 {
        0.5
    } else {
        (1.0 / (horizon as f64).ln()).min(0.999)
    }
}

/// The round's candidate contexts, one row per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet {
    contexts: DMatrix<f64>,
    ids: Vec<usize>,
}

impl ArmSet {
    pub fn new(contexts: DMatrix<f64>, ids: Vec<usize>) -> Result<Self> {
        if contexts.nrows() == 0 {
            return Err(Error::EmptyArmSet);
        }
        if ids.len() != contexts.nrows() {
            return Err(Error::DimensionMismatch {
                expected: contexts.nrows(),
                actual: ids.len(),
            });
        }
        for (index, row) in contexts.row_iter().enumerate() {
            let norm = row.norm();
            if !(norm <= 1.0 + CONTEXT_NORM_TOL) {
                return Err(Error::ContextNorm { index, norm });
            }
        }
        Ok(Self { contexts, ids })
    }

    /// Arms identified by their row index.
    pub fn from_rows(rows: &[DVector<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyArmSet);
        }
        let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        Self::new(m, (0..rows.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.contexts.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.contexts.ncols()
    }

    pub fn context(&self, arm: usize) -> DVector<f64> {
        self.contexts.row(arm).transpose()
    }

    pub fn contexts(&self) -> &DMatrix<f64> {
        &self.contexts
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn id(&self, arm: usize) -> usize {
        self.ids[arm]
    }
}

/// Index of the first maximum.
fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.enumerate() {
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Per-task state of the biased estimator, plus the plain ridge pair
/// `(A, b')` whose solution is handed to the subspace learner at the end
/// of the task.
#[derive(Debug, Clone)]
pub struct ProjectedPolicyState {
    b_matrix: SpdMatrix,
    b_vector: DVector<f64>,
    theta_hat: DVector<f64>,
    a_matrix: SpdMatrix,
    b_prime: DVector<f64>,
    round: usize,
    rank_p: usize,
    rank_q: usize,
    factor: SpdFactor,
}

impl ProjectedPolicyState {
    /// `B₀ = λ₁P̂⊥ + λ₂P̂`, `b₀ = λ₁P̂⊥w`, `θ̂₀ = B₀⁻¹b₀`, `A₀ = λI`, `b'₀ = 0`.
    pub fn new(pair: &ProjectionPair, cfg: &PolicyConfig) -> Result<Self> {
        let d = pair.dim();
        let b0 = &pair.p_perp * cfg.lambda1 + &pair.p_hat * cfg.lambda2;
        let b_matrix = SpdMatrix::new(b0)?;
        let b_vector = (&pair.p_perp * &pair.bias_w) * cfg.lambda1;
        let factor = b_matrix.factor()?;
        let theta_hat = factor.solve(&b_vector)?;
        Ok(Self {
            b_matrix,
            b_vector,
            theta_hat,
            a_matrix: SpdMatrix::scaled_identity(d, cfg.lambda_ridge),
            b_prime: DVector::zeros(d),
            round: 0,
            rank_p: pair.rank_p,
            rank_q: pair.rank_q,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.b_vector.len()
    }

    /// Absorbs the pulled context and its reward, then re-solves for `θ̂`.
    pub fn update(&mut self, x: &DVector<f64>, reward: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        self.b_matrix.add_outer(x);
        self.a_matrix.add_outer(x);
        self.b_vector.axpy(reward, x, 1.0);
        self.b_prime.axpy(reward, x, 1.0);
        self.factor = self.b_matrix.factor()?;
        self.theta_hat = self.factor.solve(&self.b_vector)?;
        self.round += 1;
        Ok(())
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn b_matrix(&self) -> &SpdMatrix {
        &self.b_matrix
    }

    pub fn b_vector(&self) -> &DVector<f64> {
        &self.b_vector
    }

    pub fn a_matrix(&self) -> &SpdMatrix {
        &self.a_matrix
    }

    pub fn b_prime(&self) -> &DVector<f64> {
        &self.b_prime
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn ranks(&self) -> (usize, usize) {
        (self.rank_p, self.rank_q)
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// Plain ridge estimate `A⁻¹b'` for this task.
    pub fn ridge_estimate(&self) -> Result<DVector<f64>> {
        self.a_matrix.factor()?.solve(&self.b_prime)
    }

    /// `‖x‖_{B⁻¹}`.
    pub fn weighted_norm(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.factor.inv_quad_form(x)?.sqrt())
    }

    /// Confidence radius `γ_k` for the current state.
    pub fn confidence_radius(&self, cfg: &PolicyConfig) -> f64 {
        confidence_radius(self.factor.logdet(), cfg, self.rank_p, self.rank_q)
    }
}

/// `γ = sqrt(log det B − q·log λ₁ − p·log λ₂ + log(1/δ²)) + prior term`.
///
/// The prior term is `√λ₂·V + (λ₁/√λ₂)·W` in general. Two degenerate pairs
/// are handled exactly: with `q = 0` the bias residual `W` is identically
/// zero, and with `p = 0` the smallest eigenvalue of `B₀` is `λ₁`, giving
/// `√λ₁·W`.
pub fn confidence_radius(logdet_b: f64, cfg: &PolicyConfig, p: usize, q: usize) -> f64 {
    let log_term = logdet_b - q as f64 * cfg.lambda1.ln() - p as f64 * cfg.lambda2.ln()
        + (1.0 / (cfg.delta * cfg.delta)).ln();
    let w = cfg.w_surrogate();
    let prior = if p == 0 {
        cfg.lambda1.sqrt() * w
    } else if q == 0 {
        cfg.lambda2.sqrt() * cfg.v_bound
    } else {
        cfg.lambda2.sqrt() * cfg.v_bound + cfg.lambda1 / cfg.lambda2.sqrt() * w
    };
    log_term.max(0.0).sqrt() + prior
}

/// `argmax_a xₐᵀθ̂ + γ·‖xₐ‖_{B⁻¹}`, lowest index on ties.
pub fn ucb_select(state: &ProjectedPolicyState, arms: &ArmSet, gamma: f64) -> Result<usize> {
    check_arms(arms, state.dim())?;
    let mut scores = Vec::with_capacity(arms.len());
    for x in arms.contexts.row_iter() {
        let x = x.transpose();
        scores.push(x.dot(&state.theta_hat) + gamma * state.weighted_norm(&x)?);
    }
    Ok(argmax(scores.into_iter()))
}

/// Samples `θ̃ ~ N(θ̂, v²B⁻¹)` and returns `argmax_a xₐᵀθ̃`.
pub fn ts_select<R: Rng + ?Sized>(
    state: &ProjectedPolicyState,
    arms: &ArmSet,
    posterior_scale: f64,
    rng: &mut R,
) -> Result<usize> {
    check_arms(arms, state.dim())?;
    let theta = state
        .factor
        .sample_precision(&state.theta_hat, posterior_scale, rng)?;
    let scores = &arms.contexts * theta;
    Ok(argmax(scores.iter().copied()))
}

/// Classic LinUCB on the ridge pair `(A, b')` with ridge parameter
/// `cfg.lambda_ridge`, using the full-rank (`p = d`) radius.
pub fn classic_linucb_select(
    a_matrix: &SpdMatrix,
    b_prime: &DVector<f64>,
    arms: &ArmSet,
    cfg: &PolicyConfig,
) -> Result<usize> {
    let d = a_matrix.dim();
    check_arms(arms, d)?;
    let factor = a_matrix.factor()?;
    let theta = factor.solve(b_prime)?;
    let gamma = confidence_radius(factor.logdet(), &cfg.plain_ridge(), d, 0) * cfg.exploration_scale;
    let mut scores = Vec::with_capacity(arms.len());
    for x in arms.contexts.row_iter() {
        let x = x.transpose();
        scores.push(x.dot(&theta) + gamma * factor.inv_quad_form(&x)?.sqrt());
    }
    Ok(argmax(scores.into_iter()))
}

fn check_arms(arms: &ArmSet, dim: usize) -> Result<()> {
    if arms.is_empty() {
        return Err(Error::EmptyArmSet);
    }
    if arms.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: arms.dim(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Projected LinUCB with a learned projection.
    PLinUcb,
    /// Projected Thompson sampling with a learned projection.
    PTs,
    LinUcb,
    Ts,
    /// Mean-biased OFUL: `P̂⊥ = I`, shrink toward the running task mean.
    BOful,
    /// Projected LinUCB given the true projection and mean.
    OracleUcb,
    /// Projected TS given the true projection and mean.
    OracleTs,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::PLinUcb,
        PolicyKind::PTs,
        PolicyKind::LinUcb,
        PolicyKind::Ts,
        PolicyKind::BOful,
        PolicyKind::OracleUcb,
        PolicyKind::OracleTs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::PLinUcb => "p-linucb",
            PolicyKind::PTs => "p-ts",
            PolicyKind::LinUcb => "linucb",
            PolicyKind::Ts => "ts",
            PolicyKind::BOful => "b-oful",
            PolicyKind::OracleUcb => "oracle-ucb",
            PolicyKind::OracleTs => "oracle-ts",
        }
    }

    pub fn uses_sampling(self) -> bool {
        matches!(self, PolicyKind::PTs | PolicyKind::Ts | PolicyKind::OracleTs)
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, PolicyKind::OracleUcb | PolicyKind::OracleTs)
    }

    pub fn is_projected(self) -> bool {
        matches!(self, PolicyKind::PLinUcb | PolicyKind::PTs)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy {s:?}")))
    }
}

/// One task's worth of policy: the estimator state plus the rule used to
/// pick arms from it.
#[derive(Debug, Clone)]
pub struct TaskPolicy {
    kind: PolicyKind,
    cfg: PolicyConfig,
    state: ProjectedPolicyState,
}

impl TaskPolicy {
    /// `cfg` must already be the effective config for `kind` (see
    /// [`PolicyConfig::plain_ridge`] for the classic baselines).
    pub fn new(kind: PolicyKind, pair: &ProjectionPair, cfg: PolicyConfig) -> Result<Self> {
        let state = ProjectedPolicyState::new(pair, &cfg)?;
        Ok(Self { kind, cfg, state })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ProjectedPolicyState {
        &self.state
    }

    /// Exploration radius actually used by the UCB rule.
    pub fn ucb_radius(&self) -> f64 {
        self.state.confidence_radius(&self.cfg) * self.cfg.exploration_scale
    }

    pub fn select<R: Rng + ?Sized>(&self, arms: &ArmSet, rng: &mut R) -> Result<usize> {
        if self.kind.uses_sampling() {
            let v = self.cfg.posterior_scale(self.state.dim());
            ts_select(&self.state, arms, v, rng)
        } else {
            ucb_select(&self.state, arms, self.ucb_radius())
        }
    }

    pub fn update(&mut self, x: &DVector<f64>, reward: f64) -> Result<()> {
        self.state.update(x, reward)
    }
}
