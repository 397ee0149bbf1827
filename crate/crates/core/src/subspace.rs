//! Online estimation of the task-parameter subspace.
//!
//! [`SubspaceModel`] absorbs one parameter estimate per finished task using
//! candid covariance-free incremental PCA on mean-centered residuals, and
//! hands out [`ProjectionPair`]s onto the leading components and their
//! orthogonal complement.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Residuals shorter than this fraction of the centered sample never
/// bootstrap a component (they are deflation round-off).
const BOOTSTRAP_REL_EPS: f64 = 1e-10;

/// Spread below which all eigenvalue estimates count as equal.
const DEGENERATE_SPECTRUM_EPS: f64 = 1e-12;

const CHECKPOINT_MAGIC: &str = "# ccipca-model v1";

/// Running CCIPCA state: mean, scaled components `v_j = σ_j u_j` and
/// per-component update counters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    dim: usize,
    count: usize,
    mean: DVector<f64>,
    components: Vec<DVector<f64>>,
    /// Number of samples absorbed by each component; zero until bootstrapped.
    updates: Vec<usize>,
    rank_override: Option<usize>,
}

impl SubspaceModel {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: DVector::zeros(dim),
            components: vec![DVector::zeros(dim); dim],
            updates: vec![0; dim],
            rank_override: None,
        }
    }

    pub fn with_rank_override(mut self, rank: Option<usize>) -> Self {
        self.rank_override = rank;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of absorbed task estimates.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn running_mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn scaled_components(&self) -> &[DVector<f64>] {
        &self.components
    }

    pub fn rank_override(&self) -> Option<usize> {
        self.rank_override
    }

    /// `σ̂_j = ‖v_j‖`, in maintained (not sorted) order.
    pub fn eigenvalue_estimates(&self) -> Vec<f64> {
        self.components.iter().map(|v| v.norm()).collect()
    }

    /// Absorbs a new task estimate.
    ///
    /// The mean moves first; the freshly centered residual is then deflated
    /// component by component, each component taking one CCIPCA step (or
    /// bootstrapping from the residual if it is still zero).
    pub fn update(&mut self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: theta.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        self.mean += (theta - &self.mean) / n;

        let mut z = theta - &self.mean;
        let floor = BOOTSTRAP_REL_EPS * z.norm();
        if z.norm() == 0.0 {
            return Ok(());
        }
        for j in 0..self.dim {
            let i = self.updates[j];
            if i == 0 {
                if z.norm() <= floor {
                    continue;
                }
                self.components[j] = z.clone();
            } else {
                self.components[j] = ccipca_step(&self.components[j], &z, i);
            }
            self.updates[j] += 1;

            let norm = self.components[j].norm();
            if norm > 0.0 {
                let u = &self.components[j] / norm;
                let proj = z.dot(&u);
                z.axpy(-proj, &u, 1.0);
            }
        }
        Ok(())
    }

    /// Rank chosen by the largest eigengap, unless a fixed rank was set.
    pub fn select_rank(&self) -> Result<usize> {
        match self.rank_override {
            Some(p) if p >= 1 && p <= self.dim => Ok(p),
            Some(p) => Err(Error::RankOutOfRange { rank: p, dim: self.dim }),
            None => select_rank(&self.eigenvalue_estimates()),
        }
    }

    /// Projection onto the `p` components with the largest `σ̂`.
    pub fn build_projections(&self, p: usize) -> Result<ProjectionPair> {
        if p == 0 || p > self.dim {
            return Err(Error::RankOutOfRange { rank: p, dim: self.dim });
        }
        let sigma = self.eigenvalue_estimates();
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

        let candidates: Vec<DVector<f64>> = order
            .iter()
            .take(p)
            .filter(|&&j| sigma[j] > 0.0)
            .map(|&j| &self.components[j] / sigma[j])
            .collect();
        let basis = orthonormal_basis(self.dim, &candidates, p);
        Ok(ProjectionPair::from_basis(&basis, &self.mean))
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "dim {}", self.dim);
        let _ = writeln!(s, "count {}", self.count);
        match self.rank_override {
            Some(p) => {
                let _ = writeln!(s, "rank_override {p}");
            }
            None => s.push_str("rank_override none\n"),
        }
        s.push_str("mean");
        for x in self.mean.iter() {
            let _ = write!(s, " {}", fmt_f64(*x));
        }
        s.push('\n');
        for (v, n) in self.components.iter().zip(&self.updates) {
            let _ = write!(s, "component {n}");
            for x in v.iter() {
                let _ = write!(s, " {}", fmt_f64(*x));
            }
            s.push('\n');
        }
        out.write_all(s.as_bytes())
    }

    pub fn read_checkpoint<R: BufRead>(input: R, origin: &Path) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse {
            file: origin.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(Error::io(origin, e)),
                None => Err(perr(0, "unexpected end of file")),
            }
        };

        let (n, magic) = next()?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(perr(n, "missing checkpoint header"));
        }
        let field = |n: usize, line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| perr(n, &format!("expected `{key}`")))
        };
        let (n, l) = next()?;
        let dim: usize = field(n, &l, "dim")?.parse().map_err(|_| perr(n, "bad dim"))?;
        let (n, l) = next()?;
        let count: usize = field(n, &l, "count")?.parse().map_err(|_| perr(n, "bad count"))?;
        let (n, l) = next()?;
        let ro = field(n, &l, "rank_override")?;
        let rank_override = match ro.as_str() {
            "none" => None,
            s => Some(s.parse().map_err(|_| perr(n, "bad rank_override"))?),
        };
        let parse_vec = |n: usize, s: &str| -> Result<DVector<f64>> {
            let vals: Vec<f64> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr(n, "bad float"))?;
            if vals.len() != dim {
                return Err(perr(n, &format!("expected {dim} values, got {}", vals.len())));
            }
            Ok(DVector::from_vec(vals))
        };
        let (n, l) = next()?;
        let mean = parse_vec(n, &field(n, &l, "mean")?)?;
        let mut components = Vec::with_capacity(dim);
        let mut updates = Vec::with_capacity(dim);
        for _ in 0..dim {
            let (n, l) = next()?;
            let rest = field(n, &l, "component")?;
            let (cnt, vals) = rest.split_once(' ').unwrap_or((rest.as_str(), ""));
            updates.push(cnt.parse().map_err(|_| perr(n, "bad update count"))?);
            components.push(parse_vec(n, vals)?);
        }
        Ok(Self {
            dim,
            count,
            mean,
            components,
            updates,
            rank_override,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(f), path)
    }
}

/// Formats with 17 significant digits, which round-trips every finite f64.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CCIPCA step on a single component:
/// `v ← (i/(i+1))·v + (1/(i+1))·z·(zᵀv)/‖v‖`.
pub fn ccipca_step(v: &DVector<f64>, z: &DVector<f64>, i: usize) -> DVector<f64> {
    let i = i as f64;
    let norm = v.norm();
    if norm == 0.0 {
        return z.clone();
    }
    v * (i / (i + 1.0)) + z * (z.dot(v) / norm / (i + 1.0))
}

/// Rank maximizing the eigengap `σ̂_p − σ̂_{p+1}` over `p ∈ 1..d−1`.
///
/// The input is sorted internally; ties go to the smallest `p`.
pub fn select_rank(eigenvalue_estimates: &[f64]) -> Result<usize> {
    let mut s = eigenvalue_estimates.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let (Some(&max), Some(&min)) = (s.first(), s.last()) else {
        return Err(Error::DegenerateSpectrum);
    };
    if s.len() < 2 || max - min <= DEGENERATE_SPECTRUM_EPS {
        return Err(Error::DegenerateSpectrum);
    }
    let mut best = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for p in 1..s.len() {
        let gap = s[p - 1] - s[p];
        if gap > best_gap {
            best_gap = gap;
            best = p;
        }
    }
    Ok(best)
}

/// Modified Gram–Schmidt (two passes) over `candidates`, completed with
/// standard basis vectors until `rank` orthonormal columns exist.
fn orthonormal_basis(dim: usize, candidates: &[DVector<f64>], rank: usize) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(rank);
    let fill = (0..dim).map(|i| {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        e
    });
    for cand in candidates.iter().cloned().chain(fill) {
        if basis.len() == rank {
            break;
        }
        let mut v = cand;
        for _ in 0..2 {
            for b in &basis {
                let c = v.dot(b);
                v.axpy(-c, b, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Complementary orthogonal projectors `(P̂, P̂⊥ = I − P̂)` and the bias
/// target `w = P̂⊥·θ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub p_hat: DMatrix<f64>,
    pub p_perp: DMatrix<f64>,
    pub rank_p: usize,
    pub rank_q: usize,
    pub bias_w: DVector<f64>,
}

impl ProjectionPair {
    /// `P̂ = UUᵀ` for a matrix `U` with orthonormal columns.
    pub fn from_basis(u: &DMatrix<f64>, mean: &DVector<f64>) -> Self {
        let d = u.nrows();
        let p_hat = u * u.transpose();
        let p_perp = DMatrix::identity(d, d) - &p_hat;
        let bias_w = &p_perp * mean;
        let pair = Self {
            p_hat,
            p_perp,
            rank_p: u.ncols(),
            rank_q: d - u.ncols(),
            bias_w,
        };
        debug_assert!(
            pair.check_invariants(1e-6).is_ok(),
            "{:?}",
            pair.check_invariants(1e-6)
        );
        pair
    }

    /// `P̂ = I, P̂⊥ = 0, w = 0`: no meta-knowledge.
    pub fn identity(dim: usize) -> Self {
        Self::from_basis(&DMatrix::identity(dim, dim), &DVector::zeros(dim))
    }

    /// `P̂ = 0, P̂⊥ = I, w = θ̄`: shrink every direction toward the mean.
    pub fn full_bias(mean: &DVector<f64>) -> Self {
        Self::from_basis(&DMatrix::zeros(mean.len(), 0), mean)
    }

    pub fn dim(&self) -> usize {
        self.p_hat.nrows()
    }

    /// Idempotency, symmetry, complementarity and trace checks.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        let d = self.dim();
        let p = &self.p_hat;
        let idem = (p * p - p).amax();
        if idem > tol {
            return Err(format!("P² ≠ P (err {idem:e})"));
        }
        let sym = (p - p.transpose()).amax();
        if sym > tol {
            return Err(format!("Pᵀ ≠ P (err {sym:e})"));
        }
        let comp = (p + &self.p_perp - DMatrix::<f64>::identity(d, d)).amax();
        if comp > tol {
            return Err(format!("P + P⊥ ≠ I (err {comp:e})"));
        }
        let tr = (p.trace() - self.rank_p as f64).abs();
        if tr > tol {
            return Err(format!("trace(P) ≠ p (err {tr:e})"));
        }
        if self.rank_p + self.rank_q != d {
            return Err("p + q ≠ d".into());
        }
        Ok(())
    }
}

/// `W = ‖P̂⊥(θ* − θ̄)‖`.
pub fn projection_error_metric(
    pair: &ProjectionPair,
    theta_star: &DVector<f64>,
    theta_bar: &DVector<f64>,
) -> f64 {
    (&pair.p_perp * (theta_star - theta_bar)).norm()
}
