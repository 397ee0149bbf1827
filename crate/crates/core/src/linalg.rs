//! Symmetric positive-definite helpers.
//!
//! Every solve against a design matrix goes through a Cholesky factorization;
//! nothing in the crate forms an explicit inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A symmetric positive-definite matrix.
///
/// Construction symmetrizes the input as `(M + Mᵀ)/2`, which absorbs the
/// floating-point drift that accumulates from repeated `xxᵀ` updates.
/// Positive definiteness is only verified when a factorization is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    inner: DMatrix<f64>,
}

impl SpdMatrix {
    /// Wraps `m` after checking it is square and symmetric to [`SYMMETRY_TOL`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let mut out = Self { inner: m };
        out.symmetrize();
        Ok(out)
    }

    /// `c·I` of dimension `dim`.
    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        Self {
            inner: DMatrix::identity(dim, dim) * c,
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    /// In-place rank-one update `M += xxᵀ`.
    pub fn add_outer(&mut self, x: &DVector<f64>) {
        self.inner.ger(1.0, x, x, 1.0);
    }

    fn symmetrize(&mut self) {
        let n = self.inner.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.inner[(i, j)] + self.inner[(j, i)]);
                self.inner[(i, j)] = avg;
                self.inner[(j, i)] = avg;
            }
        }
    }

    /// Cholesky factorization of the symmetrized matrix.
    pub fn factor(&self) -> Result<SpdFactor> {
        let mut sym = self.clone();
        sym.symmetrize();
        let dim = sym.dim();
        let chol = Cholesky::new(sym.inner).ok_or(Error::NotPositiveDefinite { dim })?;
        // nalgebra accepts tiny or subnormal pivots; treat those as collapse too.
        let l = chol.l_dirty();
        for i in 0..dim {
            let piv = l[(i, i)];
            if !(piv.is_finite() && piv > f64::MIN_POSITIVE) {
                return Err(Error::NotPositiveDefinite { dim });
            }
        }
        Ok(SpdFactor { chol })
    }
}

/// A computed Cholesky factor `M = LLᵀ`, reusable across several solves.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Solves `Mx = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), rhs.len())?;
        Ok(self.chol.solve(rhs))
    }

    /// `log det M = 2 Σ log Lᵢᵢ`.
    pub fn logdet(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    }

    /// `‖x‖²_{M⁻¹} = xᵀM⁻¹x`, computed as `‖L⁻¹x‖²`.
    pub fn inv_quad_form(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let mut y = x.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut y);
        Ok(y.norm_squared())
    }

    /// Draw from `N(mean, scale²·M⁻¹)` using the factor of the precision `M`.
    ///
    /// With `M = LLᵀ`, `mean + scale·L⁻ᵀz` has covariance `scale²·M⁻¹`.
    pub fn sample_precision<R: Rng + ?Sized>(
        &self,
        mean: &DVector<f64>,
        scale: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        check_dim(self.dim(), mean.len())?;
        let mut z = standard_normal_vector(self.dim(), rng);
        self.chol.l_dirty().tr_solve_lower_triangular_mut(&mut z);
        Ok(mean + z * scale)
    }

    /// Draw from `N(mean, M)`, treating `M` as the covariance.
    pub fn sample_covariance<R: Rng + ?Sized>(
        &self,
        mean: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        check_dim(self.dim(), mean.len())?;
        let z = standard_normal_vector(self.dim(), rng);
        let l = self.chol.l_dirty().lower_triangle();
        Ok(mean + l * z)
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Solves `Mx = rhs` for SPD `M`.
pub fn spd_solve(m: &SpdMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.factor()?.solve(rhs)
}

/// `log det M` for SPD `M`.
pub fn spd_logdet(m: &SpdMatrix) -> Result<f64> {
    Ok(m.factor()?.logdet())
}

/// One draw from `N(mean, cov)`. Deterministic for a fixed generator state.
pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    rng: &mut R,
) -> Result<DVector<f64>> {
    cov.factor()?.sample_covariance(mean, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> SpdMatrix {
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = &g * g.transpose() + DMatrix::identity(dim, dim) * 0.5;
        SpdMatrix::new(m).unwrap()
    }

    /// Gaussian elimination with partial pivoting on a dense copy.
    fn gauss_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
        let n = m.nrows();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| m[(i, j)]).chain([rhs[i]]).collect())
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for row in (col + 1)..n {
                let f = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (a[i][n] - s) / a[i][i];
        }
        DVector::from_vec(x)
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let m = SpdMatrix::scaled_identity(3, 1.0);
        let x = spd_solve(&m, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);

        let m = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]))).unwrap();
        let x = spd_solve(&m, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert!((x - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn solve_matches_gaussian_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_spd(5, &mut rng);
            let rhs = standard_normal_vector(5, &mut rng);
            let x = spd_solve(&m, &rhs).unwrap();
            let oracle = gauss_solve(m.as_matrix(), &rhs);
            assert!((&x - &oracle).amax() < 1e-8);
            let resid = (m.as_matrix() * &x - &rhs).norm();
            assert!(resid <= 1e-8 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn logdet_cases() {
        assert_eq!(spd_logdet(&SpdMatrix::scaled_identity(4, 1.0)).unwrap(), 0.0);
        let v = spd_logdet(&SpdMatrix::scaled_identity(3, 2.0)).unwrap();
        assert!((v - 3.0 * 2f64.ln()).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_spd(6, &mut rng);
        let eig = m.as_matrix().clone().symmetric_eigen();
        let oracle: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        assert!((spd_logdet(&m).unwrap() - oracle).abs() < 1e-8);

        // log det(cM) = d log c + log det M
        let c = 3.7;
        let scaled = SpdMatrix::new(m.as_matrix() * c).unwrap();
        let lhs = spd_logdet(&scaled).unwrap();
        assert!((lhs - (6.0 * c.ln() + spd_logdet(&m).unwrap())).abs() < 1e-10);
    }

    #[test]
    fn indefinite_rejected() {
        let m = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).unwrap();
        assert!(matches!(m.factor(), Err(Error::NotPositiveDefinite { dim: 2 })));
        let m = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))).unwrap();
        assert!(spd_solve(&m, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn asymmetric_rejected_but_drift_absorbed() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = 0.5;
        assert!(matches!(SpdMatrix::new(m.clone()), Err(Error::NotSymmetric(_))));
        m[(0, 1)] = 1e-13;
        let s = SpdMatrix::new(m).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
    }

    #[test]
    fn inv_quad_form_matches_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_spd(4, &mut rng);
        let x = standard_normal_vector(4, &mut rng);
        let f = m.factor().unwrap();
        let direct = x.dot(&f.solve(&x).unwrap());
        assert!((f.inv_quad_form(&x).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn degenerate_covariance_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let cov = SpdMatrix::scaled_identity(3, 1e-30);
        let s = mvn_sample(&mean, &cov, &mut rng).unwrap();
        assert!((&s - &mean).amax() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mean = DVector::zeros(3);
        let cov = SpdMatrix::scaled_identity(3, 2.0);
        let a = mvn_sample(&mean, &cov, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = mvn_sample(&mean, &cov, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let cov = SpdMatrix::scaled_identity(2, 1.0);
        let mean = DVector::zeros(2);
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        let mut outer = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let s = mvn_sample(&mean, &cov, &mut rng).unwrap();
            outer += &s * s.transpose();
            sum += s;
        }
        let m = sum / n as f64;
        let c = outer / n as f64 - &m * m.transpose();
        assert!(m.amax() < 0.02);
        assert!((c - DMatrix::identity(2, 2)).norm() < 0.05);
    }

    #[test]
    fn precision_sampling_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let f = b.factor().unwrap();
        let mean = DVector::from_vec(vec![0.3, -0.1]);
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        let mut outer = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let s = f.sample_precision(&mean, 1.5, &mut rng).unwrap();
            outer += &s * s.transpose();
            sum += s;
        }
        let m = sum / n as f64;
        let c = outer / n as f64 - &m * m.transpose();
        let target = b.as_matrix().clone().try_inverse().unwrap() * 2.25;
        assert!((&c - &target).norm() / target.norm() < 0.03);
        assert!((m - mean).amax() < 0.02);
    }
}
