//! Dense linear-algebra contracts shared by every estimator.
//!
//! All scatter and covariance matrices are symmetric positive definite, so
//! every solve goes through a Cholesky factorization. A failed factorization
//! is reported as [`Error::NotPositiveDefinite`] and callers decide whether to
//! retry with diagonal jitter (see [`factor_with_retry`]).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter used on the single retry after a failed factorization.
pub const RETRY_JITTER: f64 = 1e-8;

/// Cholesky factor of an SPD matrix together with its log-determinant.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl SpdFactor {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite(Some("non-finite entry".into())));
        }
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite(None))?;
        let l = chol.l_dirty();
        let mut logdet = 0.0;
        for i in 0..l.nrows() {
            let d = l[(i, i)];
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(None));
            }
            logdet += d.ln();
        }
        Ok(Self {
            chol,
            logdet: 2.0 * logdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        symmetrized(&inv)
    }

    /// `dᵀ Σ⁻¹ d` through one triangular solve; `buf` is overwritten.
    pub fn quad_form(&self, d: &[f64], buf: &mut DVector<f64>) -> f64 {
        debug_assert_eq!(d.len(), self.dim());
        buf.as_mut_slice().copy_from_slice(d);
        self.chol.l_dirty().solve_lower_triangular_mut(buf);
        buf.norm_squared()
    }
}

/// Solves `sigma · X = rhs` and returns `(X, log det sigma)`.
pub fn spd_solve_and_logdet(
    sigma: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    if rhs.nrows() != sigma.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs has {} rows, matrix is {}x{}",
            rhs.nrows(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let f = SpdFactor::new(sigma)?;
    Ok((f.solve(rhs), f.logdet()))
}

/// Factorizes `sigma`; on failure retries once with diagonal jitter.
///
/// The jitter is `ridge` when positive, otherwise `RETRY_JITTER · trace/d`.
/// Returns the factor, the matrix actually factorized, and whether the
/// retry was needed.
pub fn factor_with_retry(
    sigma: &DMatrix<f64>,
    ridge: f64,
) -> Result<(SpdFactor, Option<DMatrix<f64>>)> {
    match SpdFactor::new(sigma) {
        Ok(f) => Ok((f, None)),
        Err(Error::NotPositiveDefinite(_)) => {
            let jitter = retry_jitter(sigma, ridge);
            let mut ridged = sigma.clone();
            for i in 0..ridged.nrows() {
                ridged[(i, i)] += jitter;
            }
            let f = SpdFactor::new(&ridged).map_err(|_| {
                Error::NotPositiveDefinite(Some(format!("after ridge retry with {jitter:e}")))
            })?;
            Ok((f, Some(ridged)))
        }
        Err(e) => Err(e),
    }
}

pub fn retry_jitter(sigma: &DMatrix<f64>, ridge: f64) -> f64 {
    if ridge > 0.0 {
        return ridge;
    }
    let d = sigma.nrows().max(1) as f64;
    let tr = sigma.trace();
    if tr.is_finite() && tr > 0.0 {
        RETRY_JITTER * tr / d
    } else {
        RETRY_JITTER
    }
}

/// Quadratic form `(x − mu)ᵀ P (x − mu)` for a precision matrix `P`.
pub fn mahalanobis(x: &[f64], mu: &[f64], sigma_inv: &DMatrix<f64>) -> Result<f64> {
    let d = x.len();
    if mu.len() != d || sigma_inv.nrows() != d || sigma_inv.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "x has {d} entries, mu {}, precision {}x{}",
            mu.len(),
            sigma_inv.nrows(),
            sigma_inv.ncols()
        )));
    }
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    Ok(quad_form_dense(sigma_inv, &diff).max(0.0))
}

/// `dᵀ P d` for a symmetric `P`, reading only the column-major storage.
pub(crate) fn quad_form_dense(p: &DMatrix<f64>, d: &[f64]) -> f64 {
    let n = d.len();
    let s = p.as_slice();
    let mut acc = 0.0;
    for j in 0..n {
        let col = &s[j * n..(j + 1) * n];
        let mut inner = 0.0;
        for i in 0..n {
            inner += col[i] * d[i];
        }
        acc += inner * d[j];
    }
    acc
}

/// `(A + Aᵀ)/2`.
pub fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Rescales `sigma` in place so that its trace equals `target`.
pub fn normalize_trace(sigma: &mut DMatrix<f64>, target: f64) {
    let tr = sigma.trace();
    if tr > 0.0 && tr.is_finite() {
        *sigma *= target / tr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        a.transpose() * &a + DMatrix::identity(d, d)
    }

    #[test]
    fn identity_solve() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let (x, ld) = spd_solve_and_logdet(&i3, &i3).unwrap();
        assert_eq!(x, i3);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn diagonal_solve() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let rhs = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let (x, ld) = spd_solve_and_logdet(&s, &rhs).unwrap();
        assert!((x[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((x[(1, 0)] - 1.0 / 9.0).abs() < 1e-15);
        assert!((ld - 36f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..8 {
            let s = random_spd(d, &mut rng);
            let rhs = DMatrix::from_fn(d, 2, |_, _| rng.random_range(-1.0..1.0));
            let (x, ld) = spd_solve_and_logdet(&s, &rhs).unwrap();
            let eig = SymmetricEigen::new(s.clone());
            let expected: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
            assert!((ld - expected).abs() < 1e-9, "{ld} vs {expected}");
            let resid = (&s * &x - &rhs).norm();
            assert!(resid < 1e-10 * rhs.norm());
        }
    }

    #[test]
    fn logdet_scales_with_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spd(4, &mut rng);
        let rhs = DMatrix::identity(4, 4);
        let (_, base) = spd_solve_and_logdet(&s, &rhs).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let (_, ld) = spd_solve_and_logdet(&(&s * c), &rhs).unwrap();
            assert!((ld - (base + 4.0 * f64::ln(c))).abs() < 1e-12);
        }
    }

    #[test]
    fn non_spd_is_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SpdFactor::new(&s),
            Err(Error::NotPositiveDefinite(_))
        ));
        let zero = DMatrix::<f64>::zeros(3, 3);
        let (f, ridged) = factor_with_retry(&zero, 0.0).unwrap();
        assert_eq!(f.dim(), 3);
        assert!(ridged.is_some());
    }

    #[test]
    fn mahalanobis_cases() {
        let p = DMatrix::<f64>::identity(2, 2);
        assert_eq!(mahalanobis(&[1.0, 0.0], &[0.0, 0.0], &p).unwrap(), 1.0);
        assert_eq!(mahalanobis(&[3.0, -2.0], &[3.0, -2.0], &p).unwrap(), 0.0);
        assert!(mahalanobis(&[1.0], &[0.0, 0.0], &p).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_spd(4, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut naive = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                naive += (x[i] - mu[i]) * s[(i, j)] * (x[j] - mu[j]);
            }
        }
        assert!((mahalanobis(&x, &mu, &s).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn quad_form_via_factor_matches_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_spd(5, &mut rng);
        let f = SpdFactor::new(&s).unwrap();
        let d: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut buf = DVector::zeros(5);
        let q1 = f.quad_form(&d, &mut buf);
        let q2 = quad_form_dense(&f.inverse(), &d);
        assert!((q1 - q2).abs() < 1e-12 * q1.max(1.0));
    }

    proptest::proptest! {
        #[test]
        fn mahalanobis_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 4;
            let s = random_spd(d, &mut rng);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let perm = [2usize, 0, 3, 1];
            let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let mp: Vec<f64> = perm.iter().map(|&i| mu[i]).collect();
            let sp = DMatrix::from_fn(d, d, |a, b| s[(perm[a], perm[b])]);
            let q = mahalanobis(&x, &mu, &s).unwrap();
            let qp = mahalanobis(&xp, &mp, &sp).unwrap();
            proptest::prop_assert!((q - qp).abs() <= 1e-12 * q.max(1.0));
        }
    }
}
