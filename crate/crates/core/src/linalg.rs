//! Dense and banded kernels: the `Ã` transform, the triangular solve for the
//! drift constants `ν`, Cholesky factorization of the noise covariance, and
//! the covariance `Θ` of `(X_1, X_1 − X_2, ..., X_{n−1} − X_n)`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use thiserror::Error;

use crate::model::{ModelError, ModelSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("diagonal entry {k} of 2Ã − R̃ is {value}, expected 1")]
    DiagonalNotUnit { k: usize, value: f64 },
    #[error("requested {requested} drift constants, need at least {needed}")]
    TooFewIndices { requested: usize, needed: usize },
}

/// Row-major dense matrix with 0-based indexing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn try_from_fn<E>(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> Result<f64, E>,
    ) -> Result<Self, E> {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j)?;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self[(i, j)] == 0.0))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `ã_{kl} = a_{kl} + a_{(k+1)(l+1)} − a_{(k+1)l} − a_{k(l+1)}`, the
/// covariance rate of the spacings `X_k − X_{k+1}` and `X_l − X_{l+1}`.
pub fn a_tilde(spec: &ModelSpec, k: usize, l: usize) -> Result<f64, ModelError> {
    Ok(spec.a(k, l)? + spec.a(k + 1, l + 1)? - spec.a(k + 1, l)? - spec.a(k, l + 1)?)
}

/// Entry `(k, l)` of `2Ã − R̃`, where `R̃_{kl} = r_{lk} − r_{l(k+1)}`.
///
/// With rows indexed by `k`, the skew-symmetry relations make this matrix
/// lower triangular with unit diagonal and `d` subdiagonals.
pub fn nu_system_entry(spec: &ModelSpec, k: usize, l: usize) -> Result<f64, ModelError> {
    Ok(2.0 * a_tilde(spec, k, l)? - (spec.r(l, k)? - spec.r(l, k + 1)?))
}

/// Drift constants `ν_1, ..., ν_M`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NuVector {
    pub values: Vec<f64>,
}

impl NuVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `ν_k`, 1-based.
    pub fn get(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    /// Max-norm residual of `(2Ã − R̃) ν = (μ_k − μ_{k+1})_k` over the
    /// indices this vector covers.
    pub fn residual(&self, spec: &ModelSpec) -> Result<f64, ModelError> {
        let mut worst = 0.0f64;
        for k in 1..=self.len() {
            let mut lhs = 0.0;
            for l in 1..=self.len() {
                lhs += nu_system_entry(spec, k, l)? * self.get(l);
            }
            let rhs = spec.mu(k) - spec.mu(k + 1);
            worst = worst.max(libm::fabs(lhs - rhs));
        }
        Ok(worst)
    }
}

const UNIT_DIAGONAL_TOL: f64 = 1e-9;

/// Solves `(2Ã − R̃) ν = (μ_1 − μ_2, ..., μ_M − μ_{M+1})` by forward
/// substitution in increasing `k`, using only the `d` subdiagonals.
pub fn solve_nu(spec: &ModelSpec, len: usize) -> Result<NuVector, LinalgError> {
    let needed = spec.window() - 1;
    if len < needed {
        return Err(LinalgError::TooFewIndices {
            requested: len,
            needed,
        });
    }
    let d = spec.range;
    let mut nu = vec![0.0; len];
    for k in 1..=len {
        let diag = nu_system_entry(spec, k, k)?;
        if libm::fabs(diag - 1.0) > UNIT_DIAGONAL_TOL {
            return Err(LinalgError::DiagonalNotUnit { k, value: diag });
        }
        let mut acc = spec.mu(k) - spec.mu(k + 1);
        for l in k.saturating_sub(d).max(1)..k {
            acc -= nu_system_entry(spec, k, l)? * nu[l - 1];
        }
        nu[k - 1] = acc;
    }
    Ok(NuVector { values: nu })
}

/// Lower-triangular `L` with `L Lᵀ = A^{(K)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: Matrix,
}

impl CholeskyFactor {
    pub fn reconstruct(&self) -> Matrix {
        self.lower.matmul(&self.lower.transpose())
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// `out = L ξ`.
    pub fn apply(&self, xi: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim()) {
            let row = &self.lower.row(i)[..=i];
            *o = row.iter().zip(xi).map(|(l, x)| l * x).sum();
        }
    }
}

/// The covariance block `(a_{kl})_{k,l ≤ K}`.
pub fn covariance_block(spec: &ModelSpec, n: usize) -> Result<Matrix, ModelError> {
    Matrix::try_from_fn(n, n, |i, j| spec.a(i + 1, j + 1))
}

pub fn cholesky(spec: &ModelSpec) -> Result<CholeskyFactor, LinalgError> {
    cholesky_dense(&covariance_block(spec, spec.particles)?)
}

/// Cholesky–Banachiewicz on a symmetric matrix (only the lower triangle is
/// read). The failing pivot is reported 1-based.
pub fn cholesky_dense(a: &Matrix) -> Result<CholeskyFactor, LinalgError> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(LinalgError::NotPositiveDefinite { pivot: i + 1 });
                }
                l[(i, i)] = libm::sqrt(sum);
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Covariance rate `Θ` of `(X_1, X_1 − X_2, ..., X_{n−1} − X_n)`.
pub fn theta(spec: &ModelSpec, n: usize) -> Result<Matrix, ModelError> {
    if n == 0 || n > spec.particles {
        return Err(ModelError::Invalid(alloc::format!(
            "theta dimension {n} outside 1..={}",
            spec.particles
        )));
    }
    Matrix::try_from_fn(n, n, |i, j| {
        let (k, l) = (i + 1, j + 1);
        Ok(match (k, l) {
            (1, 1) => spec.a(1, 1)?,
            (1, l) => spec.a(1, l - 1)? - spec.a(1, l)?,
            (k, 1) => spec.a(k - 1, 1)? - spec.a(k, 1)?,
            (k, l) => {
                // Grouped so that θ_kl and θ_lk round identically.
                (spec.a(k - 1, l - 1)? + spec.a(k, l)?) - (spec.a(k, l - 1)? + spec.a(k - 1, l)?)
            }
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::model::{Drifts, Interaction};
    use crate::testkit;

    fn oy(k: usize) -> ModelSpec {
        catalog::preset_oconnell_yor(2.0, k).unwrap()
    }

    #[test]
    fn a_tilde_identity_half() {
        let spec = oy(6);
        assert_eq!(a_tilde(&spec, 2, 2).unwrap(), 1.0);
        assert_eq!(a_tilde(&spec, 2, 3).unwrap(), -0.5);
        assert_eq!(a_tilde(&spec, 3, 2).unwrap(), -0.5);
        assert_eq!(a_tilde(&spec, 2, 5).unwrap(), 0.0);
    }

    #[test]
    fn nu_vanishes_for_constant_drift() {
        let spec = oy(5);
        let nu = solve_nu(&spec, 5).unwrap();
        assert!(nu.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nu_for_step_drift_is_one() {
        let mut spec = oy(8);
        spec.drifts = Drifts {
            values: vec![2.0, 1.0],
            k0: 2,
        };
        let nu = solve_nu(&spec, 8).unwrap();
        for (k, v) in nu.values.iter().enumerate() {
            // ν_k = μ_1 − μ_{k+1}
            assert_eq!(*v, spec.mu(1) - spec.mu(k + 2));
            assert_eq!(*v, 1.0);
        }
        assert!(nu.residual(&spec).unwrap() <= 1e-10);
    }

    #[test]
    fn nu_matches_dense_lu_for_random_specs() {
        let mut rng = testkit::rng(21);
        for d in 1..=3 {
            let spec = testkit::random_valid_spec(&mut rng, 10, d);
            let m = 12;
            let nu = solve_nu(&spec, m).unwrap();
            let oracle = testkit::dense_nu_oracle(&spec, m);
            let err = nu
                .values
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-12, "d = {d}: {err}");
            assert!(nu.residual(&spec).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn nu_is_eventually_constant_for_stabilized_drifts() {
        let mut spec = oy(6);
        spec.drifts = Drifts {
            values: vec![3.0, 1.5, 1.0],
            k0: 3,
        };
        let nu = solve_nu(&spec, 10).unwrap();
        let tail = nu.get(3);
        for k in 3..=10 {
            assert_eq!(nu.get(k), tail);
        }
    }

    #[test]
    fn non_unit_diagonal_is_rejected() {
        let mut spec = oy(3);
        spec.interaction = Interaction::Banded(vec![vec![1.5]; 8]);
        assert!(matches!(
            solve_nu(&spec, 3),
            Err(LinalgError::DiagonalNotUnit { k: 1, .. })
        ));
    }

    #[test]
    fn too_few_indices() {
        let spec = oy(4);
        assert!(matches!(
            solve_nu(&spec, 3),
            Err(LinalgError::TooFewIndices { needed: 4, .. })
        ));
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&oy(3)).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!(
            l.lower
                .max_abs_diff(&Matrix::from_fn(3, 3, |i, j| if i == j { s } else { 0.0 }))
                < 1e-15
        );

        let a = Matrix::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 1.0 });
        let l = cholesky_dense(&a).unwrap();
        let expected = Matrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => 2f64.sqrt(),
            (1, 0) => 1.0 / 2f64.sqrt(),
            (1, 1) => 1.5f64.sqrt(),
            _ => 0.0,
        });
        assert!(l.lower.max_abs_diff(&expected) < 1e-15);
        assert!(l.reconstruct().max_abs_diff(&a) <= 1e-10);

        let bad = Matrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert_eq!(
            cholesky_dense(&bad),
            Err(LinalgError::NotPositiveDefinite { pivot: 2 })
        );
    }

    #[test]
    fn cholesky_reconstructs_random_covariances() {
        let mut rng = testkit::rng(5);
        for _ in 0..10 {
            let spec = testkit::random_valid_spec(&mut rng, 12, 3);
            let l = cholesky(&spec).unwrap();
            let a = covariance_block(&spec, 12).unwrap();
            assert!(l.reconstruct().max_abs_diff(&a) <= 1e-10);
        }
    }

    #[test]
    fn theta_identity_half() {
        let t = theta(&oy(5), 3).unwrap();
        let expected = [[0.5, 0.5, 0.0], [0.5, 1.0, -0.5], [0.0, -0.5, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(t[(i, j)], expected[i][j]);
            }
        }
        let t1 = theta(&oy(5), 1).unwrap();
        assert_eq!(t1[(0, 0)], 0.5);
        assert!(theta(&oy(2), 3).is_err());
    }

    #[test]
    fn theta_is_congruence_by_differencing() {
        let mut rng = testkit::rng(9);
        for _ in 0..10 {
            let spec = testkit::random_valid_spec(&mut rng, 6, 2);
            let n = 4;
            let t = theta(&spec, n).unwrap();
            let m = testkit::differencing_matrix(n);
            let a = covariance_block(&spec, n).unwrap();
            let oracle = m.matmul(&a).matmul(&m.transpose());
            assert!(t.max_abs_diff(&oracle) <= 1e-12);
            assert!(t.max_abs_diff(&t.transpose()) == 0.0);
            assert!(cholesky_dense(&t).is_ok());
        }
    }
}
