//! Test-only helpers: random specifications satisfying the skew-symmetry
//! relations by construction, and independent dense oracles.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{self, Matrix};
use crate::model::{Covariance, Drifts, Interaction, ModelSpec, Potential};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `M` with `(M x)_1 = x_1`, `(M x)_k = x_{k−1} − x_k`.
pub fn differencing_matrix(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| match i {
        0 => (j == 0) as u8 as f64,
        _ if j + 1 == i => 1.0,
        _ if j == i => -1.0,
        _ => 0.0,
    })
}

/// Inverse of [`differencing_matrix`]: `x_k = x_1 − Σ_{j<k} y_j`.
fn undifferencing_matrix(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| match (i, j) {
        (_, 0) => 1.0,
        (i, j) if j <= i => -1.0,
        _ => 0.0,
    })
}

pub fn random_valid_spec<R: Rng>(rng: &mut R, particles: usize, range: usize) -> ModelSpec {
    let offset = rng.random_range(0.1..1.0);
    random_valid_spec_with_a11(rng, particles, range, offset)
}

/// Builds `Ã` as a weighted sum of the positive semidefinite terms
/// `½ (e_k − e_{k+m})(e_k − e_{k+m})ᵀ`, `1 ≤ m ≤ d`, with weights `w_{k,m} ≥ 0`
/// whose out-sums `Σ_m w_{k,m}` and in-sums `Σ_m w_{k−m,m}` are all 1.
/// Virtual nodes pad both ends, so every diagonal entry of the restricted
/// `Ã` is 1 and its strict upper column sums are `−½` in the interior,
/// which is exactly what a band of `r` with `r_{kk} = 1` requires. Then
/// `r_{lk} = 1 − Σ_{j=k}^{l−1} w_{j,l−j}` reproduces `ã_{kl} = (r_{lk} − r_{l(k+1)})/2`.
///
/// `Θ = [[a_11, b], [b, Ã]]` with `b_k = r_{k1} / 2`, and `a_11` is set to
/// the Schur-complement threshold `bᵀ Ã⁻¹ b` plus `a11_offset`, so a
/// positive offset yields a positive definite `A`.
pub fn random_valid_spec_with_a11<R: Rng>(
    rng: &mut R,
    particles: usize,
    range: usize,
    a11_offset: f64,
) -> ModelSpec {
    let d = range;
    // Generous window so callers may solve for ν beyond K + d − 1.
    let n = particles + 2 * d + 4;
    let m = n - 1;

    // Nodes 1 − d ..= m + d, stored at index k + d − 1.
    let nodes = m + 2 * d;
    let at = |k: isize| (k + d as isize - 1) as usize;
    let mut p: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    let mut w: Vec<Vec<f64>> = vec![p.clone(); nodes];
    // Swaps a→c, b→e into a→e, b→c keep every in- and out-sum.
    if d > 1 {
        for _ in 0..4 * nodes {
            let a = rng.random_range(0..nodes) as isize;
            let b = a + rng.random_range(1..d as i64) as isize;
            let (m1, m2) = (
                rng.random_range(1..=d) as isize,
                rng.random_range(1..=d) as isize,
            );
            let (c, e) = (a + m1, b + m2);
            let (ae, bc) = (e - a, c - b);
            if b as usize >= nodes
                || !(1..=d as isize).contains(&ae)
                || !(1..=d as isize).contains(&bc)
                || ae == m1
            {
                continue;
            }
            let room = w[a as usize][m1 as usize - 1].min(w[b as usize][m2 as usize - 1]);
            let eps = rng.random_range(0.0..0.5) * room;
            w[a as usize][m1 as usize - 1] -= eps;
            w[b as usize][m2 as usize - 1] -= eps;
            w[a as usize][ae as usize - 1] += eps;
            w[b as usize][bc as usize - 1] += eps;
        }
    }
    let weight = |k: isize, step: usize| -> f64 {
        if k < 1 - d as isize || at(k) >= nodes {
            p[step - 1]
        } else {
            w[at(k)][step - 1]
        }
    };

    // r[k][j] = r_{(k+j) k}, 1-based k stored at k − 1.
    let rows: Vec<Vec<f64>> = (1..=n)
        .map(|k| {
            (0..d)
                .map(|j| {
                    let l = k + j;
                    1.0 - (k..l).map(|i| weight(i as isize, l - i)).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let r = |l: usize, k: usize| -> f64 {
        if l < k || l >= k + d {
            0.0
        } else {
            rows[k - 1][l - k]
        }
    };

    // Θ, 1-based: index 1 is X_1, index k + 1 is the spacing Y_k.
    let mut theta = Matrix::zeros(n, n);
    for k in 1..n {
        for l in k..n {
            let v = if k == l {
                1.0
            } else {
                0.5 * (r(l, k) - r(l, k + 1))
            };
            theta[(k, l)] = v;
            theta[(l, k)] = v;
        }
        theta[(0, k)] = 0.5 * r(k, 1);
        theta[(k, 0)] = 0.5 * r(k, 1);
    }

    let a_tilde = Matrix::from_fn(m, m, |i, j| theta[(i + 1, j + 1)]);
    let b: Vec<f64> = (0..m).map(|i| theta[(0, i + 1)]).collect();
    let chol = linalg::cholesky_dense(&a_tilde).expect("Ã positive definite by construction");
    let w = solve_lower(&chol.lower, &b);
    let threshold: f64 = w.iter().map(|v| v * v).sum();
    theta[(0, 0)] = threshold + a11_offset;

    let inv = undifferencing_matrix(n);
    let a = inv.matmul(&theta).matmul(&inv.transpose());
    let dense: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (a[(i, j)] + a[(j, i)])).collect())
        .collect();

    let k0 = rng.random_range(1..=4usize);
    let values = (0..k0).map(|_| rng.random_range(-1.0..1.0)).collect();
    ModelSpec {
        particles,
        range: d,
        covariance: Covariance::Dense(dense),
        interaction: Interaction::Banded(rows),
        drifts: Drifts { values, k0 },
        potential: Potential::OConnellYor { mu: 2.0 },
    }
}

fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[i];
        for j in 0..i {
            acc -= l[(i, j)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

/// Dense Gaussian elimination with partial pivoting on the full `M × M`
/// truncation of `(2Ã − R̃) ν = (μ_k − μ_{k+1})_k`, ignoring the band
/// structure entirely.
pub fn dense_nu_oracle(spec: &ModelSpec, m: usize) -> Vec<f64> {
    let mut a = Matrix::try_from_fn(m, m, |i, j| linalg::nu_system_entry(spec, i + 1, j + 1))
        .expect("window available");
    let mut b: Vec<f64> = (1..=m).map(|k| spec.mu(k) - spec.mu(k + 1)).collect();
    lu_solve(&mut a, &mut b)
}

pub fn lu_solve(a: &mut Matrix, b: &mut [f64]) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        if pivot != col {
            for j in 0..n {
                let tmp = a[(col, j)];
                a[(col, j)] = a[(pivot, j)];
                a[(pivot, j)] = tmp;
            }
            b.swap(col, pivot);
        }
        for i in col + 1..n {
            let f = a[(i, col)] / a[(col, col)];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[(i, j)] -= f * a[(col, j)];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in i + 1..n {
            acc -= a[(i, j)] * x[j];
        }
        x[i] = acc / a[(i, i)];
    }
    x
}
