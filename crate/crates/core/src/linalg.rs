//! Dense symmetric linear algebra used across the crate.
//!
//! The eigensolver is a self-contained cyclic Jacobi iteration: rotations
//! are applied in a fixed pair order, so the decomposition is bit-identical
//! across runs and platforms. Problem sizes here are small (dense n up to a
//! few hundred), where Jacobi is both simple and accurate.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Relative off-diagonal threshold at which the Jacobi sweep stops.
pub const JACOBI_REL_TOL: f64 = 1e-13;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition `A = V diag(values) V^T` of a symmetric matrix.
///
/// `values` are sorted in descending order; column `j` of `vectors` is the
/// unit eigenvector for `values[j]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

/// Frobenius norm.
pub fn frob_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Frobenius norm of the off-diagonal part.
fn offdiag_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j] ] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps rotate every upper-triangle pair in a fixed `(p, q)` order until
/// the off-diagonal Frobenius norm drops below `JACOBI_REL_TOL * ||A||_F`.
pub fn jacobi_eigen(a: &Array2<f64>) -> Result<SymEigen> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols(), "jacobi_eigen needs a square matrix");
    let norm = frob_norm(a);
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);

    if norm > 0.0 {
        let target = JACOBI_REL_TOL * norm;
        let mut converged = false;
        for _sweep in 0..JACOBI_MAX_SWEEPS {
            if offdiag_norm(&m) <= target {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[[p, q]];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                    // tan of the rotation angle; the stable root of
                    // t^2 + 2*theta*t - 1 = 0 with smaller magnitude.
                    let t = if theta.abs() > 1e150 {
                        0.5 / theta
                    } else {
                        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);

                    let app = m[[p, p]];
                    let aqq = m[[q, q]];
                    m[[p, p]] = app - t * apq;
                    m[[q, q]] = aqq + t * apq;
                    m[[p, q]] = 0.0;
                    m[[q, p]] = 0.0;
                    for i in 0..n {
                        if i != p && i != q {
                            let aip = m[[i, p]];
                            let aiq = m[[i, q]];
                            m[[i, p]] = aip - s * (aiq + tau * aip);
                            m[[i, q]] = aiq + s * (aip - tau * aiq);
                            m[[p, i]] = m[[i, p]];
                            m[[q, i]] = m[[i, q]];
                        }
                    }
                    for i in 0..n {
                        let vip = v[[i, p]];
                        let viq = v[[i, q]];
                        v[[i, p]] = vip - s * (viq + tau * vip);
                        v[[i, q]] = viq + s * (vip - tau * viq);
                    }
                }
            }
        }
        if !converged && offdiag_norm(&m) > target {
            return Err(Error::EigenNoConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
                offdiag: offdiag_norm(&m),
            });
        }
    }

    // Sort descending by eigenvalue, permuting vector columns to match.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[[i, dst]] = v[[i, src]];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Solves `A x = b` for symmetric positive-definite `A` via the Jacobi
/// eigendecomposition, returning the solution and the spectral condition
/// estimate `lambda_max / lambda_min`.
pub fn spd_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<(Array1<f64>, f64)> {
    let eig = jacobi_eigen(a)?;
    let n = a.nrows();
    let lambda_max = eig.values[0];
    let lambda_min = eig.values[n - 1];
    if lambda_min <= 0.0 {
        return Err(Error::SingularNormalEquations { cond: f64::INFINITY });
    }
    let cond = lambda_max / lambda_min;
    // x = V diag(1/lambda) V^T b
    let vt_b: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| eig.vectors[[i, j]] * b[i]).sum::<f64>())
        .collect();
    let mut x = Array1::<f64>::zeros(n);
    for i in 0..n {
        x[i] = (0..n)
            .map(|j| eig.vectors[[i, j]] * vt_b[j] / eig.values[j])
            .sum::<f64>();
    }
    Ok((x, cond))
}

/// `W * X` for an `n x n` mixing matrix and `n x d` stacked iterates.
///
/// The inner reduction runs over ascending neighbor index, so the result is
/// a fixed function of the inputs regardless of thread count or call site.
pub fn mix_multiply(w: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let n = w.nrows();
    let d = x.ncols();
    debug_assert_eq!(w.ncols(), n);
    debug_assert_eq!(x.nrows(), n);
    let mut out = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in 0..n {
            let wij = w[[i, j]];
            if wij == 0.0 {
                continue;
            }
            for col in 0..d {
                out[[i, col]] += wij * x[[j, col]];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn reconstruct(e: &SymEigen) -> Array2<f64> {
        let n = e.values.len();
        let mut out = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] = (0..n)
                    .map(|k| e.vectors[[i, k]] * e.values[k] * e.vectors[[j, k]])
                    .sum();
            }
        }
        out
    }

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let a = arr2(&[[3.0, 0.0], [0.0, -1.0]]);
        let e = jacobi_eigen(&a).unwrap();
        assert_eq!(e.values, vec![3.0, -1.0]);
    }

    #[test]
    fn two_by_two_hand_case() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1 with eigenvectors
        // (1,1)/sqrt(2) and (1,-1)/sqrt(2).
        let a = arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let e = jacobi_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let v0 = (e.vectors[[0, 0]], e.vectors[[1, 0]]);
        assert!(
            (v0.0.abs() - (0.5f64).sqrt()).abs() < 1e-14
                && (v0.0 - v0.1).abs() < 1e-14,
            "leading eigenvector should be the consensus direction, got {v0:?}"
        );
    }

    #[test]
    fn tridiagonal_analytic_eigenvalues() {
        // tridiag(-1, 2, -1) of size 3 has eigenvalues 2 - sqrt(2), 2, 2 + sqrt(2).
        let a = arr2(&[[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]);
        let e = jacobi_eigen(&a).unwrap();
        let expect = [2.0 + 2f64.sqrt(), 2.0, 2.0 - 2f64.sqrt()];
        for (got, want) in e.values.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-13, "got {got}, want {want}");
        }
    }

    #[test]
    fn zero_matrix() {
        let a = Array2::<f64>::zeros((4, 4));
        let e = jacobi_eigen(&a).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruction_and_orthogonality_on_random_symmetric() {
        use crate::rng::{normal_vec, StreamTag};
        for seed in 0..5u64 {
            let n = 12;
            let raw = normal_vec(seed, StreamTag::DataMatrix, 99, 0, n * n);
            let mut a = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..=i {
                    let v = raw[i * n + j];
                    a[[i, j]] = v;
                    a[[j, i]] = v;
                }
            }
            let e = jacobi_eigen(&a).unwrap();
            assert!(
                max_abs_diff(&reconstruct(&e), &a) < 1e-12,
                "seed {seed}: V diag V^T should reconstruct A"
            );
            // V^T V = I
            let n_ = n;
            for i in 0..n_ {
                for j in 0..n_ {
                    let dot: f64 = (0..n_).map(|k| e.vectors[[k, i]] * e.vectors[[k, j]]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12, "V column {i}.{j} dot {dot}");
                }
            }
        }
    }

    #[test]
    fn eigenvalues_match_external_solver() {
        use crate::rng::{normal_vec, StreamTag};
        for seed in 0..3u64 {
            let n = 10;
            let raw = normal_vec(seed, StreamTag::DataMatrix, 7, 1, n * n);
            let mut a = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..=i {
                    a[[i, j]] = raw[i * n + j];
                    a[[j, i]] = raw[i * n + j];
                }
            }
            let mine = jacobi_eigen(&a).unwrap();
            let na = nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
            let mut theirs: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(|x, y| y.partial_cmp(x).unwrap());
            for (m, t) in mine.values.iter().zip(theirs.iter()) {
                assert!((m - t).abs() < 1e-10, "seed {seed}: {m} vs {t}");
            }
        }
    }

    #[test]
    fn spd_solve_hand_case() {
        // A = [[4,1],[1,3]], b = [1,2]  =>  x = [1/11, 7/11], cond via
        // eigenvalues (7 +- sqrt(5))/2.
        let a = arr2(&[[4.0, 1.0], [1.0, 3.0]]);
        let b = ndarray::arr1(&[1.0, 2.0]);
        let (x, cond) = spd_solve(&a, &b).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
        let want_cond = (7.0 + 5f64.sqrt()) / (7.0 - 5f64.sqrt());
        assert!((cond - want_cond).abs() < 1e-12);
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = arr2(&[[1.0, 2.0], [2.0, 1.0]]); // eigenvalues 3, -1
        let b = ndarray::arr1(&[1.0, 1.0]);
        assert!(matches!(
            spd_solve(&a, &b),
            Err(Error::SingularNormalEquations { .. })
        ));
    }

    #[test]
    fn mix_multiply_matches_ndarray_dot() {
        use crate::rng::{normal_vec, StreamTag};
        let n = 9;
        let d = 5;
        let wv = normal_vec(3, StreamTag::DataMatrix, 0, 2, n * n);
        let xv = normal_vec(3, StreamTag::DataMatrix, 1, 2, n * d);
        let w = Array2::from_shape_vec((n, n), wv).unwrap();
        let x = Array2::from_shape_vec((n, d), xv).unwrap();
        let diff = max_abs_diff(&mix_multiply(&w, &x), &w.dot(&x));
        assert!(diff < 1e-13, "max difference {diff}");
    }
}
