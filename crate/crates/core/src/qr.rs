//! Thin QR factorization and its reverse-mode adjoint.
//!
//! `qr_thin` factors a full-column-rank A (n x p, n >= p) into Q (n x p, with
//! orthonormal columns) and R (p x p, upper triangular). Householder
//! reflections are used rather than Gram-Schmidt: the loss of orthogonality
//! of classical/modified Gram-Schmidt grows with the condition number of A,
//! while Householder keeps ||Q^T Q - I|| at machine-epsilon level, which the
//! rest of the crate relies on (retractions must land on the manifold to far
//! tighter tolerance than task data is conditioned to).
//!
//! The factorization is made unique by flipping signs so that every diagonal
//! entry of R is strictly positive. Uniqueness matters twice over: it makes
//! the Q factor a well-defined smooth function of A (so it can sit inside a
//! differentiable program), and it pins down the oracle values in tests.
//!
//! `qr_backward` propagates a gradient with respect to Q back to a gradient
//! with respect to A. Only the Q factor is consumed downstream in this crate,
//! so the adjoint takes no R-gradient term. Correctness is defined by (and
//! tested against) central finite differences of the factorization itself.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Diagonal entries of R at or below this magnitude are treated as rank
/// deficiency. Well-scaled inputs in this crate sit many orders above it.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Thin QR factorization with the positive-diagonal sign convention.
///
/// Returns `(q, r)` with `a ~= q * r`, `q^T q = I` and `r[j][j] > 0`.
/// Fails with [`Error::RankDeficient`] naming the first offending column if
/// any `|r[j][j]| <= RANK_TOLERANCE`.
pub fn qr_thin(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (n, p) = a.shape();
    if n < p {
        return Err(Error::ShapeMismatch {
            op: "qr_thin",
            node: 0,
            detail: format!("need rows >= cols, got {n}x{p}"),
        });
    }

    // Reduce a working copy to upper-triangular form, one reflector per
    // column. Each reflector v annihilates the subdiagonal of its column;
    // the customary sign choice v = x + sign(x0) * ||x|| * e1 avoids
    // cancellation when x is already nearly axis-aligned.
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(p);
    for k in 0..p {
        let len = n - k;
        let mut v = vec![0.0; len];
        for i in 0..len {
            v[i] = work[(k + i, k)];
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
            v[0] += sign * norm;
            let vtv: f64 = v.iter().map(|x| x * x).sum();
            if vtv > 0.0 {
                // Apply I - beta v v^T to the trailing block. Both passes
                // walk row slices so the inner loops stay contiguous: first
                // accumulate dot_j = v^T work[.., j] for all trailing
                // columns, then subtract the rank-one update.
                let beta = 2.0 / vtv;
                let mut dots = vec![0.0; p - k];
                let data = work.data_mut();
                for i in 0..len {
                    let row = &data[(k + i) * p + k..(k + i) * p + p];
                    let vi = v[i];
                    for (d, w) in dots.iter_mut().zip(row) {
                        *d += vi * w;
                    }
                }
                for d in dots.iter_mut() {
                    *d *= beta;
                }
                for i in 0..len {
                    let row = &mut data[(k + i) * p + k..(k + i) * p + p];
                    let vi = v[i];
                    for (d, w) in dots.iter().zip(row.iter_mut()) {
                        *w -= *d * vi;
                    }
                }
            }
        }
        reflectors.push(v);
    }

    let mut r = Matrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            r[(i, j)] = work[(i, j)];
        }
    }
    for j in 0..p {
        if r[(j, j)].abs() <= RANK_TOLERANCE {
            return Err(Error::RankDeficient {
                column: j,
                threshold: RANK_TOLERANCE,
            });
        }
    }

    // Accumulate the thin Q by applying the reflectors, last to first, to
    // the leading p columns of the identity.
    let mut q = Matrix::zeros(n, p);
    for j in 0..p {
        q[(j, j)] = 1.0;
    }
    for k in (0..p).rev() {
        let v = &reflectors[k];
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        let beta = 2.0 / vtv;
        let len = v.len();
        let mut dots = vec![0.0; p];
        let data = q.data_mut();
        for i in 0..len {
            let row = &data[(k + i) * p..(k + i) * p + p];
            let vi = v[i];
            for (d, w) in dots.iter_mut().zip(row) {
                *d += vi * w;
            }
        }
        for d in dots.iter_mut() {
            *d *= beta;
        }
        for i in 0..len {
            let row = &mut data[(k + i) * p..(k + i) * p + p];
            let vi = v[i];
            for (d, w) in dots.iter().zip(row.iter_mut()) {
                *w -= *d * vi;
            }
        }
    }

    // Sign convention: positive diagonal of R, compensated in Q's columns.
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            for c in j..p {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }

    Ok((q, r))
}

/// Reverse-mode adjoint of the Q factor of [`qr_thin`].
///
/// Given the factorization `a = q * r` and an upstream gradient `dq` with
/// respect to `q`, returns the gradient with respect to `a`:
///
/// ```text
/// B  = q^T dq
/// H  = strict_lower(B - B^T) - B
/// dA = (dq + q * H) * r^{-T}
/// ```
///
/// The triangular solve requires the same rank condition as the forward
/// factorization and fails identically when violated.
pub fn qr_backward(q: &Matrix, r: &Matrix, dq: &Matrix) -> Result<Matrix> {
    let (n, p) = q.shape();
    if r.shape() != (p, p) || dq.shape() != (n, p) {
        return Err(Error::ShapeMismatch {
            op: "qr_backward",
            node: 0,
            detail: format!(
                "q is {n}x{p}, r must be {p}x{p} (got {}x{}), dq must be {n}x{p} (got {}x{})",
                r.rows(),
                r.cols(),
                dq.rows(),
                dq.cols()
            ),
        });
    }
    for j in 0..p {
        if r[(j, j)].abs() <= RANK_TOLERANCE {
            return Err(Error::RankDeficient {
                column: j,
                threshold: RANK_TOLERANCE,
            });
        }
    }

    let b = q.transpose().matmul(dq); // p x p
    let mut h = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let skew_part = if i > j { b[(i, j)] - b[(j, i)] } else { 0.0 };
            h[(i, j)] = skew_part - b[(i, j)];
        }
    }
    let numerator = dq.add(&q.matmul(&h)); // n x p

    // Solve X * r^T = numerator row by row; r^T is lower triangular, so each
    // row resolves by back substitution from the last column.
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        for j in (0..p).rev() {
            let mut acc = numerator[(i, j)];
            for k in (j + 1)..p {
                acc -= x[(i, k)] * r[(j, k)];
            }
            x[(i, j)] = acc / r[(j, j)];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, rng_from_seed};

    fn assert_close(actual: &Matrix, expected: &Matrix, tol: f64, what: &str) {
        let diff = actual.max_abs_diff(expected);
        assert!(
            diff <= tol,
            "{what}: max abs diff {diff:e} exceeds {tol:e}\nactual:\n{actual}\nexpected:\n{expected}"
        );
    }

    #[test]
    fn identity_factors_as_identity() {
        let (q, r) = qr_thin(&Matrix::identity(3)).unwrap();
        assert_close(&q, &Matrix::identity(3), 0.0, "q of identity");
        assert_close(&r, &Matrix::identity(3), 0.0, "r of identity");
    }

    #[test]
    fn single_column_normalizes() {
        // [3, 4]^T has norm 5; the Q factor is the unit vector, R the norm.
        let a = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let (q, r) = qr_thin(&a).unwrap();
        let q_expected = Matrix::from_rows(&[vec![0.6], vec![0.8]]).unwrap();
        assert_close(&q, &q_expected, 1e-15, "normalized column");
        assert!((r[(0, 0)] - 5.0).abs() <= 1e-15);
    }

    #[test]
    fn sign_convention_forces_positive_diagonal() {
        // diag(-2, 3) would naively give R with a negative corner; the
        // convention flips it into Q instead.
        let a = Matrix::from_rows(&[vec![-2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let (q, r) = qr_thin(&a).unwrap();
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
        let q_expected = Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_close(&q, &q_expected, 1e-15, "sign-fixed q");
        assert!((r[(0, 0)] - 2.0).abs() <= 1e-15);
        assert!((r[(1, 1)] - 3.0).abs() <= 1e-15);
    }

    #[test]
    fn reconstruction_and_orthonormality_across_shapes() {
        for (case, &(n, p)) in [(2usize, 1usize), (4, 2), (8, 3), (16, 16), (64, 32)]
            .iter()
            .enumerate()
        {
            let a = gaussian_matrix(n, p, &mut rng_from_seed(100 + case as u64));
            let (q, r) = qr_thin(&a).unwrap();
            let recon = q.matmul(&r);
            let scale = a.frobenius_norm().max(1.0);
            assert!(
                recon.sub(&a).frobenius_norm() <= 1e-10 * scale,
                "reconstruction failed for {n}x{p}"
            );
            let gram_defect = q.transpose().matmul(&q).sub(&Matrix::identity(p));
            assert!(
                gram_defect.frobenius_norm() <= 1e-12,
                "orthonormality failed for {n}x{p}: {:e}",
                gram_defect.frobenius_norm()
            );
            for j in 0..p {
                assert!(r[(j, j)] > 0.0, "diagonal sign violated at {j}");
                for i in (j + 1)..p {
                    assert_eq!(r[(i, j)], 0.0, "R not upper triangular");
                }
            }
        }
    }

    #[test]
    fn rank_deficient_input_names_first_bad_column() {
        // Second column is a multiple of the first.
        let a = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![3.0, 6.0],
        ])
        .unwrap();
        match qr_thin(&a) {
            Err(Error::RankDeficient { column, .. }) => assert_eq!(column, 1),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn backward_of_zero_gradient_is_zero() {
        let a = gaussian_matrix(5, 2, &mut rng_from_seed(3));
        let (q, r) = qr_thin(&a).unwrap();
        let da = qr_backward(&q, &r, &Matrix::zeros(5, 2)).unwrap();
        assert!(da.is_zero());
    }

    #[test]
    fn backward_scalar_case_is_exact() {
        // For a = [2]: q = [1], r = [2]. Perturbing a rescales but never
        // changes the (sign-fixed) unit q, so dL/da must vanish for any dq.
        let q = Matrix::scalar(1.0);
        let r = Matrix::scalar(2.0);
        let da = qr_backward(&q, &r, &Matrix::scalar(1.0)).unwrap();
        assert_eq!(da.as_scalar(), 0.0);
    }

    /// Central finite difference of t -> <Q(a + t*da_dir), dq> at t = 0.
    fn directional_fd(a: &Matrix, da_dir: &Matrix, dq: &Matrix, h: f64) -> f64 {
        let fwd = |t: f64| -> f64 {
            let shifted = a.add(&da_dir.scale(t));
            let (q, _) = qr_thin(&shifted).unwrap();
            q.frobenius_dot(dq)
        };
        (fwd(h) - fwd(-h)) / (2.0 * h)
    }

    #[test]
    fn backward_matches_finite_differences() {
        // The adjoint's defining property: <qr_backward(dq), da_dir> equals
        // the directional derivative of <Q(a), dq> along da_dir.
        let h = 1e-5;
        for seed in 0..50u64 {
            let mut rng = rng_from_seed(2000 + seed);
            let a = gaussian_matrix(6, 3, &mut rng);
            let da_dir = gaussian_matrix(6, 3, &mut rng);
            let dq = gaussian_matrix(6, 3, &mut rng);
            let (q, r) = qr_thin(&a).unwrap();
            let da = qr_backward(&q, &r, &dq).unwrap();
            let analytic = da.frobenius_dot(&da_dir);
            let numeric = directional_fd(&a, &da_dir, &dq, h);
            let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
            assert!(
                rel <= 1e-4,
                "seed {seed}: analytic {analytic} vs fd {numeric} (rel {rel:e})"
            );
        }
    }
}
