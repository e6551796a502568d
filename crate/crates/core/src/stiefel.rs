//! The Stiefel manifold St(n, p) and its tangent-space toolkit.
//!
//! St(n, p) is the set of n x p matrices with orthonormal columns
//! (X^T X = I_p, n >= p); p = n gives the orthogonal group. The tangent
//! space at X consists of the matrices Z with X^T Z + Z^T X = 0.
//!
//! Three geometric operations drive everything else in the crate:
//!
//! * projection of an arbitrary (Euclidean) gradient onto the tangent space,
//!   Z = (I - X X^T) G + X skew(X^T G), which realizes the Riemannian
//!   gradient under the embedded metric;
//! * the QR retraction R_X(Z) = qf(X + Z), where qf is the Q factor of the
//!   thin QR factorization - a first-order retraction that stays cheap
//!   (no matrix exponentials) while mapping updates back onto the manifold;
//! * the chordal distance ||X - Y||_F, the embedding distance used by the
//!   kernel loss.
//!
//! Membership and tangency are validated at construction time, so a
//! [`StiefelPoint`] or [`TangentVector`] in hand is always legitimate.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::qr::qr_thin;
use crate::rng::{gaussian_matrix, rng_from_seed};

/// Constructed points must satisfy ||X^T X - I||_F at or below this.
/// Fresh factorizations land near 1e-15; the slack covers long update chains.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-8;

/// Constructed tangents must satisfy ||X^T Z + Z^T X||_F at or below this.
pub const TANGENCY_TOLERANCE: f64 = 1e-8;

/// A validated point on St(n, p), stored as the underlying n x p matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    value: Matrix,
}

impl StiefelPoint {
    /// Validates shape (n >= p >= 1) and orthonormality, then wraps.
    pub fn new(value: Matrix) -> Result<Self> {
        let (n, p) = value.shape();
        if n < p {
            return Err(Error::ShapeMismatch {
                op: "stiefel_point",
                node: 0,
                detail: format!("need rows >= cols, got {n}x{p}"),
            });
        }
        let defect = orthonormality_defect(&value);
        if !defect.is_finite() || defect > ORTHONORMALITY_TOLERANCE {
            return Err(Error::NotOrthonormal {
                defect,
                tolerance: ORTHONORMALITY_TOLERANCE,
            });
        }
        Ok(StiefelPoint { value })
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn into_value(self) -> Matrix {
        self.value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

/// A validated tangent vector, carrying its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: StiefelPoint,
    value: Matrix,
}

impl TangentVector {
    /// Validates shape agreement and tangency at `base`, then wraps.
    pub fn new(base: StiefelPoint, value: Matrix) -> Result<Self> {
        if value.shape() != base.shape() {
            return Err(Error::ShapeMismatch {
                op: "tangent_vector",
                node: 0,
                detail: format!(
                    "base is {}x{}, tangent is {}x{}",
                    base.shape().0,
                    base.shape().1,
                    value.rows(),
                    value.cols()
                ),
            });
        }
        let defect = tangency_defect(base.value(), &value);
        if !defect.is_finite() || defect > TANGENCY_TOLERANCE {
            return Err(Error::NotTangent {
                defect,
                tolerance: TANGENCY_TOLERANCE,
            });
        }
        Ok(TangentVector { base, value })
    }

    pub fn base(&self) -> &StiefelPoint {
        &self.base
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }
}

/// ||X^T X - I||_F, the orthonormality defect of an arbitrary matrix.
pub fn orthonormality_defect(x: &Matrix) -> f64 {
    let p = x.cols();
    x.transpose()
        .matmul(x)
        .sub(&Matrix::identity(p))
        .frobenius_norm()
}

/// ||X^T Z + Z^T X||_F, the tangency defect of `z` at `x`.
pub fn tangency_defect(x: &Matrix, z: &Matrix) -> f64 {
    let xtz = x.transpose().matmul(z);
    xtz.add(&xtz.transpose()).frobenius_norm()
}

/// Skew-symmetric part (M - M^T) / 2 of a square matrix.
pub fn skew(m: &Matrix) -> Result<Matrix> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::ShapeMismatch {
            op: "skew",
            node: 0,
            detail: format!("need a square matrix, got {r}x{c}"),
        });
    }
    Ok(m.sub(&m.transpose()).scale(0.5))
}

/// Projects a Euclidean gradient `g` onto the tangent space at `x`:
///
/// ```text
/// Z = (I - X X^T) G + X skew(X^T G)
/// ```
///
/// This is the Riemannian gradient of the ambient function under the
/// embedded metric. The formula above is evaluated literally; tests verify
/// it coincides (to 1e-12) with the equivalent form G - X sym(X^T G), which
/// provides an independent route to the same value.
pub fn project_tangent(x: &StiefelPoint, g: &Matrix) -> Result<TangentVector> {
    let (n, p) = x.shape();
    if g.shape() != (n, p) {
        return Err(Error::ShapeMismatch {
            op: "project_tangent",
            node: 0,
            detail: format!("point is {n}x{p}, gradient is {}x{}", g.rows(), g.cols()),
        });
    }
    let xv = x.value();
    let xxt = xv.matmul(&xv.transpose()); // n x n
    let normal_part = g.sub(&xxt.matmul(g)); // (I - X X^T) G
    let xtg = xv.transpose().matmul(g); // p x p
    let rotational_part = xv.matmul(&skew(&xtg)?);
    let z = normal_part.add(&rotational_part);
    TangentVector::new(x.clone(), z)
}

/// QR retraction: the Q factor of X + t Z, with the positive-diagonal sign
/// convention making it unique.
///
/// When `t * Z` is exactly zero the input point is returned bitwise: the
/// sign convention maps an orthonormal X to itself in exact arithmetic, and
/// short-circuiting realizes that identity without floating-point residue.
pub fn retract_qr(x: &StiefelPoint, z: &TangentVector, t: f64) -> Result<StiefelPoint> {
    if z.base().value() != x.value() {
        return Err(Error::InvalidConfig(
            "retract_qr: tangent vector is based at a different point".into(),
        ));
    }
    if !t.is_finite() {
        return Err(Error::InvalidConfig(
            "retract_qr: step scale must be finite".into(),
        ));
    }
    if t == 0.0 || z.value().is_zero() {
        return Ok(x.clone());
    }
    let mut shifted = x.value().clone();
    shifted.add_scaled_assign(z.value(), t);
    let (q, _) = qr_thin(&shifted)?;
    StiefelPoint::new(q)
}

/// A deterministic, seed-indexed draw: the Q factor of an n x p Gaussian
/// matrix (full rank with probability one).
pub fn random_point(n: usize, p: usize, seed: u64) -> Result<StiefelPoint> {
    if n == 0 || p == 0 || n < p {
        return Err(Error::ShapeMismatch {
            op: "random_point",
            node: 0,
            detail: format!("need rows >= cols >= 1, got {n}x{p}"),
        });
    }
    let a = gaussian_matrix(n, p, &mut rng_from_seed(seed));
    let (q, _) = qr_thin(&a)?;
    StiefelPoint::new(q)
}

/// A deterministic unit-Frobenius-norm tangent vector at `x`: a Gaussian
/// draw projected to the tangent space and normalized. If the projection is
/// numerically zero (probability ~0), the next seed is tried.
pub fn random_tangent(x: &StiefelPoint, seed: u64) -> Result<TangentVector> {
    let (n, p) = x.shape();
    let mut current = seed;
    loop {
        let g = gaussian_matrix(n, p, &mut rng_from_seed(current));
        let z = project_tangent(x, &g)?;
        let norm = z.value().frobenius_norm();
        if norm > 1e-12 {
            let unit = z.value().scale(1.0 / norm);
            return TangentVector::new(x.clone(), unit);
        }
        current = current.wrapping_add(1);
    }
}

/// Chordal (embedding) distance ||X - Y||_F between two points of the same
/// St(n, p). Bounded by sqrt(2 p); zero exactly on equal points.
pub fn chordal_distance(x: &StiefelPoint, y: &StiefelPoint) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "chordal_distance",
            node: 0,
            detail: format!(
                "{}x{} vs {}x{}",
                x.shape().0,
                x.shape().1,
                y.shape().0,
                y.shape().1
            ),
        });
    }
    Ok(x.value().sub(y.value()).frobenius_norm())
}
