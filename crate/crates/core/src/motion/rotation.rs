//! Continuous 6D rotation parameterization: the first two columns of a
//! rotation matrix, re-orthonormalized with Gram-Schmidt.

use alloc::string::ToString;

use crate::error::{CoreError, Result};
use crate::math::{cross3, dot3, norm3, Mat3};

/// Column norms below this are rejected as degenerate.
pub const COLUMN_NORM_EPS: f64 = 1e-8;

/// Intermediate quantities of the Gram-Schmidt reconstruction, kept for
/// the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GramSchmidt {
    pub a2: [f64; 3],
    pub b1: [f64; 3],
    pub b2: [f64; 3],
    pub n1: f64,
    pub n2: f64,
}

pub(crate) fn gram_schmidt(r: &[f64]) -> Result<(Mat3, GramSchmidt)> {
    if r.len() != 6 || r.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::DegenerateInput("rot6d must be 6 finite values".to_string()));
    }
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm3(&a1);
    if n1 < COLUMN_NORM_EPS {
        return Err(CoreError::DegenerateInput("first rot6d column has zero norm".to_string()));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let s = dot3(&b1, &a2);
    let u = [a2[0] - s * b1[0], a2[1] - s * b1[1], a2[2] - s * b1[2]];
    let n2 = norm3(&u);
    if n2 < COLUMN_NORM_EPS {
        return Err(CoreError::DegenerateInput("rot6d columns are parallel".to_string()));
    }
    let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];
    let b3 = cross3(&b1, &b2);
    let m = [[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]];
    Ok((m, GramSchmidt { a2, b1, b2, n1, n2 }))
}

/// Rotation matrix (row-major) whose first two columns are the
/// orthonormalized halves of `r`.
pub fn rot6d_to_matrix(r: &[f64]) -> Result<Mat3> {
    gram_schmidt(r).map(|(m, _)| m)
}

/// First two columns of `m`.
pub fn matrix_to_rot6d(m: &Mat3) -> [f64; 6] {
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// Pull a gradient on the rotation matrix back onto the six inputs.
pub(crate) fn gram_schmidt_backward(gs: &GramSchmidt, d_m: &Mat3) -> [f64; 6] {
    let col = |k: usize| [d_m[0][k], d_m[1][k], d_m[2][k]];
    let mut db1 = col(0);
    let mut db2 = col(1);
    let db3 = col(2);
    let GramSchmidt { a2, b1, b2, n1, n2 } = *gs;

    // b3 = b1 x b2
    let t1 = cross3(&b2, &db3);
    let t2 = cross3(&db3, &b1);
    for k in 0..3 {
        db1[k] += t1[k];
        db2[k] += t2[k];
    }
    // b2 = u / |u|
    let p = dot3(&b2, &db2);
    let du = [(db2[0] - b2[0] * p) / n2, (db2[1] - b2[1] * p) / n2, (db2[2] - b2[2] * p) / n2];
    // u = a2 - (b1 . a2) b1
    let s = dot3(&b1, &a2);
    let q = dot3(&b1, &du);
    let da2 = [du[0] - b1[0] * q, du[1] - b1[1] * q, du[2] - b1[2] * q];
    for k in 0..3 {
        db1[k] += -s * du[k] - q * a2[k];
    }
    // b1 = a1 / |a1|
    let p = dot3(&b1, &db1);
    let da1 = [(db1[0] - b1[0] * p) / n1, (db1[1] - b1[1] * p) / n1, (db1[2] - b1[2] * p) / n1];
    [da1[0], da1[1], da1[2], da2[0], da2[1], da2[2]]
}
