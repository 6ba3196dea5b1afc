//! Small dense linear-algebra helpers shared by the cocycle, spectrum and
//! shadowing code.

use nalgebra::{DMatrix, DVector};

/// Orthonormalizes the columns of `m` with a thin QR factorization, fixing
/// signs so that R has a nonnegative diagonal. Returns (Q, diag R).
pub fn qr_positive(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let k = m.ncols().min(m.nrows());
    let mut diag = DVector::zeros(k);
    for j in 0..k {
        let rjj = r[(j, j)];
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
        diag[j] = rjj.abs();
    }
    (q, diag)
}

/// Orthonormal basis of the column span of `m` (columns assumed independent).
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    qr_positive(m).0
}

/// Largest singular value.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest singular value over the domain: m(A) = min_{|v|=1} |Av|.
///
/// For a tall matrix this is the conorm of the map from the column space;
/// for a square invertible matrix it equals ‖A⁻¹‖⁻¹.
pub fn mininorm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sv = m.singular_values();
    if m.nrows() < m.ncols() {
        0.0
    } else {
        sv.min()
    }
}

/// Principal angles (ascending) between the column spans of two matrices
/// with orthonormal columns.
pub fn principal_angles(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Vec<f64> {
    if q1.ncols() == 0 || q2.ncols() == 0 {
        return Vec::new();
    }
    let m = q1.transpose() * q2;
    let mut angles: Vec<f64> = m
        .singular_values()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(f64::total_cmp);
    angles
}

/// Largest principal angle between two equal-dimensional subspaces given by
/// orthonormal columns; 0 when both are trivial.
pub fn subspace_angle(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    principal_angles(q1, q2).last().copied().unwrap_or(0.0)
}

/// Smallest principal angle between two subspaces: the angle the pair makes
/// at its closest approach.
pub fn min_angle(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    principal_angles(q1, q2).first().copied().unwrap_or(std::f64::consts::FRAC_PI_2)
}

/// Left singular vectors of `m` ordered by descending singular value.
pub fn left_singular_sorted(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<DVector<f64>> = order.iter().map(|&j| u.column(j).into_owned()).collect();
    let values = order.iter().map(|&j| svd.singular_values[j]).collect();
    (DMatrix::from_columns(&cols), values)
}

/// Right singular vectors of `m` ordered by descending singular value.
pub fn right_singular_sorted(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (v, s) = left_singular_sorted(&m.transpose());
    (v, s)
}

/// Neumaier's compensated sum, accumulated in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
