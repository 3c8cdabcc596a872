//! Small dense-matrix helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Largest condition number accepted before a factorization-based solve is
/// declared unusable.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Singular values of `m`, sorted in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Ratio of smallest to largest singular value (0 for a zero matrix).
pub fn singular_ratio(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if max > 0.0 => min / max,
        _ => 0.0,
    }
}

/// Inverse of a square matrix through an SVD, refusing matrices whose
/// condition number exceeds [`CONDITION_LIMIT`].
pub fn guarded_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    debug_assert!(m.is_square());
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::Conditioning { what, condition });
    }
    svd.pseudo_inverse(0.0)
        .map_err(|_| Error::Conditioning { what, condition })
}

/// Moore-Penrose inverse keeping singular values above `rel_tol * max`.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let eps = svd.singular_values.max() * rel_tol;
    svd.pseudo_inverse(eps).expect("u and v were computed")
}

/// Solves the symmetric positive definite system `n x = b` after symmetric
/// diagonal equilibration. Returns the solution and the inverse of `n`.
pub fn solve_normal(n: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let dim = n.nrows();
    let scale = DVector::from_iterator(
        dim,
        (0..dim).map(|i| {
            let d = n[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        }),
    );
    let d = DMatrix::from_diagonal(&scale);
    let scaled = &d * n * &d;
    let chol = scaled.cholesky()?;
    let x = &d * chol.solve(&(&d * b));
    let inv = &d * chol.inverse() * &d;
    Some((x, inv))
}

/// Condition number of a symmetric positive semi-definite matrix after
/// symmetric diagonal equilibration, together with the unit eigenvector of
/// its smallest eigenvalue.
pub fn equilibrated_condition(n: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let dim = n.nrows();
    let scale: Vec<f64> = (0..dim)
        .map(|i| {
            let d = n[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(dim, dim, |i, j| n[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.symmetric_eigen();
    let (imin, &min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .expect("non-empty matrix");
    let max = eig.eigenvalues.max();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    (condition, eig.eigenvectors.column(imin).into_owned())
}

/// Least-squares rigid transform `T` minimising `sum |T * src_i - dst_i|^2`.
pub fn rigid_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Isometry3<f64>> {
    if src.len() != dst.len() {
        return Err(Error::Dimension {
            what: "rigid fit point pairs",
            expected: src.len(),
            got: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::DegenerateData(format!(
            "rigid fit needs at least 3 point pairs, got {}",
            src.len()
        )));
    }
    let count = src.len() as f64;
    let src_mean = src.iter().sum::<Vector3<f64>>() / count;
    let dst_mean = dst.iter().sum::<Vector3<f64>>() / count;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (s - src_mean) * (d - dst_mean).transpose();
    }
    let rotation = procrustes_rotation(&cov)?;
    let translation = dst_mean - rotation * src_mean;
    Ok(Isometry3::from_parts(
        Translation3::from(translation),
        UnitQuaternion::from_rotation_matrix(&rotation),
    ))
}

/// Proper rotation `R = V U^T` maximising `trace(R * cov)` for the
/// cross-covariance `cov = sum src dst^T`, with the last-column sign fix.
pub fn procrustes_rotation(cov: &Matrix3<f64>) -> Result<Rotation3<f64>> {
    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    if sv.max() <= 0.0 || sv.iter().filter(|&&s| s > 1e-12 * sv.max()).count() < 2 {
        return Err(Error::DegenerateData(
            "cross-covariance has rank below 2".into(),
        ));
    }
    let u = svd.u.expect("requested");
    let mut v = svd.v_t.expect("requested").transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        // The smallest singular value is last only if sorted; find it.
        let (imin, _) = sv
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .expect("3 values");
        let col = -v.column(imin);
        v.set_column(imin, &col);
    }
    Ok(Rotation3::from_matrix_unchecked(v * u.transpose()))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
