//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur, SVD};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Singular values (descending) and right singular vectors as columns.
pub(crate) struct RightSvd {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

pub(crate) fn right_svd(m: &DMatrix<C64>) -> Result<RightSvd> {
    let svd = SVD::try_new(m.clone(), false, true, f64::EPSILON, 10_000)
        .ok_or(Error::EigenSolverFailed)?;
    let v_t = svd.v_t.ok_or(Error::EigenSolverFailed)?;
    Ok(RightSvd { values: svd.singular_values.iter().copied().collect(), vectors: v_t.adjoint() })
}

pub(crate) fn singular_values(m: &DMatrix<C64>) -> Result<Vec<f64>> {
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 10_000)
        .ok_or(Error::EigenSolverFailed)?;
    Ok(svd.singular_values.iter().copied().collect())
}

/// Orthonormal basis of the `count`-dimensional approximate null space of `m`
/// (right singular vectors belonging to the smallest singular values).
pub(crate) fn null_space(m: &DMatrix<C64>, count: usize) -> Result<DMatrix<C64>> {
    let svd = right_svd(m)?;
    let n = m.ncols();
    Ok(svd.vectors.columns(n - count, count).into_owned())
}

/// Left singular vectors belonging to the `count` largest singular values.
pub(crate) fn dominant_left_vectors(m: &DMatrix<C64>, count: usize) -> Result<DMatrix<C64>> {
    let svd = SVD::try_new(m.clone(), true, false, f64::EPSILON, 10_000)
        .ok_or(Error::EigenSolverFailed)?;
    let u = svd.u.ok_or(Error::EigenSolverFailed)?;
    Ok(u.columns(0, count).into_owned())
}

pub(crate) fn condition_number(m: &DMatrix<C64>) -> Result<f64> {
    let s = singular_values(m)?;
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.last().copied().unwrap_or(0.0);
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

pub(crate) fn inverse(m: &DMatrix<C64>) -> Option<DMatrix<C64>> {
    m.clone().try_inverse()
}

pub(crate) fn eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, 100_000) {
        let (_, t) = schur.unpack();
        return Ok((0..n).map(|i| t[(i, i)]).collect());
    }
    // deflation is relative to the diagonal, which stalls next to exact zeros;
    // a complex shift moves the spectrum away from the origin
    let scale = m.norm().max(1.0);
    for shift in [C64::new(0.37, 0.61), C64::new(-0.53, 0.29), C64::new(0.71, -0.44)] {
        let s = shift * scale;
        let shifted = m + DMatrix::identity(n, n) * s;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 100_000) {
            let (_, t) = schur.unpack();
            return Ok((0..n).map(|i| t[(i, i)] - s).collect());
        }
    }
    Err(Error::EigenSolverFailed)
}

/// Gram–Schmidt orthonormal basis of the column span of `m`, dropping columns
/// whose residual norm falls below `tol`.
pub(crate) fn orthonormal_columns(m: &DMatrix<C64>, tol: f64) -> DMatrix<C64> {
    let mut cols: Vec<DVector<C64>> = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        for _ in 0..2 {
            for q in &cols {
                let p = q.dotc(&v);
                v -= q * p;
            }
        }
        let n = v.norm();
        if n > tol {
            cols.push(v / C64::new(n, 0.0));
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// Ascending eigen-decomposition of a hermitian matrix; eigenvectors as columns.
pub(crate) fn hermitian_eigh(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_columns(
        &order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Unit phase `z / |z|`, or 1 for `z = 0`.
pub(crate) fn phase(z: C64) -> C64 {
    let n = z.norm();
    if n == 0.0 {
        C64::new(1.0, 0.0)
    } else {
        z / n
    }
}

/// First-derivative weights at offset 0 for the stencil points `offsets` (in
/// units of the step), via the Vandermonde moment conditions.
pub(crate) fn derivative_weights(offsets: &[f64]) -> Vec<f64> {
    let n = offsets.len();
    let a = DMatrix::from_fn(n, n, |k, j| offsets[j].powi(k as i32));
    let mut b = DVector::zeros(n);
    if n > 1 {
        b[1] = 1.0;
    }
    let w = a.lu().solve(&b).expect("distinct stencil offsets");
    w.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_five_point_weights() {
        let w = derivative_weights(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let want = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-13);
        }
        let w = derivative_weights(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let want = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn schur_eigenvalues_of_triangular() {
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(3.0, 0.0), C64::new(0.0, 0.0), C64::new(-2.0, 0.0)]);
        let mut ev = eigenvalues(&m).unwrap();
        ev.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((ev[0] - C64::new(-2.0, 0.0)).norm() < 1e-14);
        assert!((ev[1] - C64::new(1.0, 0.0)).norm() < 1e-14);
    }
}
