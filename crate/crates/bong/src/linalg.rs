//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Replace `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetrized copy of `m`.
pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

/// Largest absolute entry of `m` (0 for an empty matrix).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute entry of a vector (0 when empty).
pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `max |a - aᵀ| <= rel_tol * max |a|`.
pub fn is_symmetric(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Cholesky factorization of a symmetric matrix, `None` unless it is
/// numerically positive definite with finite entries.
pub fn cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let ch = Cholesky::new(a.clone())?;
    if ch.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
        Some(ch)
    } else {
        None
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ch = cholesky(a)?;
    let mut inv = ch.inverse();
    symmetrize(&mut inv);
    if inv.iter().all(|v| v.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

/// Row-wise sums of squares, i.e. `diag(W Wᵀ)`.
pub fn row_sq_norms(w: &DMatrix<f64>) -> DVector<f64> {
    let mut out = vec![0.0; w.nrows()];
    if w.nrows() > 0 {
        for col in w.as_slice().chunks_exact(w.nrows()) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * c;
            }
        }
    }
    DVector::from_vec(out)
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// (ties broken by original index, so the result is deterministic).
///
/// Entries smaller than `ε² · max|a|` are set to zero first. Repeated
/// lossless projections leave near-null columns whose Gram entries sit far
/// below that level (1e-150 and smaller), and the rotations of the
/// eigensolver turn such subnormal-range values into NaN.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let floor = f64::EPSILON * f64::EPSILON * a.amax();
    let cleaned = a.map(|v| if v.abs() < floor { 0.0 } else { v });
    let eig = SymmetricEigen::new(cleaned);
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Horizontally concatenate blocks that share a row count.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hcat: row counts differ");
        data.extend_from_slice(b.as_slice());
    }
    DMatrix::from_vec(rows, cols, data)
}

/// Scale the rows of `m` by `d` (computes `Diag(d) m`).
pub fn scale_rows(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let rows = m.nrows();
    let mut data = Vec::with_capacity(rows * m.ncols());
    if rows > 0 {
        for col in m.as_slice().chunks_exact(rows) {
            data.extend(col.iter().zip(d.as_slice()).map(|(c, s)| c * s));
        }
    }
    DMatrix::from_vec(rows, m.ncols(), data)
}

/// `Aᵀ B` through the blocked matrix-multiply kernel, which is much faster
/// than the per-entry dot products used by `Matrix::tr_mul` for tall inputs.
pub fn tr_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}
