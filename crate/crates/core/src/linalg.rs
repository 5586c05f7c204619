//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Ties keep the solver's order. Each eigenvector is
/// sign-normalized so that its first entry with magnitude above 1e-12 is
/// positive.
pub(crate) fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = eig.eigenvectors.select_columns(&order);
    normalize_signs(&mut vectors);
    (values, vectors)
}

/// First entry of each column with |v| > 1e-12 is made positive.
pub(crate) fn normalize_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Inverse of a square matrix, refused when the reciprocal condition number
/// (smallest over largest singular value) is at or below `rcond`.
pub(crate) fn invert_checked(m: &DMatrix<f64>, rcond: f64) -> Option<DMatrix<f64>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return None;
    }
    if !m.iter().all(|x| x.is_finite()) {
        return None;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax <= 0.0 || smin <= rcond * smax {
        return None;
    }
    m.clone().lu().try_inverse()
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let vals = symmetrize(m).symmetric_eigenvalues();
    (vals.min(), vals.max())
}

/// Gram error max |VᵀV − I|.
#[cfg(test)]
pub(crate) fn gram_error(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let mut err = 0.0_f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((g[(i, j)] - target).abs());
        }
    }
    err
}

pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Subtracts the column means of `m` from every row.
pub(crate) fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}
