//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn mean(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.sum() / v.len() as f64
    }
}

pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Subtracts the column means in place and returns them.
pub fn center_columns(m: &mut DMatrix<f64>) -> DVector<f64> {
    let means = column_means(m);
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    means
}

/// Horizontally stacks two matrices with the same row count.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn select_entries(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]))
}

/// Ordinary least squares with an unpenalized intercept, solved by QR.
///
/// Returns `(intercept, coefficients)`. A column whose QR pivot falls below
/// `1e-10` times the largest pivot is reported as a singular design.
pub fn ols_with_intercept(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let n = design.nrows();
    let q = design.ncols();
    if n <= q + 1 {
        return Err(Error::SingularDesign(format!(
            "{n} rows cannot identify {q} coefficients plus an intercept"
        )));
    }
    let mut full = DMatrix::zeros(n, q + 1);
    full.column_mut(0).fill(1.0);
    full.columns_mut(1, q).copy_from(design);
    let beta = least_squares(&full, target)?;
    Ok((beta[0], beta.rows(1, q).into_owned()))
}

/// Least squares without intercept.
pub fn least_squares(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    let q = design.ncols();
    let qr = design.clone().qr();
    let r = qr.r();
    let max_pivot = (0..q).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if let Some(j) = (0..q).find(|&j| r[(j, j)].abs() <= 1e-10 * max_pivot.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularDesign(format!("design column {j} is linearly dependent")));
    }
    let qty = qr.q().transpose() * target;
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))
}
