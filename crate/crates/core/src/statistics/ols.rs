//! Joint least-squares statistic.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg;

/// `|beta_k|` for each design column in the OLS fit of `y` on
/// `(1, z, design)`.
pub fn ols_scores(y: &DVector<f64>, z: &DMatrix<f64>, design: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = y.len();
    let q = z.ncols() + design.ncols();
    if n <= q + 1 {
        return Err(invalid(format!("OLS needs n > p + b + 1, got n = {n} with {q} regressors")));
    }
    let (_, beta) = linalg::ols_with_intercept(&linalg::hstack(z, design), y)?;
    Ok(beta.rows(z.ncols(), design.ncols()).iter().map(|b| b.abs()).collect())
}
