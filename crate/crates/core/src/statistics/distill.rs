//! Distillation for the dCRT.
//!
//! The response is regressed on `z` once; what remains (`dy`) is then
//! compared with each candidate column after removing its conditional mean
//! under the assumed law. The `k` most important covariates may be kept in
//! the testing regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::model::{Response, ResponseKind};
use crate::rng::SeedStream;
use crate::samplers::ConditionalGaussianLaw;

use super::forest::{Forest, ForestParams, ForestTask};
use super::lasso::{cv_lasso, CvOptions};
use super::logistic::{cv_logistic_lasso, sigmoid};

/// Model used to regress `y` on `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Learner {
    /// Linear Lasso for continuous responses, logistic Lasso for binary ones.
    Lasso,
    Ols,
    Forest(ForestParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillationResult {
    pub dy: DVector<f64>,
    pub kept: Vec<usize>,
    pub dx_mean: DVector<f64>,
}

/// Indices of the `k` largest strictly positive `scores`; ties go to the
/// lower index.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] > 0.0).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

pub fn distill(
    y: &Response,
    z: &DMatrix<f64>,
    law: &ConditionalGaussianLaw,
    k: usize,
    learner: &Learner,
    cv: &CvOptions,
    seed: SeedStream,
) -> Result<DistillationResult> {
    if y.len() != z.nrows() {
        return Err(invalid("y and z have different row counts"));
    }
    let dx_mean = law.means(z)?;
    let (dy, importance) = match (learner, y.kind) {
        (_, ResponseKind::Categorical(_)) => {
            return Err(invalid("distillation needs a continuous or binary response"));
        }
        (Learner::Lasso, ResponseKind::Continuous) => {
            let fit = cv_lasso(z, &y.values, cv, seed)?;
            (&y.values - fit.predict(z), fit.coefficients.abs())
        }
        (Learner::Lasso, ResponseKind::Binary) => {
            let fit = cv_logistic_lasso(z, &y.values, cv, seed)?;
            let p = fit.predict(z).map(sigmoid);
            (&y.values - p, fit.coefficients.abs())
        }
        (Learner::Ols, _) => {
            let (b0, beta) = linalg::ols_with_intercept(z, &y.values)?;
            let mut fitted = z * &beta;
            fitted.add_scalar_mut(b0);
            (&y.values - fitted, beta.abs())
        }
        (Learner::Forest(params), kind) => {
            let task = match kind {
                ResponseKind::Binary => ForestTask::Classification(2),
                _ => ForestTask::Regression,
            };
            let forest = Forest::fit(z, &y.values, task, params, seed)?;
            let oob = forest.oob_predictions();
            let fitted = oob.column(oob.ncols() - 1).clone_owned();
            (&y.values - fitted, forest.importance().clone())
        }
    };
    let kept = top_k(importance.as_slice(), k);
    Ok(DistillationResult { dy, kept, dx_mean })
}

/// `|coefficient of (column - dx_mean)|` in the least-squares regression of
/// `dy` on an intercept, the centered column and the kept covariates.
pub fn dcrt_score(dist: &DistillationResult, z: &DMatrix<f64>, column: &DVector<f64>) -> Result<f64> {
    let n = dist.dy.len();
    let q = 1 + dist.kept.len();
    if n <= q + 1 {
        return Err(invalid(format!("dCRT regression needs n > {}", q + 1)));
    }
    let mut design = DMatrix::zeros(n, q);
    design.set_column(0, &(column - &dist.dx_mean));
    for (c, &j) in dist.kept.iter().enumerate() {
        design.set_column(c + 1, &z.column(j));
    }
    let (_, beta) = linalg::ols_with_intercept(&design, &dist.dy)?;
    Ok(beta[0].abs())
}
