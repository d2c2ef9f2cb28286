//! Scaled Lasso: joint estimation of regression coefficients and noise level.
//!
//! Alternates a Lasso fit at `lambda = sigma * sqrt(2 log p / N)` with the
//! update `sigma^2 = ||residual||^2 / N` until `sigma` settles.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::samplers::ConditionalGaussianLaw;

use super::lasso::{GramProblem, LassoOptions};

const MAX_ALTERNATIONS: usize = 100;
const SIGMA_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLassoFit {
    pub zeta: DVector<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub alternations: usize,
}

impl ScaledLassoFit {
    /// The fitted conditional law `N(intercept + z^T zeta, sigma2)`.
    pub fn law(&self) -> Result<ConditionalGaussianLaw> {
        ConditionalGaussianLaw::with_link(self.intercept, self.zeta.clone(), self.sigma2, Default::default())
    }
}

pub fn scaled_lasso(design: &DMatrix<f64>, target: &DVector<f64>, opts: &LassoOptions) -> Result<ScaledLassoFit> {
    let (n, p) = design.shape();
    if n <= 10 {
        return Err(invalid(format!("scaled lasso needs more than 10 rows, got {n}")));
    }
    let problem = GramProblem::new(design, target, opts.fit_intercept)?;
    let lambda0 = (2.0 * (p as f64).ln() / n as f64).sqrt();
    let centered = if opts.fit_intercept { target.add_scalar(-linalg::mean(target)) } else { target.clone() };
    let mut sigma = (centered.norm_squared() / n as f64).sqrt();
    let mut beta = DVector::zeros(p);
    for alternation in 1..=MAX_ALTERNATIONS {
        problem.solve(sigma * lambda0, &mut beta, opts)?;
        let intercept = problem.intercept(&beta);
        let mut fitted = design * &beta;
        fitted.add_scalar_mut(intercept);
        let next = ((target - fitted).norm_squared() / n as f64).sqrt();
        let done = (next - sigma).abs() < SIGMA_TOLERANCE;
        sigma = next;
        if done {
            if !(sigma > 0.0) {
                return Err(invalid("scaled lasso fitted the target exactly"));
            }
            return Ok(ScaledLassoFit { zeta: beta, intercept, sigma2: sigma * sigma, alternations: alternation });
        }
    }
    Err(Error::NonConvergence { iterations: MAX_ALTERNATIONS, gap: f64::NAN })
}
