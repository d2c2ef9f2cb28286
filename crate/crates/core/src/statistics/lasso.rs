//! Gaussian Lasso by cyclic coordinate descent with covariance updates.
//!
//! Solves
//!
//! ```text
//! minimize 0.5/n * ||y - b0 - X beta||^2 + lambda * ||beta||_1
//! ```
//!
//! with an unpenalized intercept. The Gram matrix `X^T X / n` and the
//! correlations `X^T y / n` of the centered problem are formed once; each
//! coordinate update then costs O(q). Sweeps alternate between the active set
//! and the full coordinate set until a full sweep moves no coefficient by more
//! than the tolerance (measured in units of the column's standard deviation).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub tolerance: f64,
    /// Maximum number of coordinate sweeps per lambda.
    pub max_iter: usize,
    pub fit_intercept: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { tolerance: 1e-7, max_iter: 100_000, fit_intercept: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// Coordinate sweeps used for this lambda.
    pub iterations: usize,
    /// Largest scaled coefficient change in the final sweep.
    pub delta: f64,
}

impl LassoFit {
    pub fn predict(&self, design: &DMatrix<f64>) -> DVector<f64> {
        let mut out = design * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        out
    }
}

/// Centered sufficient statistics of a least-squares problem.
#[derive(Debug, Clone)]
pub(crate) struct GramProblem {
    gram: DMatrix<f64>,
    corr: DVector<f64>,
    x_means: DVector<f64>,
    y_mean: f64,
}

impl GramProblem {
    pub(crate) fn new(design: &DMatrix<f64>, target: &DVector<f64>, fit_intercept: bool) -> Result<Self> {
        let n = design.nrows();
        if n == 0 || design.ncols() == 0 {
            return Err(invalid("lasso needs a non-empty design"));
        }
        if target.len() != n {
            return Err(invalid("design and target lengths differ"));
        }
        let (x, y, x_means, y_mean) = if fit_intercept {
            let mut x = design.clone();
            let means = linalg::center_columns(&mut x);
            let ym = linalg::mean(target);
            (x, target.add_scalar(-ym), means, ym)
        } else {
            (design.clone(), target.clone(), DVector::zeros(design.ncols()), 0.0)
        };
        let inv_n = 1.0 / n as f64;
        let gram = x.tr_mul(&x) * inv_n;
        let corr = x.tr_mul(&y) * inv_n;
        Ok(GramProblem { gram, corr, x_means, y_mean })
    }

    pub(crate) fn dim(&self) -> usize {
        self.corr.len()
    }

    /// Smallest lambda at which the zero vector is optimal.
    pub(crate) fn lambda_max(&self) -> f64 {
        self.corr.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Coordinate descent at one lambda, warm-started from `beta`.
    pub(crate) fn solve(&self, lambda: f64, beta: &mut DVector<f64>, opts: &LassoOptions) -> Result<(usize, f64)> {
        let q = self.dim();
        // gradient of the smooth part: corr - gram * beta
        let mut grad = &self.corr - &self.gram * &*beta;
        let scale: Vec<f64> = (0..q).map(|j| self.gram[(j, j)].max(0.0).sqrt()).collect();
        let update = |j: usize, beta: &mut DVector<f64>, grad: &mut DVector<f64>| -> f64 {
            let h = self.gram[(j, j)];
            if h <= 0.0 {
                return 0.0;
            }
            let old = beta[j];
            let rho = grad[j] + h * old;
            let new = soft_threshold(rho, lambda) / h;
            let d = new - old;
            if d != 0.0 {
                beta[j] = new;
                grad.axpy(-d, &self.gram.column(j), 1.0);
            }
            d.abs() * scale[j]
        };

        let kkt_target = opts.tolerance * lambda + 1e-13 * (1.0 + self.lambda_max());
        let mut sweeps = 0;
        let mut last = f64::INFINITY;
        loop {
            if sweeps >= opts.max_iter {
                return Err(Error::NonConvergence { iterations: sweeps, gap: last });
            }
            let mut max_change: f64 = 0.0;
            for j in 0..q {
                max_change = max_change.max(update(j, beta, &mut grad));
            }
            sweeps += 1;
            last = max_change;
            if max_change < opts.tolerance {
                grad = &self.corr - &self.gram * &*beta;
                let kkt = self.kkt_violation(&grad, beta, lambda);
                if kkt <= kkt_target {
                    return Ok((sweeps, max_change));
                }
                continue;
            }
            // active-set sweeps until they settle, then a full sweep again
            let active: Vec<usize> = (0..q).filter(|&j| beta[j] != 0.0).collect();
            let mut next_jump = 8;
            let mut phase = 0;
            while sweeps < opts.max_iter {
                let mut change: f64 = 0.0;
                for &j in &active {
                    change = change.max(update(j, beta, &mut grad));
                }
                sweeps += 1;
                phase += 1;
                last = change;
                if change < opts.tolerance {
                    break;
                }
                // slow convergence: try the exact solution on the current support and signs
                if phase == next_jump {
                    next_jump *= 2;
                    if let Some(refined) = self.refine_on_support(beta, lambda) {
                        *beta = refined;
                        grad = &self.corr - &self.gram * &*beta;
                        if self.kkt_violation(&grad, beta, lambda) <= kkt_target {
                            return Ok((sweeps, 0.0));
                        }
                        break;
                    }
                }
            }
        }
    }

    /// Feature-sign steps on the support of `beta`: move towards the
    /// minimizer with the current signs, stopping at the first coordinate
    /// that would cross zero and dropping it. On a singular support the
    /// move is along the flat directions, where the objective is linear.
    /// Each step lowers the objective; returns the point where the signs
    /// are consistent.
    fn refine_on_support(&self, beta: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        let mut current = beta.clone();
        for _ in 0..=2 * self.dim() {
            let active: Vec<usize> = (0..self.dim()).filter(|&j| current[j] != 0.0).collect();
            if active.is_empty() {
                return Some(current);
            }
            let m = active.len();
            let h = DMatrix::from_fn(m, m, |a, c| self.gram[(active[a], active[c])]);
            let rhs = DVector::from_fn(m, |a, _| self.corr[active[a]] - lambda * current[active[a]].signum());
            let cur = DVector::from_fn(m, |a, _| current[active[a]]);
            // direction and the largest step along it
            let (dir, max_step) = match h.clone().cholesky() {
                Some(ch) => (ch.solve(&rhs) - &cur, 1.0),
                None => {
                    let svd = h.clone().svd(true, false);
                    let u = svd.u.as_ref()?;
                    let cutoff = 1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE);
                    let mut flat = rhs.clone();
                    for (k, &sv) in svd.singular_values.iter().enumerate() {
                        if sv > cutoff {
                            let uk = u.column(k);
                            flat.axpy(-uk.dot(&rhs), &uk, 1.0);
                        }
                    }
                    if flat.norm() > 1e-12 * (1.0 + rhs.norm()) {
                        (flat, f64::INFINITY)
                    } else {
                        (svd.solve(&(&rhs - &h * &cur), cutoff).ok()?, 1.0)
                    }
                }
            };
            let mut step = max_step;
            let mut crossing = None;
            for a in 0..m {
                if dir[a] * cur[a] < 0.0 {
                    let t = -cur[a] / dir[a];
                    if t < step {
                        step = t;
                        crossing = Some(active[a]);
                    }
                }
            }
            if !step.is_finite() {
                return None;
            }
            for (a, &j) in active.iter().enumerate() {
                current[j] = cur[a] + step * dir[a];
            }
            match crossing {
                Some(j) => current[j] = 0.0,
                None => return Some(current),
            }
        }
        None
    }

    /// Largest violation of the subgradient conditions given the gradient
    /// `X^T r / n`; zero-variance coordinates are ignored.
    pub(crate) fn kkt_violation(&self, grad: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
        (0..self.dim())
            .filter(|&j| self.gram[(j, j)] > 0.0)
            .map(|j| {
                if beta[j] == 0.0 {
                    (grad[j].abs() - lambda).max(0.0)
                } else {
                    (grad[j] - lambda * beta[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn intercept(&self, beta: &DVector<f64>) -> f64 {
        self.y_mean - self.x_means.dot(beta)
    }

    /// Fits each lambda in turn, warm-starting from the previous solution.
    pub(crate) fn path(&self, lambdas: &[f64], opts: &LassoOptions) -> Result<Vec<LassoFit>> {
        let mut beta = DVector::zeros(self.dim());
        let mut fits = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let (iterations, delta) = self.solve(lambda, &mut beta, opts)?;
            fits.push(LassoFit {
                intercept: self.intercept(&beta),
                coefficients: beta.clone(),
                lambda,
                iterations,
                delta,
            });
        }
        Ok(fits)
    }
}

pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Lasso at a single lambda.
pub fn fit_lasso(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let problem = GramProblem::new(design, target, opts.fit_intercept)?;
    Ok(problem.path(&[lambda], opts)?.remove(0))
}

/// `max_j |x_j^T (y - mean y)| / n` for the centered problem.
pub fn lambda_max(design: &DMatrix<f64>, target: &DVector<f64>, fit_intercept: bool) -> Result<f64> {
    Ok(GramProblem::new(design, target, fit_intercept)?.lambda_max())
}

/// `len` log-spaced values from `max` down to `ratio * max`.
pub fn log_grid(max: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![max];
    }
    let log_hi = max.ln();
    let log_lo = (max * ratio).ln();
    (0..len)
        .map(|i| (log_hi + (log_lo - log_hi) * i as f64 / (len - 1) as f64).exp())
        .collect()
}

/// Cross-validation settings. The grid is rebuilt from the full-data
/// `lambda_max` unless an explicit grid is supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub grid_len: usize,
    pub grid_ratio: f64,
    pub grid: Option<Vec<f64>>,
    pub lasso: LassoOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { folds: 5, grid_len: 50, grid_ratio: 1e-3, grid: None, lasso: LassoOptions::default() }
    }
}

/// Row-to-fold assignment drawn from the seed alone.
pub fn fold_assignment(n: usize, folds: usize, seed: SeedStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.rng());
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

pub(crate) fn split_rows(fold: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &f) in fold.iter().enumerate() {
        if f == k {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

/// K-fold cross-validated Lasso; returns the full-data fit at the lambda
/// with the smallest mean held-out squared error (ties go to the larger
/// lambda).
pub fn cv_lasso(design: &DMatrix<f64>, target: &DVector<f64>, cv: &CvOptions, seed: SeedStream) -> Result<LassoFit> {
    let n = design.nrows();
    if cv.folds < 2 || cv.folds > n {
        return Err(invalid(format!("need 2 <= folds <= n, got {} folds for {n} rows", cv.folds)));
    }
    let full = GramProblem::new(design, target, cv.lasso.fit_intercept)?;
    let grid = match &cv.grid {
        Some(g) if g.is_empty() => return Err(invalid("lambda grid is empty")),
        Some(g) => g.clone(),
        None => {
            let max = full.lambda_max();
            if max <= 0.0 {
                return Ok(full.path(&[0.0], &cv.lasso)?.remove(0));
            }
            log_grid(max, cv.grid_ratio, cv.grid_len)
        }
    };
    if grid.len() == 1 {
        return Ok(full.path(&grid, &cv.lasso)?.remove(0));
    }
    let fold = fold_assignment(n, cv.folds, seed);
    let mut err = vec![0.0; grid.len()];
    for k in 0..cv.folds {
        let (train, test) = split_rows(&fold, k);
        let xt = linalg::select_rows(design, &train);
        let yt = linalg::select_entries(target, &train);
        let xv = linalg::select_rows(design, &test);
        let yv = linalg::select_entries(target, &test);
        let fits = GramProblem::new(&xt, &yt, cv.lasso.fit_intercept)?.path(&grid, &cv.lasso)?;
        for (e, fit) in err.iter_mut().zip(&fits) {
            let resid = &yv - fit.predict(&xv);
            *e += resid.norm_squared() / n as f64;
        }
    }
    let best = err
        .iter()
        .enumerate()
        .fold(0, |best, (i, &e)| if e < err[best] { i } else { best });
    Ok(full.path(&grid[..=best], &cv.lasso)?.pop().expect("non-empty path"))
}
