//! L1-penalized logistic regression.
//!
//! Minimizes the mean binomial deviance over two plus `lambda * ||beta||_1`
//! by iteratively reweighted least squares, each quadratic approximation
//! solved by coordinate descent on the residual. The intercept is not
//! penalized.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng::SeedStream;

use super::lasso::{fold_assignment, log_grid, soft_threshold, split_rows, CvOptions, LassoFit, LassoOptions};

const MIN_WEIGHT: f64 = 1e-5;
const MAX_OUTER: usize = 100;

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Mean binomial deviance of labels `y` in {0,1} under linear predictor `eta`.
pub fn mean_deviance(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    y.iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| 2.0 * (softplus(e) - yi * e))
        .sum::<f64>()
        / n
}

fn softplus(e: f64) -> f64 {
    if e > 0.0 {
        e + (-e).exp().ln_1p()
    } else {
        e.exp().ln_1p()
    }
}

fn check_binary(target: &DVector<f64>) -> Result<()> {
    if target.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid("logistic lasso needs labels in {0, 1}"));
    }
    Ok(())
}

struct State {
    beta: DVector<f64>,
    intercept: f64,
}

fn linear_predictor(x: &DMatrix<f64>, s: &State) -> DVector<f64> {
    let mut eta = x * &s.beta;
    eta.add_scalar_mut(s.intercept);
    eta
}

fn solve(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, s: &mut State, opts: &LassoOptions) -> Result<(usize, f64)> {
    let (n, q) = x.shape();
    let inv_n = 1.0 / n as f64;
    let mut total_sweeps = 0;
    let mut outer_delta = f64::INFINITY;
    for _ in 0..MAX_OUTER {
        let eta = linear_predictor(x, s);
        let mut w = DVector::zeros(n);
        let mut resid = DVector::zeros(n);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let wi = (p * (1.0 - p)).max(MIN_WEIGHT);
            w[i] = wi;
            resid[i] = (y[i] - p) / wi;
        }
        let wsum = w.sum() * inv_n;
        let hess: Vec<f64> = (0..q)
            .map(|j| x.column(j).iter().zip(w.iter()).map(|(a, b)| a * a * b).sum::<f64>() * inv_n)
            .collect();
        let start_beta = s.beta.clone();
        let start_b0 = s.intercept;

        let update = |j: usize, s: &mut State, resid: &mut DVector<f64>| -> f64 {
            let h = hess[j];
            if h <= 0.0 {
                return 0.0;
            }
            let col = x.column(j);
            let g: f64 = col.iter().zip(w.iter()).zip(resid.iter()).map(|((a, b), c)| a * b * c).sum::<f64>() * inv_n;
            let old = s.beta[j];
            let new = soft_threshold(g + h * old, lambda) / h;
            let d = new - old;
            if d != 0.0 {
                s.beta[j] = new;
                resid.axpy(-d, &col, 1.0);
            }
            d.abs() * h.sqrt()
        };
        let update_intercept = |s: &mut State, resid: &mut DVector<f64>| -> f64 {
            if !opts.fit_intercept {
                return 0.0;
            }
            let d = w.dot(resid) * inv_n / wsum;
            s.intercept += d;
            resid.add_scalar_mut(-d);
            d.abs() * wsum.sqrt()
        };

        let mut inner = 0;
        loop {
            let mut change = update_intercept(s, &mut resid);
            for j in 0..q {
                change = change.max(update(j, s, &mut resid));
            }
            inner += 1;
            if change < opts.tolerance || inner >= opts.max_iter {
                break;
            }
            let active: Vec<usize> = (0..q).filter(|&j| s.beta[j] != 0.0).collect();
            while inner < opts.max_iter {
                let mut c = update_intercept(s, &mut resid);
                for &j in &active {
                    c = c.max(update(j, s, &mut resid));
                }
                inner += 1;
                if c < opts.tolerance {
                    break;
                }
            }
        }
        total_sweeps += inner;
        outer_delta = (&s.beta - &start_beta)
            .iter()
            .zip(&hess)
            .map(|(d, h)| d.abs() * h.sqrt())
            .fold((s.intercept - start_b0).abs() * wsum.sqrt(), f64::max);
        if !s.beta.iter().all(|b| b.is_finite()) || !s.intercept.is_finite() {
            break;
        }
        if outer_delta < opts.tolerance {
            return Ok((total_sweeps, outer_delta));
        }
    }
    Err(Error::NonConvergence { iterations: total_sweeps, gap: outer_delta })
}

fn initial_state(y: &DVector<f64>, q: usize, fit_intercept: bool) -> State {
    let ybar = linalg::mean(y).clamp(1e-6, 1.0 - 1e-6);
    let intercept = if fit_intercept { (ybar / (1.0 - ybar)).ln() } else { 0.0 };
    State { beta: DVector::zeros(q), intercept }
}

fn check(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<()> {
    if design.nrows() != target.len() || design.nrows() == 0 || design.ncols() == 0 {
        return Err(invalid("logistic lasso: inconsistent or empty inputs"));
    }
    check_binary(target)
}

/// Logistic Lasso at a single lambda.
pub fn fit_logistic_lasso(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    check(design, target)?;
    let mut s = initial_state(target, design.ncols(), opts.fit_intercept);
    let (iterations, delta) = solve(design, target, lambda, &mut s, opts)?;
    Ok(LassoFit { coefficients: s.beta, intercept: s.intercept, lambda, iterations, delta })
}

/// `max_j |x_j^T (y - mean y)| / n`.
pub fn logistic_lambda_max(design: &DMatrix<f64>, target: &DVector<f64>) -> f64 {
    let ybar = linalg::mean(target);
    let r = target.add_scalar(-ybar);
    let n = design.nrows() as f64;
    (0..design.ncols()).map(|j| design.column(j).dot(&r).abs() / n).fold(0.0, f64::max)
}

/// Warm-started path. Stops early (returning the fits so far) once a fit
/// fails to converge or explains 99.9% of the null deviance, which is where
/// separable problems start to diverge.
fn path(design: &DMatrix<f64>, target: &DVector<f64>, grid: &[f64], opts: &LassoOptions) -> Vec<LassoFit> {
    let mut s = initial_state(target, design.ncols(), opts.fit_intercept);
    let null_dev = mean_deviance(target, &DVector::from_element(target.len(), s.intercept));
    let mut fits = Vec::new();
    for &lambda in grid {
        match solve(design, target, lambda, &mut s, opts) {
            Ok((iterations, delta)) => {
                let dev = mean_deviance(target, &linear_predictor(design, &s));
                fits.push(LassoFit { coefficients: s.beta.clone(), intercept: s.intercept, lambda, iterations, delta });
                if null_dev > 0.0 && dev < 1e-3 * null_dev {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    fits
}

/// Cross-validated logistic Lasso, selecting on held-out deviance.
pub fn cv_logistic_lasso(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    cv: &CvOptions,
    seed: SeedStream,
) -> Result<LassoFit> {
    check(design, target)?;
    let n = design.nrows();
    if cv.folds < 2 || cv.folds > n {
        return Err(invalid(format!("need 2 <= folds <= n, got {} folds for {n} rows", cv.folds)));
    }
    let grid = match &cv.grid {
        Some(g) if g.is_empty() => return Err(invalid("lambda grid is empty")),
        Some(g) => g.clone(),
        None => {
            let max = logistic_lambda_max(design, target);
            if max <= 0.0 {
                return fit_logistic_lasso(design, target, 0.0, &cv.lasso);
            }
            log_grid(max, cv.grid_ratio, cv.grid_len)
        }
    };
    if grid.len() == 1 {
        return fit_logistic_lasso(design, target, grid[0], &cv.lasso);
    }
    let fold = fold_assignment(n, cv.folds, seed);
    let mut err = vec![0.0; grid.len()];
    let mut usable = grid.len();
    for k in 0..cv.folds {
        let (train, test) = split_rows(&fold, k);
        let xt = linalg::select_rows(design, &train);
        let yt = linalg::select_entries(target, &train);
        let xv = linalg::select_rows(design, &test);
        let yv = linalg::select_entries(target, &test);
        let fits = path(&xt, &yt, &grid, &cv.lasso);
        usable = usable.min(fits.len());
        for (e, fit) in err.iter_mut().zip(&fits) {
            *e += mean_deviance(&yv, &fit.predict(&xv)) * test.len() as f64 / n as f64;
        }
    }
    let full = path(design, target, &grid, &cv.lasso);
    usable = usable.min(full.len());
    if usable == 0 {
        return fit_logistic_lasso(design, target, grid[0], &cv.lasso);
    }
    let best = (0..usable).fold(0, |best, i| if err[i] < err[best] { i } else { best });
    Ok(full[best].clone())
}
