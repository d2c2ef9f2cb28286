//! Conditional independence tests of `Y ⟂ X | Z`.
//!
//! Every procedure draws `b` pseudo copies of `x` (from the conditional law,
//! or as rearrangements of `x` for the permutation variants), scores the
//! real and pseudo columns, and turns the scores into a p-value:
//!
//! | method  | pseudo columns       | statistic          | p-value |
//! |---------|----------------------|--------------------|---------|
//! | CRRT    | law                  | joint, one fit     | rank    |
//! | CRRT_k  | law                  | joint, per fold    | rank    |
//! | CRT     | law                  | marginal, b+1 fits | CRT     |
//! | CPT     | permutations         | marginal           | CRT     |
//! | CPRT    | permutations         | joint              | rank    |
//! | dCRT    | law                  | distilled          | CRT     |
//! | HRT     | law                  | held-out loss      | CRT     |
//!
//! Column `i` of the pooled scores (0 = real `x`) is always scored with
//! statistic substream `i` of its fold, so CRRT_k with one column per fold
//! reproduces the CRT bit for bit.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Result};
use crate::linalg;
use crate::model::{crt_p_value, rank_p_value, Dataset, PValue, Response, ResponseKind, StatisticVector, TestReport};
use crate::rng::{tags, SeedStream};
use crate::samplers::{sample_cpt_columns, sample_pseudo_columns, ConditionalGaussianLaw, CptSampler};
use crate::statistics::logistic::mean_deviance;
use crate::statistics::{
    cv_lasso, cv_logistic_lasso, dcrt_score, distill, CvOptions, Forest, ForestTask, JointStatistic, StatisticSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Crrt,
    #[serde(rename = "crrt-k")]
    CrrtK,
    Crt,
    Cpt,
    Cprt,
    Dcrt,
    Hrt,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Crrt => "crrt",
            Method::CrrtK => "crrt-k",
            Method::Crt => "crt",
            Method::Cpt => "cpt",
            Method::Cprt => "cprt",
            Method::Dcrt => "dcrt",
            Method::Hrt => "hrt",
        })
    }
}

impl FromStr for Method {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "crrt" => Method::Crrt,
            "crrt-k" | "crrtk" => Method::CrrtK,
            "crt" => Method::Crt,
            "cpt" => Method::Cpt,
            "cprt" => Method::Cprt,
            "dcrt" => Method::Dcrt,
            "hrt" => Method::Hrt,
            _ => return Err(invalid(format!("unknown method '{s}'"))),
        })
    }
}

/// Everything needed to run one test besides the data, the law and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSpec {
    pub method: Method,
    pub b: usize,
    pub alpha: f64,
    pub statistic: StatisticSpec,
    /// Number of folds for CRRT_k; must divide `b + 1`.
    pub folds_k: usize,
    /// Assign columns to CRRT_k folds at random instead of contiguously.
    pub random_folds: bool,
    /// Covariates kept in the dCRT testing regression.
    pub keep_k: usize,
    /// Training share for the HRT split.
    pub train_fraction: f64,
    /// Pair-swap sweeps for CPT/CPRT; defaults to `50 n`.
    pub cpt_steps: Option<usize>,
    /// Use exact enumeration (n <= 8) instead of the pair-swap chain.
    pub cpt_exact: bool,
}

impl Default for TestSpec {
    fn default() -> Self {
        TestSpec {
            method: Method::Crrt,
            b: 199,
            alpha: 0.05,
            statistic: StatisticSpec::Lasso { lambda: None },
            folds_k: 1,
            random_folds: false,
            keep_k: 0,
            train_fraction: 0.5,
            cpt_steps: None,
            cpt_exact: false,
        }
    }
}

impl TestSpec {
    pub fn new(method: Method, statistic: StatisticSpec, b: usize) -> Self {
        TestSpec { method, statistic, b, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(config("b must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.method == Method::CrrtK && (self.folds_k == 0 || (self.b + 1) % self.folds_k != 0) {
            return Err(config(format!("folds_k = {} must divide b + 1 = {}", self.folds_k, self.b + 1)));
        }
        if self.method == Method::Hrt && !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(config(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if self.cpt_steps == Some(0) {
            return Err(config("cpt_steps must be at least 1"));
        }
        Ok(())
    }

    /// Short label such as `crrt`, `crrt-4` or `d2crt`.
    pub fn label(&self) -> String {
        match self.method {
            Method::CrrtK => format!("crrt-{}", self.folds_k),
            Method::Dcrt => format!("d{}crt", self.keep_k),
            m => m.to_string(),
        }
    }
}

fn pool(x: &DVector<f64>, pseudo: &DMatrix<f64>) -> DMatrix<f64> {
    let mut all = DMatrix::zeros(x.len(), pseudo.ncols() + 1);
    all.set_column(0, x);
    all.view_mut((0, 1), (x.len(), pseudo.ncols())).copy_from(pseudo);
    all
}

fn law_columns(data: &Dataset, law: &ConditionalGaussianLaw, b: usize, seed: SeedStream) -> Result<DMatrix<f64>> {
    Ok(pool(&data.x, &sample_pseudo_columns(law, &data.z, b, seed.derive(tags::PSEUDO))?))
}

fn cpt_columns(data: &Dataset, law: &ConditionalGaussianLaw, spec: &TestSpec, seed: SeedStream) -> Result<DMatrix<f64>> {
    let sampler = if spec.cpt_exact {
        CptSampler::Exact
    } else {
        CptSampler::PairSwap { steps: spec.cpt_steps.unwrap_or(50 * data.n()) }
    };
    Ok(pool(&data.x, &sample_cpt_columns(law, &data.z, &data.x, spec.b, sampler, seed.derive(tags::CPT))?))
}

/// Scores all columns jointly in folds; fold `f` uses statistic substream `f`.
fn batched_scores(
    statistic: &dyn JointStatistic,
    data: &Dataset,
    columns: &DMatrix<f64>,
    folds: usize,
    random: bool,
    seed: SeedStream,
) -> Result<StatisticVector> {
    let total = columns.ncols();
    let mut order: Vec<usize> = (0..total).collect();
    if random {
        order.shuffle(&mut seed.derive(tags::FOLDS).rng());
    }
    let width = total / folds;
    let stat_seed = seed.derive(tags::STATISTIC);
    let mut scores = vec![0.0; total];
    for (f, members) in order.chunks(width).enumerate() {
        let design = linalg::select_columns(columns, members);
        let t = statistic.scores(&data.y, &data.z, &design, stat_seed.derive(f as u64))?;
        if t.len() != members.len() {
            return Err(invalid("statistic returned the wrong number of scores"));
        }
        for (&c, v) in members.iter().zip(t) {
            scores[c] = v;
        }
    }
    StatisticVector::new(scores)
}

/// Scores each column on its own; column `i` uses statistic substream `i`.
fn marginal_scores(
    score: impl Fn(&DMatrix<f64>, SeedStream) -> Result<f64>,
    columns: &DMatrix<f64>,
    seed: SeedStream,
) -> Result<(StatisticVector, PValue)> {
    let stat_seed = seed.derive(tags::STATISTIC);
    let scores = (0..columns.ncols())
        .map(|i| score(&columns.columns(i, 1).into_owned(), stat_seed.derive(i as u64)))
        .collect::<Result<Vec<f64>>>()?;
    let p = crt_p_value(scores[0], &scores[1..])?;
    Ok((StatisticVector::new(scores)?, p))
}

fn report(spec: &TestSpec, statistic: String, data: &Dataset, p: PValue, t: StatisticVector, seed: u64, start: Instant) -> TestReport {
    TestReport::new(spec.label(), statistic, data, spec.alpha, p, t, seed, start.elapsed())
}

/// Conditional randomization rank test: one joint fit on `(x, pseudo)`.
pub fn run_crrt(data: &Dataset, law: &ConditionalGaussianLaw, spec: &TestSpec, statistic: &dyn JointStatistic, seed: u64) -> Result<TestReport> {
    spec.validate()?;
    let start = Instant::now();
    let s = SeedStream::new(seed);
    let columns = law_columns(data, law, spec.b, s)?;
    let t = batched_scores(statistic, data, &columns, 1, false, s)?;
    let p = rank_p_value(&t);
    Ok(report(spec, statistic.name(), data, p, t, seed, start))
}

/// CRRT_k: the `b + 1` columns are split into `folds_k` folds of equal width
/// (contiguous unless `random_folds`), each scored by its own joint fit.
pub fn run_crrt_batched(
    data: &Dataset,
    law: &ConditionalGaussianLaw,
    spec: &TestSpec,
    statistic: &dyn JointStatistic,
    seed: u64,
) -> Result<TestReport> {
    let mut checked = spec.clone();
    checked.method = Method::CrrtK;
    checked.validate()?;
    let start = Instant::now();
    let s = SeedStream::new(seed);
    let columns = law_columns(data, law, spec.b, s)?;
    let t = batched_scores(statistic, data, &columns, spec.folds_k, spec.random_folds, s)?;
    let p = rank_p_value(&t);
    Ok(report(spec, statistic.name(), data, p, t, seed, start))
}

/// Conditional randomization test: `b + 1` separate marginal fits.
pub fn run_crt(data: &Dataset, law: &ConditionalGaussianLaw, spec: &TestSpec, statistic: &dyn JointStatistic, seed: u64) -> Result<TestReport> {
    spec.validate()?;
    let start = Instant::now();
    let s = SeedStream::new(seed);
    let columns = law_columns(data, law, spec.b, s)?;
    let (t, p) = marginal_scores(|c, ss| Ok(statistic.scores(&data.y, &data.z, c, ss)?[0]), &columns, s)?;
    Ok(report(spec, statistic.name(), data, p, t, seed, start))
}

/// Conditional permutation test: marginal statistic on rearrangements of `x`.
pub fn run_cpt(data: &Dataset, law: &ConditionalGaussianLaw, spec: &TestSpec, statistic: &dyn JointStatistic, seed: u64) -> Result<TestReport> {
    spec.validate()?;
    let start = Instant::now();
    let s = SeedStream::new(seed);
    let columns = cpt_columns(data, law, spec, s)?;
    let (t, p) = marginal_scores(|c, ss| Ok(statistic.scores(&data.y, &data.z, c, ss)?[0]), &columns, s)?;
    Ok(report(spec, statistic.name(), data, p, t, seed, start))
}

/// Conditional permutation rank test: one joint fit on rearrangements of `x`.
pub fn run_cprt(data: &Dataset, law: &ConditionalGaussianLaw, spec: &TestSpec, statistic: &dyn JointStatistic, seed: u64) -> Result<TestReport> {
    spec.validate()?;
    let start = Instant::now();
    let s = SeedStream::new(seed);
    let columns = cpt_columns(data, law, spec, s)?;
    let t = batched_scores(statistic, data, &columns, 1, false, s)?;
    let p = rank_p_value(&t);
    Ok(report(spec, statistic.name(), data, p, t, seed, start))
}

/// Distilled CRT: `y` is regressed on `z` once, then each column is scored
/// by a small least-squares fit on the residuals.
pub fn run_dcrt(data: &Dataset, law: &ConditionalGaussianLaw, spec: &TestSpec, seed: u64) -> Result<TestReport> {
    spec.validate()?;
    let start = Instant::now();
    let s = SeedStream::new(seed);
    let columns = law_columns(data, law, spec.b, s)?;
    let dist = distill(&data.y, &data.z, law, spec.keep_k, &spec.statistic.learner(), &CvOptions::default(), s.derive(tags::DISTILL))?;
    let (t, p) = marginal_scores(|c, _| dcrt_score(&dist, &data.z, &c.column(0).clone_owned()), &columns, s)?;
    Ok(report(spec, format!("{}", spec.statistic), data, p, t, seed, start))
}

/// Fitted predictor used by the holdout randomization test.
enum HoldoutModel {
    Linear { intercept: f64, beta: DVector<f64> },
    Logistic { intercept: f64, beta: DVector<f64> },
    Forest(Forest),
}

impl HoldoutModel {
    fn fit(spec: &StatisticSpec, y: &Response, features: &DMatrix<f64>, seed: SeedStream) -> Result<Self> {
        let cv = CvOptions::default();
        Ok(match (spec, y.kind) {
            (StatisticSpec::Forest(params), kind) => {
                let task = match kind.classes() {
                    Some(k) => ForestTask::Classification(k),
                    None => ForestTask::Regression,
                };
                HoldoutModel::Forest(Forest::fit(features, &y.values, task, params, seed)?)
            }
            (_, ResponseKind::Categorical(_)) => {
                return Err(invalid("HRT with a categorical response needs the forest model"));
            }
            (StatisticSpec::Ols, _) => {
                let (intercept, beta) = linalg::ols_with_intercept(features, &y.values)?;
                HoldoutModel::Linear { intercept, beta }
            }
            (StatisticSpec::Lasso { lambda }, ResponseKind::Continuous) => {
                let fit = match lambda {
                    Some(l) => crate::statistics::fit_lasso(features, &y.values, *l, &cv.lasso)?,
                    None => cv_lasso(features, &y.values, &cv, seed)?,
                };
                HoldoutModel::Linear { intercept: fit.intercept, beta: fit.coefficients }
            }
            (StatisticSpec::Lasso { lambda }, ResponseKind::Binary) => {
                let fit = match lambda {
                    Some(l) => crate::statistics::fit_logistic_lasso(features, &y.values, *l, &cv.lasso)?,
                    None => cv_logistic_lasso(features, &y.values, &cv, seed)?,
                };
                HoldoutModel::Logistic { intercept: fit.intercept, beta: fit.coefficients }
            }
        })
    }

    /// Mean held-out loss: squared error for linear and regression models,
    /// binomial deviance for logistic models, cross-entropy for classifiers.
    fn loss(&self, y: &Response, features: &DMatrix<f64>) -> f64 {
        let n = y.len() as f64;
        match self {
            HoldoutModel::Linear { intercept, beta } => {
                let pred = (features * beta).add_scalar(*intercept);
                (&y.values - pred).norm_squared() / n
            }
            HoldoutModel::Logistic { intercept, beta } => {
                mean_deviance(&y.values, &(features * beta).add_scalar(*intercept))
            }
            HoldoutModel::Forest(forest) => {
                let pred = forest.predict(features);
                match forest.task() {
                    ForestTask::Regression => (&y.values - pred.column(0)).norm_squared() / n,
                    ForestTask::Classification(_) => {
                        y.labels().iter().enumerate().map(|(i, &c)| -pred[(i, c)].max(1e-12).ln()).sum::<f64>() / n
                    }
                }
            }
        }
    }
}

/// Row split for the HRT: `ceil(fraction * n)` training rows, clamped so both
/// parts are non-empty.
pub fn holdout_split(n: usize, fraction: f64, seed: SeedStream) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(invalid("HRT needs at least two rows"));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut seed.rng());
    let cut = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut test = rows.split_off(cut);
    rows.sort_unstable();
    test.sort_unstable();
    Ok((rows, test))
}

/// Holdout randomization test: one model fit on the training rows; each
/// column's statistic is the negative test loss with that column in place
/// of `x`.
pub fn run_hrt(data: &Dataset, law: &ConditionalGaussianLaw, spec: &TestSpec, seed: u64) -> Result<TestReport> {
    spec.validate()?;
    let start = Instant::now();
    let s = SeedStream::new(seed);
    let columns = law_columns(data, law, spec.b, s)?;
    let (train, test) = holdout_split(data.n(), spec.train_fraction, s.derive(tags::SPLIT))?;
    let features = |rows: &[usize], column: &DVector<f64>| {
        let z = linalg::select_rows(&data.z, rows);
        let mut f = DMatrix::zeros(rows.len(), z.ncols() + 1);
        f.view_mut((0, 0), (rows.len(), z.ncols())).copy_from(&z);
        f.set_column(z.ncols(), &linalg::select_entries(column, rows));
        f
    };
    let model = HoldoutModel::fit(&spec.statistic, &data.y.subset(&train), &features(&train, &data.x), s.derive(tags::STATISTIC))?;
    let y_test = data.y.subset(&test);
    let (t, p) = marginal_scores(|c, _| Ok(-model.loss(&y_test, &features(&test, &c.column(0).clone_owned()))), &columns, s)?;
    Ok(report(spec, format!("{}", spec.statistic), data, p, t, seed, start))
}

/// Runs the procedure named in `spec` with its configured statistic.
pub fn run_test(data: &Dataset, law: &ConditionalGaussianLaw, spec: &TestSpec, seed: u64) -> Result<TestReport> {
    let statistic = spec.statistic.build();
    match spec.method {
        Method::Crrt => run_crrt(data, law, spec, statistic.as_ref(), seed),
        Method::CrrtK => run_crrt_batched(data, law, spec, statistic.as_ref(), seed),
        Method::Crt => run_crt(data, law, spec, statistic.as_ref(), seed),
        Method::Cpt => run_cpt(data, law, spec, statistic.as_ref(), seed),
        Method::Cprt => run_cprt(data, law, spec, statistic.as_ref(), seed),
        Method::Dcrt => run_dcrt(data, law, spec, seed),
        Method::Hrt => run_hrt(data, law, spec, seed),
    }
}
