//! Test statistics.
//!
//! A [`JointStatistic`] scores every column of a design matrix in one fit on
//! `(y, z, design)`. Applied to a single column it doubles as the marginal
//! statistic of the CRT, CPT and HRT. All statistics here are X-symmetric:
//! permuting the design columns permutes the scores (OLS, likelihood ratio),
//! approximately so up to solver tolerance (Lasso), or in distribution
//! (forests).

pub mod distill;
pub mod forest;
pub mod lasso;
pub mod likelihood;
pub mod logistic;
pub mod ols;
pub mod scaled_lasso;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::model::{Response, ResponseKind, StatisticVector};
use crate::rng::SeedStream;
use crate::samplers::ConditionalGaussianLaw;

pub use distill::{dcrt_score, distill, DistillationResult, Learner};
pub use forest::{Forest, ForestParams, ForestTask};
pub use lasso::{cv_lasso, fit_lasso, lambda_max, CvOptions, LassoFit, LassoOptions};
pub use logistic::{cv_logistic_lasso, fit_logistic_lasso};
pub use scaled_lasso::{scaled_lasso, ScaledLassoFit};

pub trait JointStatistic: Send + Sync {
    fn name(&self) -> String;

    /// One score per column of `design`.
    fn scores(&self, y: &Response, z: &DMatrix<f64>, design: &DMatrix<f64>, seed: SeedStream) -> Result<Vec<f64>>;

    fn evaluate(&self, y: &Response, z: &DMatrix<f64>, design: &DMatrix<f64>, seed: SeedStream) -> Result<StatisticVector> {
        StatisticVector::new(self.scores(y, z, design, seed)?)
    }
}

fn check_shapes(y: &Response, z: &DMatrix<f64>, design: &DMatrix<f64>) -> Result<()> {
    if y.len() != z.nrows() || y.len() != design.nrows() {
        return Err(invalid("y, z and design have different row counts"));
    }
    if design.ncols() == 0 {
        return Err(invalid("design has no columns"));
    }
    Ok(())
}

/// `|OLS coefficient|` of each design column in `y ~ 1 + z + design`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OlsStatistic;

impl JointStatistic for OlsStatistic {
    fn name(&self) -> String {
        "ols".into()
    }

    fn scores(&self, y: &Response, z: &DMatrix<f64>, design: &DMatrix<f64>, _seed: SeedStream) -> Result<Vec<f64>> {
        check_shapes(y, z, design)?;
        ols::ols_scores(&y.values, z, design)
    }
}

/// `|Lasso coefficient|` of each design column in one Lasso of `y` on
/// `(z, design)`: linear for continuous responses, logistic for binary ones.
/// The penalty is fixed or chosen by cross-validation with seed-only folds.
#[derive(Debug, Clone, Default)]
pub struct LassoStatistic {
    pub lambda: Option<f64>,
    pub cv: CvOptions,
}

impl LassoStatistic {
    pub fn fixed(lambda: f64) -> Self {
        LassoStatistic { lambda: Some(lambda), cv: CvOptions::default() }
    }

    pub fn cross_validated() -> Self {
        LassoStatistic::default()
    }
}

impl JointStatistic for LassoStatistic {
    fn name(&self) -> String {
        match self.lambda {
            Some(l) => format!("lasso({l})"),
            None => "lasso".into(),
        }
    }

    fn scores(&self, y: &Response, z: &DMatrix<f64>, design: &DMatrix<f64>, seed: SeedStream) -> Result<Vec<f64>> {
        check_shapes(y, z, design)?;
        let features = linalg::hstack(z, design);
        let fit = match (y.kind, self.lambda) {
            (ResponseKind::Continuous, Some(l)) => fit_lasso(&features, &y.values, l, &self.cv.lasso)?,
            (ResponseKind::Continuous, None) => cv_lasso(&features, &y.values, &self.cv, seed)?,
            (ResponseKind::Binary, Some(l)) => fit_logistic_lasso(&features, &y.values, l, &self.cv.lasso)?,
            (ResponseKind::Binary, None) => cv_logistic_lasso(&features, &y.values, &self.cv, seed)?,
            (ResponseKind::Categorical(_), _) => {
                return Err(invalid("the Lasso statistic needs a continuous or binary response"));
            }
        };
        Ok(fit.coefficients.rows(z.ncols(), design.ncols()).iter().map(|b| b.abs()).collect())
    }
}

/// Impurity-decrease importance of each design column in one forest on
/// `(z, design)`.
#[derive(Debug, Clone, Default)]
pub struct ForestStatistic {
    pub params: ForestParams,
}

impl JointStatistic for ForestStatistic {
    fn name(&self) -> String {
        "forest".into()
    }

    fn scores(&self, y: &Response, z: &DMatrix<f64>, design: &DMatrix<f64>, seed: SeedStream) -> Result<Vec<f64>> {
        check_shapes(y, z, design)?;
        let task = match y.kind.classes() {
            Some(k) => ForestTask::Classification(k),
            None => ForestTask::Regression,
        };
        let forest = Forest::fit(&linalg::hstack(z, design), &y.values, task, &self.params, seed)?;
        Ok(forest.importance().rows(z.ncols(), design.ncols()).iter().copied().collect())
    }
}

/// `log Q*(column | z) - log Q(column | z)`; ignores `y`.
#[derive(Debug, Clone)]
pub struct LikelihoodRatioStatistic {
    pub star: ConditionalGaussianLaw,
    pub proposal: ConditionalGaussianLaw,
}

impl JointStatistic for LikelihoodRatioStatistic {
    fn name(&self) -> String {
        "likelihood-ratio".into()
    }

    fn scores(&self, _y: &Response, z: &DMatrix<f64>, design: &DMatrix<f64>, _seed: SeedStream) -> Result<Vec<f64>> {
        likelihood::likelihood_ratio_scores(design, z, &self.star, &self.proposal)
    }
}

/// Serializable choice of statistic, as used by the CLI and bench configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StatisticSpec {
    Ols,
    Lasso {
        #[serde(default)]
        lambda: Option<f64>,
    },
    Forest(ForestParams),
}

impl StatisticSpec {
    pub fn build(&self) -> Box<dyn JointStatistic> {
        match self {
            StatisticSpec::Ols => Box::new(OlsStatistic),
            StatisticSpec::Lasso { lambda: Some(l) } => Box::new(LassoStatistic::fixed(*l)),
            StatisticSpec::Lasso { lambda: None } => Box::new(LassoStatistic::cross_validated()),
            StatisticSpec::Forest(params) => Box::new(ForestStatistic { params: params.clone() }),
        }
    }

    /// Learner used to distill `y` on `z` with the same model family.
    pub fn learner(&self) -> Learner {
        match self {
            StatisticSpec::Ols => Learner::Ols,
            StatisticSpec::Lasso { .. } => Learner::Lasso,
            StatisticSpec::Forest(p) => Learner::Forest(p.clone()),
        }
    }
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatisticSpec::Ols => write!(f, "ols"),
            StatisticSpec::Lasso { lambda: None } => write!(f, "lasso"),
            StatisticSpec::Lasso { lambda: Some(l) } => write!(f, "lasso:{l}"),
            StatisticSpec::Forest(p) if *p == ForestParams::default() => write!(f, "forest"),
            StatisticSpec::Forest(p) => write!(f, "forest:{}", p.trees),
        }
    }
}

/// Parses `ols`, `lasso`, `lasso:<lambda>`, `forest` or `forest:<trees>`.
impl FromStr for StatisticSpec {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let number = |a: &str| a.parse::<f64>().map_err(|_| invalid(format!("bad statistic parameter '{a}'")));
        match (head, arg) {
            ("ols", None) => Ok(StatisticSpec::Ols),
            ("lasso", None) => Ok(StatisticSpec::Lasso { lambda: None }),
            ("lasso", Some(a)) => Ok(StatisticSpec::Lasso { lambda: Some(number(a)?) }),
            ("forest", None) => Ok(StatisticSpec::Forest(ForestParams::default())),
            ("forest", Some(a)) => {
                let trees = a.parse().map_err(|_| invalid(format!("bad tree count '{a}'")))?;
                Ok(StatisticSpec::Forest(ForestParams { trees, ..Default::default() }))
            }
            _ => Err(invalid(format!("unknown statistic '{s}' (expected ols, lasso[:lambda], forest[:trees])"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn spec_round_trips_through_strings() {
        for s in ["ols", "lasso", "lasso:0.25", "forest", "forest:20"] {
            assert_eq!(s.parse::<StatisticSpec>().unwrap().to_string(), s);
        }
        assert!("ridge".parse::<StatisticSpec>().is_err());
    }

    #[test]
    fn lasso_at_zero_matches_ols() {
        let mut rng = SeedStream::new(7).rng();
        let n = 80;
        let z = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = Response::continuous(DVector::from_fn(n, |i, _| z[(i, 0)] + d[(i, 1)] + rng.sample::<f64, _>(StandardNormal)));
        let mut lasso = LassoStatistic::fixed(0.0);
        lasso.cv.lasso.tolerance = 1e-12;
        let a = lasso.scores(&y, &z, &d, SeedStream::new(1)).unwrap();
        let b = OlsStatistic.scores(&y, &z, &d, SeedStream::new(1)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn lasso_rejects_categorical() {
        let y = Response::new(DVector::from_fn(12, |i, _| (i % 3) as f64), ResponseKind::Categorical(3)).unwrap();
        let z = DMatrix::from_fn(12, 1, |i, _| i as f64);
        let d = DMatrix::from_fn(12, 2, |i, j| ((i + j) % 4) as f64);
        assert!(LassoStatistic::fixed(0.1).scores(&y, &z, &d, SeedStream::new(1)).is_err());
    }
}
