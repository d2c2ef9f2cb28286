//! Misspecification mechanisms for the conditional law of `x` given `z`.
//!
//! The design starts as a Gaussian AR(1) vector `(X°, Z)` whose exact
//! conditional law is `N(z^T zeta, sigma°^2)`. Each mechanism fixes a true law
//! (used to draw `x`) and a proposal law `Q` (used to draw pseudo columns):
//!
//! | mechanism        | truth                                         | Q                      |
//! |------------------|-----------------------------------------------|------------------------|
//! | none             | `N(z^T zeta, sigma°^2)`                       | truth                  |
//! | theta(t)         | `N(t z^T zeta, (1 + (1 - t)^2) / 2 sigma°^2)` | `N(0, sigma°^2)`       |
//! | quadratic/cubic/tanh(t) | mean `link_t(z^T zeta)`                | AR(1) conditional law  |
//! | unlabeled(N)     | AR(1) conditional law                         | scaled Lasso on N rows |
//! | reuse            | AR(1) conditional law                         | scaled Lasso on (x, z) |

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{tags, SeedStream};
use crate::samplers::{conditional_law_from_ar1, sample_ar1_rows, Ar1Spec, ConditionalGaussianLaw, MeanLink};
use crate::statistics::{scaled_lasso, LassoOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Misspecification {
    #[default]
    None,
    Theta { theta: f64 },
    Quadratic { theta: f64 },
    Cubic { theta: f64 },
    Tanh { theta: f64 },
    Unlabeled { n: usize },
    Reuse,
}

impl fmt::Display for Misspecification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Misspecification::None => write!(f, "none"),
            Misspecification::Theta { theta } => write!(f, "theta={theta}"),
            Misspecification::Quadratic { theta } => write!(f, "quadratic={theta}"),
            Misspecification::Cubic { theta } => write!(f, "cubic={theta}"),
            Misspecification::Tanh { theta } => write!(f, "tanh={theta}"),
            Misspecification::Unlabeled { n } => write!(f, "unlabeled={n}"),
            Misspecification::Reuse => write!(f, "reuse"),
        }
    }
}

impl Misspecification {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Misspecification::Theta { theta } if !(0.0..=1.0).contains(&theta) => {
                Err(config(format!("theta must lie in [0, 1], got {theta}")))
            }
            Misspecification::Quadratic { theta } | Misspecification::Cubic { theta } | Misspecification::Tanh { theta }
                if !theta.is_finite() =>
            {
                Err(config("theta must be finite"))
            }
            Misspecification::Unlabeled { n } if n <= 10 => Err(config("unlabeled sample size must exceed 10")),
            _ => Ok(()),
        }
    }
}

/// Design of one replication together with both laws.
#[derive(Debug, Clone)]
pub struct MisspecifiedDesign {
    pub x: DVector<f64>,
    pub z: DMatrix<f64>,
    pub truth: ConditionalGaussianLaw,
    pub proposal: ConditionalGaussianLaw,
}

/// Draws `(x, z)` with `p` covariates and applies `mechanism`.
pub fn apply_misspecification(
    mechanism: Misspecification,
    n: usize,
    p: usize,
    rho: f64,
    seed: SeedStream,
) -> Result<MisspecifiedDesign> {
    mechanism.validate()?;
    let ar = Ar1Spec::new(p + 1, rho)?;
    let (x0, z) = sample_ar1_rows(ar, n, seed.derive(tags::DATA));
    let base = conditional_law_from_ar1(ar);
    let redraw = |law: &ConditionalGaussianLaw| law.sample(&z, seed.derive2(tags::DATA, 1));
    let with_link = |link| ConditionalGaussianLaw::with_link(0.0, base.zeta.clone(), base.sigma2, link);
    let (x, truth, proposal) = match mechanism {
        Misspecification::None => (x0, base.clone(), base.clone()),
        Misspecification::Theta { theta } => {
            let sigma2 = (1.0 + (1.0 - theta).powi(2)) / 2.0 * base.sigma2;
            let truth = ConditionalGaussianLaw::with_link(0.0, &base.zeta * theta, sigma2, MeanLink::Identity)?;
            let proposal = ConditionalGaussianLaw::independent(p, base.sigma2)?;
            (redraw(&truth)?, truth, proposal)
        }
        Misspecification::Quadratic { theta } => {
            let truth = with_link(MeanLink::Quadratic(theta))?;
            (redraw(&truth)?, truth, base.clone())
        }
        Misspecification::Cubic { theta } => {
            let truth = with_link(MeanLink::Cubic(theta))?;
            (redraw(&truth)?, truth, base.clone())
        }
        Misspecification::Tanh { theta } => {
            let truth = with_link(MeanLink::Tanh(theta))?;
            (redraw(&truth)?, truth, base.clone())
        }
        Misspecification::Unlabeled { n: extra } => {
            let (xu, zu) = sample_ar1_rows(ar, extra, seed.derive(tags::UNLABELED));
            let fit = scaled_lasso(&zu, &xu, &LassoOptions::default())?;
            (x0, base.clone(), fit.law()?)
        }
        Misspecification::Reuse => {
            let fit = scaled_lasso(&z, &x0, &LassoOptions::default())?;
            (x0, base.clone(), fit.law()?)
        }
    };
    Ok(MisspecifiedDesign { x, z, truth, proposal })
}
