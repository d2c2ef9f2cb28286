//! Response models for the simulation study.
//!
//! With `s_i = sum_j z_ij` and standard Gaussian noise:
//!
//! ```text
//! linear        y = b0 x + z^T beta + e
//! logistic      y = 1{b0 x + z^T beta + e > 0}
//! cubic         y = b0 x + (z o z o z)^T beta + e
//! interaction1  y = b0 x s + z^T beta + e
//! interaction2  y = class(b0 x s + z^T beta'' + e'',
//!                         exp(b0 x s) + (z^T beta°)^3 - 1 + e°)
//! interaction3  y = class(b0 x s + z^T beta'' + e'',
//!                         b0 exp(b0 x sum_{j<p} z_ij z_i(j+1)) + z^T beta° + e°)
//! ```
//!
//! where `class(a, c)` is 0, 1, 2, 3 for (a > 0, c > 0), (a > 0, c <= 0),
//! (a <= 0, c > 0), (a <= 0, c <= 0).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Response, ResponseKind};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseModel {
    Linear,
    Logistic,
    Cubic,
    Interaction1,
    Interaction2,
    Interaction3,
}

impl ResponseModel {
    pub fn kind(self) -> ResponseKind {
        match self {
            ResponseModel::Logistic => ResponseKind::Binary,
            ResponseModel::Interaction2 | ResponseModel::Interaction3 => ResponseKind::Categorical(4),
            _ => ResponseKind::Continuous,
        }
    }

    /// Whether the model uses the extra coefficient vectors `beta''`, `beta°`.
    pub fn two_part(self) -> bool {
        matches!(self, ResponseModel::Interaction2 | ResponseModel::Interaction3)
    }
}

impl fmt::Display for ResponseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResponseModel::Linear => "linear",
            ResponseModel::Logistic => "logistic",
            ResponseModel::Cubic => "cubic",
            ResponseModel::Interaction1 => "interaction1",
            ResponseModel::Interaction2 => "interaction2",
            ResponseModel::Interaction3 => "interaction3",
        })
    }
}

impl FromStr for ResponseModel {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => ResponseModel::Linear,
            "logistic" => ResponseModel::Logistic,
            "cubic" => ResponseModel::Cubic,
            "interaction1" => ResponseModel::Interaction1,
            "interaction2" => ResponseModel::Interaction2,
            "interaction3" => ResponseModel::Interaction3,
            _ => return Err(invalid(format!("unknown response model '{s}'"))),
        })
    }
}

/// `sparsity` entries of `+-effect` on a uniformly drawn support, fair signs.
pub fn make_coefficients(p: usize, sparsity: usize, effect: f64, seed: SeedStream) -> Result<DVector<f64>> {
    if sparsity > p {
        return Err(invalid(format!("sparsity {sparsity} exceeds p = {p}")));
    }
    let mut rng = seed.rng();
    let mut beta = DVector::zeros(p);
    for j in index::sample(&mut rng, p, sparsity).into_iter() {
        beta[j] = if rng.random::<bool>() { effect } else { -effect };
    }
    Ok(beta)
}

/// Coefficient vectors of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub beta: DVector<f64>,
    pub beta_ddot: DVector<f64>,
    pub beta_ring: DVector<f64>,
}

impl Coefficients {
    pub fn draw(p: usize, sparsity: usize, effect: f64, seed: SeedStream) -> Result<Self> {
        Ok(Coefficients {
            beta: make_coefficients(p, sparsity, effect, seed.derive(0))?,
            beta_ddot: make_coefficients(p, sparsity, effect, seed.derive(1))?,
            beta_ring: make_coefficients(p, sparsity, effect, seed.derive(2))?,
        })
    }
}

fn class(a: f64, c: f64) -> f64 {
    match (a > 0.0, c > 0.0) {
        (true, true) => 0.0,
        (true, false) => 1.0,
        (false, true) => 2.0,
        (false, false) => 3.0,
    }
}

pub fn generate_response(
    model: ResponseModel,
    x: &DVector<f64>,
    z: &DMatrix<f64>,
    beta0: f64,
    coefs: &Coefficients,
    seed: SeedStream,
) -> Result<Response> {
    let (n, p) = z.shape();
    if x.len() != n || coefs.beta.len() != p {
        return Err(invalid("response model: inconsistent dimensions"));
    }
    let mut rng = seed.rng();
    let mut noise = || rng.sample::<f64, _>(StandardNormal);
    let lin = |beta: &DVector<f64>, i: usize| z.row(i).transpose().dot(beta);
    let row_sum = |i: usize| z.row(i).sum();
    let values = DVector::from_fn(n, |i, _| match model {
        ResponseModel::Linear => beta0 * x[i] + lin(&coefs.beta, i) + noise(),
        ResponseModel::Logistic => {
            if beta0 * x[i] + lin(&coefs.beta, i) + noise() > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ResponseModel::Cubic => {
            let c: f64 = (0..p).map(|j| z[(i, j)].powi(3) * coefs.beta[j]).sum();
            beta0 * x[i] + c + noise()
        }
        ResponseModel::Interaction1 => beta0 * x[i] * row_sum(i) + lin(&coefs.beta, i) + noise(),
        ResponseModel::Interaction2 => {
            let a = beta0 * x[i] * row_sum(i) + lin(&coefs.beta_ddot, i) + noise();
            let c = (beta0 * x[i] * row_sum(i)).exp() + lin(&coefs.beta_ring, i).powi(3) - 1.0 + noise();
            class(a, c)
        }
        ResponseModel::Interaction3 => {
            let a = beta0 * x[i] * row_sum(i) + lin(&coefs.beta_ddot, i) + noise();
            let pairs: f64 = (0..p.saturating_sub(1)).map(|j| z[(i, j)] * z[(i, j + 1)]).sum();
            let c = beta0 * (beta0 * x[i] * pairs).exp() + lin(&coefs.beta_ring, i) + noise();
            class(a, c)
        }
    });
    Response::new(values, model.kind())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{sample_ar1_rows, Ar1Spec};

    #[test]
    fn coefficients_have_requested_support() {
        let beta = make_coefficients(100, 20, 0.5, SeedStream::new(3)).unwrap();
        assert_eq!(beta.iter().filter(|&&b| b != 0.0).count(), 20);
        assert!(beta.iter().all(|&b| b == 0.0 || b.abs() == 0.5));
        let full = make_coefficients(7, 7, 1.0, SeedStream::new(4)).unwrap();
        assert!(full.iter().all(|&b| b != 0.0));
        assert!(make_coefficients(3, 4, 1.0, SeedStream::new(1)).is_err());
    }

    #[test]
    fn pure_noise_has_unit_variance() {
        let n = 10_000;
        let z = DMatrix::zeros(n, 2);
        let x = DVector::zeros(n);
        let coefs = Coefficients::draw(2, 0, 0.5, SeedStream::new(1)).unwrap();
        let y = generate_response(ResponseModel::Linear, &x, &z, 0.0, &coefs, SeedStream::new(2)).unwrap();
        let m = crate::linalg::mean(&y.values);
        let var = y.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
        assert!((0.9..=1.1).contains(&var));
    }

    #[test]
    fn interaction1_null_equals_linear() {
        let (x, z) = sample_ar1_rows(Ar1Spec::new(11, 0.5).unwrap(), 50, SeedStream::new(1));
        let coefs = Coefficients::draw(10, 5, 0.5, SeedStream::new(2)).unwrap();
        let a = generate_response(ResponseModel::Linear, &x, &z, 0.0, &coefs, SeedStream::new(3)).unwrap();
        let b = generate_response(ResponseModel::Interaction1, &x, &z, 0.0, &coefs, SeedStream::new(3)).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn interaction2_occupies_four_classes() {
        let mut occupied = 0;
        for s in 0..40 {
            let seed = SeedStream::new(s);
            let (x, z) = sample_ar1_rows(Ar1Spec::new(101, 0.5).unwrap(), 400, seed.derive(0));
            let coefs = Coefficients::draw(100, 5, 0.5, seed.derive(1)).unwrap();
            let y = generate_response(ResponseModel::Interaction2, &x, &z, 0.1, &coefs, seed.derive(2)).unwrap();
            if (0..4).all(|c| y.values.iter().any(|&v| v == c as f64)) {
                occupied += 1;
            }
        }
        assert!(occupied >= 38);
    }
}
