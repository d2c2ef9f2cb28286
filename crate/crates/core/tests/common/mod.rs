#![allow(dead_code)]

use cit_rank::model::{Dataset, Response};
use cit_rank::rng::SeedStream;
use cit_rank::samplers::{conditional_law_from_ar1, sample_ar1_rows, Ar1Spec, ConditionalGaussianLaw};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// AR(1) covariates with `x` first, `y = z^T beta + x beta0 + N(0, 1)` and
/// dense standard normal `beta`. Returns the data and the exact law of `x | z`.
pub fn ar1_instance(n: usize, p: usize, rho: f64, beta0: f64, seed: u64) -> (Dataset, ConditionalGaussianLaw) {
    let spec = Ar1Spec::new(p + 1, rho).unwrap();
    let s = SeedStream::new(seed);
    let (x, z) = sample_ar1_rows(spec, n, s.derive(1));
    let mut rng = s.derive(2).rng();
    let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &z * &beta + &x * beta0 + noise;
    let data = Dataset::new(Response::continuous(y), z, x).unwrap();
    (data, conditional_law_from_ar1(spec))
}

pub fn normal_matrix(rows: usize, cols: usize, seed: SeedStream) -> DMatrix<f64> {
    let mut rng = seed.rng();
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_permutation(len: usize, seed: SeedStream) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut seed.rng());
    perm
}

/// `sqrt(a (1 - a) / reps)`.
pub fn binomial_se(a: f64, reps: usize) -> f64 {
    (a * (1.0 - a) / reps as f64).sqrt()
}
