//! Covariate and pseudo-column generation.
//!
//! * Gaussian AR(1) rows, generated by the Markov recursion
//!   `w[j+1] = rho * w[j] + sqrt(1 - rho^2) * xi`.
//! * Conditional Gaussian draws `x_i ~ N(mu(z_i), sigma2)` for the
//!   randomization tests.
//! * Rearrangements of the observed `x` drawn from the permutation law
//!   `R_n(v) ∝ prod_i Q(v_i | z_i)` for the permutation tests.
//!
//! The permutation sampler is a Gibbs pair-swap chain: one step draws a
//! uniformly random perfect matching of the rows and, independently for each
//! pair `(i, j)`, swaps their values with probability
//! `w_swap / (w_swap + w_keep)`. The chain is reversible for `R_n`, so the
//! hub-and-spoke construction in [`sample_cpt_columns`] (run `steps` from the
//! observed `x` to a hub, then `steps` from the hub for every copy) makes the
//! real column and its copies exchangeable for any number of steps.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::rng::SeedStream;

/// Mean map applied to the linear index `u = z^T zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MeanLink {
    #[default]
    Identity,
    /// `u + theta * u^2`
    Quadratic(f64),
    /// `u + theta * u^3`
    Cubic(f64),
    /// `tanh(theta * u) / theta`, and `u` at `theta = 0`.
    Tanh(f64),
}

impl MeanLink {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            MeanLink::Identity => u,
            MeanLink::Quadratic(t) => u + t * u * u,
            MeanLink::Cubic(t) => u + t * u * u * u,
            MeanLink::Tanh(t) if t == 0.0 => u,
            MeanLink::Tanh(t) => (t * u).tanh() / t,
        }
    }
}

/// `X | Z = z ~ N(intercept + link(z^T zeta), sigma2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussianLaw {
    pub intercept: f64,
    pub zeta: DVector<f64>,
    pub sigma2: f64,
    pub link: MeanLink,
}

impl ConditionalGaussianLaw {
    pub fn new(zeta: DVector<f64>, sigma2: f64) -> Result<Self> {
        Self::with_link(0.0, zeta, sigma2, MeanLink::Identity)
    }

    pub fn with_link(intercept: f64, zeta: DVector<f64>, sigma2: f64, link: MeanLink) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(invalid(format!("conditional variance must be positive, got {sigma2}")));
        }
        if !intercept.is_finite() || zeta.iter().any(|v| !v.is_finite()) {
            return Err(invalid("law coefficients must be finite"));
        }
        Ok(ConditionalGaussianLaw { intercept, zeta, sigma2, link })
    }

    /// `N(0, sigma2)` independent of `z` (p coefficients, all zero).
    pub fn independent(p: usize, sigma2: f64) -> Result<Self> {
        Self::new(DVector::zeros(p), sigma2)
    }

    pub fn p(&self) -> usize {
        self.zeta.len()
    }

    pub fn means(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        if z.ncols() != self.zeta.len() {
            return Err(invalid(format!(
                "law expects {} covariates but z has {}",
                self.zeta.len(),
                z.ncols()
            )));
        }
        let mut u = z * &self.zeta;
        u.apply(|v| *v = self.intercept + self.link.apply(*v));
        Ok(u)
    }

    pub fn log_density(&self, x: f64, mean: f64) -> f64 {
        let d = x - mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.sigma2).ln() - d * d / (2.0 * self.sigma2)
    }

    /// `sum_i log Q(column_i | z_i)` given precomputed row means.
    pub fn column_log_density(&self, column: impl Iterator<Item = f64>, means: &DVector<f64>) -> f64 {
        column.zip(means.iter()).map(|(x, &m)| self.log_density(x, m)).sum()
    }

    /// One draw of the n-vector `x` given `z`.
    pub fn sample(&self, z: &DMatrix<f64>, seed: SeedStream) -> Result<DVector<f64>> {
        let means = self.means(z)?;
        let sd = self.sigma2.sqrt();
        let mut rng = seed.rng();
        Ok(means.map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)))
    }
}

/// Joint law of `(X, Z_1, ..., Z_p)`: stationary Gaussian AR(1) with unit
/// marginal variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Spec {
    pub dim: usize,
    pub rho: f64,
}

impl Ar1Spec {
    pub fn new(dim: usize, rho: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("AR(1) dimension must be positive"));
        }
        if !(rho.abs() < 1.0) {
            return Err(invalid(format!("AR(1) coefficient must lie in (-1, 1), got {rho}")));
        }
        Ok(Ar1Spec { dim, rho })
    }
}

/// Draws the full `n x dim` matrix of AR(1) rows.
pub fn sample_ar1_matrix(spec: Ar1Spec, n: usize, seed: SeedStream) -> DMatrix<f64> {
    let mut rng = seed.rng();
    let innovation = (1.0 - spec.rho * spec.rho).sqrt();
    let mut w = DMatrix::zeros(n, spec.dim);
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        w[(i, 0)] = prev;
        for j in 1..spec.dim {
            let xi: f64 = rng.sample(StandardNormal);
            prev = spec.rho * prev + innovation * xi;
            w[(i, j)] = prev;
        }
    }
    w
}

/// AR(1) rows split into the first coordinate `x` and the remaining `z`.
pub fn sample_ar1_rows(spec: Ar1Spec, n: usize, seed: SeedStream) -> (DVector<f64>, DMatrix<f64>) {
    let w = sample_ar1_matrix(spec, n, seed);
    let x = w.column(0).into_owned();
    let z = w.columns(1, spec.dim - 1).into_owned();
    (x, z)
}

/// Law of the first AR(1) coordinate given the rest: the precision matrix is
/// tridiagonal, so only the neighbouring coordinate enters.
pub fn conditional_law_from_ar1(spec: Ar1Spec) -> ConditionalGaussianLaw {
    let mut zeta = DVector::zeros(spec.dim - 1);
    if spec.dim > 1 {
        zeta[0] = spec.rho;
    }
    ConditionalGaussianLaw {
        intercept: 0.0,
        zeta,
        sigma2: 1.0 - spec.rho * spec.rho,
        link: MeanLink::Identity,
    }
}

/// `b` independent columns, column `k` drawn from substream `k + 1`.
pub fn sample_pseudo_columns(
    law: &ConditionalGaussianLaw,
    z: &DMatrix<f64>,
    b: usize,
    seed: SeedStream,
) -> Result<DMatrix<f64>> {
    if b == 0 {
        return Err(invalid("b must be at least 1"));
    }
    let means = law.means(z)?;
    let sd = law.sigma2.sqrt();
    let mut out = DMatrix::zeros(z.nrows(), b);
    for (k, mut col) in out.column_iter_mut().enumerate() {
        let mut rng = seed.derive(k as u64 + 1).rng();
        for (v, m) in col.iter_mut().zip(means.iter()) {
            *v = m + sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

/// Current assignment of the sorted values to rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationState {
    /// `current[i]` is the index into `x_ordered` held by row `i`.
    pub current: Vec<usize>,
    pub x_ordered: Vec<f64>,
}

impl PermutationState {
    /// Identity assignment of the sorted values.
    pub fn sorted(values: &[f64]) -> Self {
        let mut x_ordered = values.to_vec();
        x_ordered.sort_by(|a, b| a.total_cmp(b));
        PermutationState { current: (0..values.len()).collect(), x_ordered }
    }

    /// Assignment reproducing `values` row for row.
    pub fn observed(values: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let x_ordered = order.iter().map(|&i| values[i]).collect();
        let mut current = vec![0; values.len()];
        for (rank, &row) in order.iter().enumerate() {
            current[row] = rank;
        }
        PermutationState { current, x_ordered }
    }

    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(self.current.len(), self.current.iter().map(|&i| self.x_ordered[i]))
    }

    /// Runs `steps` Gibbs pair-swap sweeps.
    pub fn run<R: Rng>(&mut self, means: &DVector<f64>, sigma2: f64, steps: usize, rng: &mut R) {
        let n = self.current.len();
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..steps {
            order.shuffle(rng);
            for pair in order.chunks_exact(2) {
                let (i, j) = (pair[0], pair[1]);
                let vi = self.x_ordered[self.current[i]];
                let vj = self.x_ordered[self.current[j]];
                // log w_swap - log w_keep
                let delta = -(vi - vj) * (means[i] - means[j]) / sigma2;
                let accept = 1.0 / (1.0 + (-delta).exp());
                if rng.random::<f64>() < accept {
                    self.current.swap(i, j);
                }
            }
        }
    }
}

/// One draw from the permutation law after `steps` sweeps started from the
/// sorted arrangement of `x_ordered`.
pub fn sample_cpt_permutation(
    law: &ConditionalGaussianLaw,
    z: &DMatrix<f64>,
    x_ordered: &[f64],
    steps: usize,
    seed: SeedStream,
) -> Result<DVector<f64>> {
    if steps == 0 {
        return Err(invalid("cpt steps must be at least 1"));
    }
    let means = law.means(z)?;
    if means.len() != x_ordered.len() {
        return Err(invalid("x_ordered and z must have the same number of rows"));
    }
    let mut state = PermutationState::sorted(x_ordered);
    state.run(&means, law.sigma2, steps, &mut seed.rng());
    Ok(state.values())
}

/// Largest `n` for which the permutation law is enumerated exactly.
pub const EXACT_CPT_MAX_N: usize = 8;

/// All `n!` assignments with their probabilities under the permutation law.
pub fn exact_cpt_distribution(
    law: &ConditionalGaussianLaw,
    z: &DMatrix<f64>,
    x_ordered: &[f64],
) -> Result<Vec<(Vec<usize>, f64)>> {
    let n = x_ordered.len();
    if n > EXACT_CPT_MAX_N {
        return Err(invalid(format!("exact enumeration supports n <= {EXACT_CPT_MAX_N}, got {n}")));
    }
    let means = law.means(z)?;
    let mut sorted = x_ordered.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut perms = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    permutations(&mut current, 0, &mut perms);
    let logw: Vec<f64> = perms
        .iter()
        .map(|p| law.column_log_density(p.iter().map(|&i| sorted[i]), &means))
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(perms.into_iter().zip(weights).map(|(p, w)| (p, w / total)).collect())
}

fn permutations(current: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == current.len() {
        out.push(current.clone());
        return;
    }
    for i in k..current.len() {
        current.swap(k, i);
        permutations(current, k + 1, out);
        current.swap(k, i);
    }
}

/// An exact draw from the permutation law, for small `n`.
pub fn sample_cpt_exact(
    law: &ConditionalGaussianLaw,
    z: &DMatrix<f64>,
    x_ordered: &[f64],
    seed: SeedStream,
) -> Result<DVector<f64>> {
    let dist = exact_cpt_distribution(law, z, x_ordered)?;
    let mut sorted = x_ordered.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let u: f64 = seed.rng().random();
    let mut acc = 0.0;
    let chosen = dist
        .iter()
        .find(|(_, p)| {
            acc += p;
            u < acc
        })
        .unwrap_or_else(|| dist.last().expect("at least one permutation"));
    Ok(DVector::from_iterator(sorted.len(), chosen.0.iter().map(|&i| sorted[i])))
}

/// How permutation-test copies are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CptSampler {
    /// Hub-and-spoke pair-swap chain with the given number of sweeps.
    PairSwap { steps: usize },
    /// Independent exact draws (small `n` only).
    Exact,
}

/// `b` rearrangements of the observed `x`.
pub fn sample_cpt_columns(
    law: &ConditionalGaussianLaw,
    z: &DMatrix<f64>,
    x: &DVector<f64>,
    b: usize,
    sampler: CptSampler,
    seed: SeedStream,
) -> Result<DMatrix<f64>> {
    if b == 0 {
        return Err(invalid("b must be at least 1"));
    }
    let n = x.len();
    let mut out = DMatrix::zeros(n, b);
    match sampler {
        CptSampler::Exact => {
            let xs: Vec<f64> = x.iter().cloned().collect();
            for k in 0..b {
                let col = sample_cpt_exact(law, z, &xs, seed.derive(k as u64 + 1))?;
                out.set_column(k, &col);
            }
        }
        CptSampler::PairSwap { steps } => {
            if steps == 0 {
                return Err(invalid("cpt steps must be at least 1"));
            }
            let means = law.means(z)?;
            if means.len() != n {
                return Err(invalid("x and z must have the same number of rows"));
            }
            let xs: Vec<f64> = x.iter().cloned().collect();
            let mut hub = PermutationState::observed(&xs);
            hub.run(&means, law.sigma2, steps, &mut seed.derive(0).rng());
            for k in 0..b {
                let mut state = hub.clone();
                state.run(&means, law.sigma2, steps, &mut seed.derive(k as u64 + 1).rng());
                out.set_column(k, &state.values());
            }
        }
    }
    Ok(out)
}
