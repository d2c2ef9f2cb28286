//! Monte-Carlo experiments: data generation, misspecification and the
//! replication runner.
//!
//! A run covers every cell `misspec x beta0` of the config. Within a cell,
//! replication `r` draws one dataset that all methods share, so method
//! comparisons are paired; the same design and noise are reused across the
//! `beta0` grid.

pub mod misspec;
pub mod models;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::model::Dataset;
use crate::procedures::{run_test, Method, TestSpec};
use crate::rng::{tags, SeedStream};
use crate::samplers::ConditionalGaussianLaw;
use crate::statistics::StatisticSpec;

pub use misspec::{apply_misspecification, Misspecification, MisspecifiedDesign};
pub use models::{generate_response, make_coefficients, Coefficients, ResponseModel};

/// Largest tolerated share of failed replications per cell and method.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ResponseModel,
    pub n: usize,
    pub p: usize,
    /// AR(1) coefficient of `(X, Z)`.
    pub rho: f64,
    pub beta0_grid: Vec<f64>,
    /// Non-zero entries of each coefficient vector.
    pub sparsity: usize,
    pub effect: f64,
    pub methods: Vec<TestSpec>,
    pub misspec: Vec<Misspecification>,
    pub reps: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ResponseModel::Linear,
            n: 200,
            p: 50,
            rho: 0.5,
            beta0_grid: vec![0.0, 0.1, 0.2, 0.3],
            sparsity: 20,
            effect: 0.5,
            methods: vec![TestSpec::new(Method::Crrt, StatisticSpec::Lasso { lambda: None }, 99)],
            misspec: vec![Misspecification::None],
            reps: 200,
            seed: 1,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sizes used in the original study: n = 400, p = 100, b = 199.
    pub fn paper_scale(mut self) -> Self {
        self.n = 400;
        self.p = 100;
        for m in &mut self.methods {
            m.b = 199;
            if m.method == Method::CrrtK && 200 % m.folds_k != 0 {
                m.folds_k = 1;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(config("reps must be at least 1"));
        }
        if self.beta0_grid.is_empty() || self.methods.is_empty() || self.misspec.is_empty() {
            return Err(config("beta0_grid, methods and misspec must be non-empty"));
        }
        if self.sparsity > self.p {
            return Err(config(format!("sparsity {} exceeds p = {}", self.sparsity, self.p)));
        }
        if self.n < 2 {
            return Err(config("n must be at least 2"));
        }
        for m in &self.methods {
            m.validate()?;
        }
        for m in &self.misspec {
            m.validate()?;
        }
        Ok(())
    }
}

/// One simulated dataset with the laws that generated it.
#[derive(Debug, Clone)]
pub struct Instance {
    pub data: Dataset,
    pub truth: ConditionalGaussianLaw,
    pub proposal: ConditionalGaussianLaw,
}

pub fn draw_instance(cfg: &ExperimentConfig, mechanism: Misspecification, beta0: f64, seed: SeedStream) -> Result<Instance> {
    let design = apply_misspecification(mechanism, cfg.n, cfg.p, cfg.rho, seed)?;
    let coefs = Coefficients::draw(cfg.p, cfg.sparsity, cfg.effect, seed.derive(tags::COEFFICIENTS))?;
    let y = generate_response(cfg.model, &design.x, &design.z, beta0, &coefs, seed.derive(tags::NOISE))?;
    Ok(Instance { data: Dataset::new(y, design.z, design.x)?, truth: design.truth, proposal: design.proposal })
}

/// Seed of replication `rep` under misspecification index `cell`.
pub fn replication_seed(root: u64, cell: usize, rep: usize) -> SeedStream {
    SeedStream::new(root).derive(cell as u64).derive2(tags::REPLICATION, rep as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub model: String,
    pub n: usize,
    pub p: usize,
    pub misspec: String,
    pub method: String,
    pub statistic: String,
    pub b: usize,
    pub alpha: f64,
    pub beta0: f64,
    pub reps: usize,
    pub failures: usize,
    pub rejection_rate: f64,
    pub stderr: f64,
    pub mean_elapsed_s: f64,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (mi, &mechanism) in cfg.misspec.iter().enumerate() {
        for &beta0 in &cfg.beta0_grid {
            // outcomes[rep][method] = Some((reject, seconds)) or None on failure
            let outcomes: Vec<Vec<Option<(bool, f64)>>> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| {
                    let seed = replication_seed(cfg.seed, mi, rep);
                    match draw_instance(cfg, mechanism, beta0, seed) {
                        Err(_) => vec![None; cfg.methods.len()],
                        Ok(inst) => {
                            let test_seed = seed.derive(tags::PSEUDO).seed();
                            cfg.methods
                                .iter()
                                .map(|spec| {
                                    run_test(&inst.data, &inst.proposal, spec, test_seed)
                                        .ok()
                                        .map(|r| (r.reject, r.elapsed.as_secs_f64()))
                                })
                                .collect()
                        }
                    }
                })
                .collect();
            for (k, spec) in cfg.methods.iter().enumerate() {
                let ok: Vec<(bool, f64)> = outcomes.iter().filter_map(|o| o[k]).collect();
                let failures = cfg.reps - ok.len();
                if failures as f64 > MAX_FAILURE_RATE * cfg.reps as f64 {
                    return Err(Error::TooManyFailures { failed: failures, total: cfg.reps });
                }
                let m = ok.len().max(1) as f64;
                let rate = ok.iter().filter(|o| o.0).count() as f64 / m;
                rows.push(ResultRow {
                    model: cfg.model.to_string(),
                    n: cfg.n,
                    p: cfg.p,
                    misspec: mechanism.to_string(),
                    method: spec.label(),
                    statistic: spec.statistic.to_string(),
                    b: spec.b,
                    alpha: spec.alpha,
                    beta0,
                    reps: ok.len(),
                    failures,
                    rejection_rate: rate,
                    stderr: (rate * (1.0 - rate) / m).sqrt(),
                    mean_elapsed_s: ok.iter().map(|o| o.1).sum::<f64>() / m,
                });
            }
        }
    }
    Ok(rows)
}

/// Runs the experiment once per entry of `bs`, overriding every method's `b`.
pub fn sweep_b(cfg: &ExperimentConfig, bs: &[usize]) -> Result<Vec<ResultRow>> {
    if bs.is_empty() {
        return Err(config("b list must be non-empty"));
    }
    let mut rows = Vec::new();
    for &b in bs {
        let mut variant = cfg.clone();
        for m in &mut variant.methods {
            m.b = b;
        }
        rows.extend(run_experiment(&variant)?);
    }
    Ok(rows)
}
