//! Multiple-knockoff selection from rank and gap scores.
//!
//! Each variable `j` has statistics `T_j^0` (the original) and
//! `T_j^1..T_j^b` (its knockoffs). Sorting them in decreasing order,
//! `T_j^(1) >= T_j^(2) >= ...`, gives
//!
//! ```text
//! r_j   = rank of T_j^0 (1 = largest), or b + 1 on any tie
//! tau_j = T_j^(1) - T_j^(2)
//! ```
//!
//! Selection with rank cut `l` keeps `{j : r_j <= l, tau_j >= t}` for the
//! smallest `t` among the `tau_j` with
//!
//! ```text
//! eta(l) (1 + #{r_j > l, tau_j >= t}) / (#{r_j <= l, tau_j >= t} v 1) <= alpha,
//! eta(l) = l / (b + 1 - l)
//! ```
//!
//! `l = 1` is the original multiple-knockoff filter; the modified filter takes
//! `l = floor((b + 1) alpha / (alpha + 1))`.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::critical_count;
use crate::rng::{tags, SeedStream};
use crate::samplers::{conditional_law_from_ar1, sample_ar1_rows, sample_pseudo_columns, Ar1Spec};
use crate::statistics::ols::ols_scores;

#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffScores {
    pub ranks: Vec<usize>,
    pub tau: Vec<f64>,
    pub b: usize,
}

impl KnockoffScores {
    pub fn new(ranks: Vec<usize>, tau: Vec<f64>, b: usize) -> Result<Self> {
        if ranks.len() != tau.len() {
            return Err(invalid("ranks and gaps differ in length"));
        }
        if b == 0 {
            return Err(invalid("b must be at least 1"));
        }
        if ranks.iter().any(|&r| r < 1 || r > b + 1) {
            return Err(invalid(format!("ranks must lie in 1..={}", b + 1)));
        }
        if tau.iter().any(|t| !(t >= &0.0) || !t.is_finite()) {
            return Err(invalid("gaps must be finite and non-negative"));
        }
        Ok(KnockoffScores { ranks, tau, b })
    }

    /// Scores from per-variable statistic sets, original first.
    pub fn from_statistics(stats: &[Vec<f64>]) -> Result<Self> {
        let b = stats.first().map_or(0, |s| s.len().saturating_sub(1));
        let mut ranks = Vec::with_capacity(stats.len());
        let mut tau = Vec::with_capacity(stats.len());
        for s in stats {
            if s.len() != b + 1 || s.iter().any(|v| !v.is_finite()) {
                return Err(invalid("every variable needs b + 1 finite statistics"));
            }
            let mut sorted = s.clone();
            sorted.sort_by(|a, c| c.total_cmp(a));
            let tied = sorted.windows(2).any(|w| w[0] == w[1]);
            ranks.push(if tied { b + 1 } else { 1 + s[1..].iter().filter(|&&v| v > s[0]).count() });
            tau.push(sorted[0] - sorted[1]);
        }
        KnockoffScores::new(ranks, tau, b)
    }

    pub fn p(&self) -> usize {
        self.ranks.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// `+inf` when nothing qualifies.
    pub threshold: f64,
    /// Zero-based indices, ascending.
    pub selected: Vec<usize>,
    pub lambda_tilde: usize,
    pub eta: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Selection with rank cut `lambda` (see the module docs).
pub fn select_with_cut(scores: &KnockoffScores, alpha: f64, lambda: usize) -> Result<SelectionResult> {
    check_alpha(alpha)?;
    let b = scores.b;
    if lambda == 0 {
        return Ok(SelectionResult { threshold: f64::INFINITY, selected: Vec::new(), lambda_tilde: 0, eta: 0.0 });
    }
    if lambda > b {
        return Err(invalid(format!("rank cut {lambda} exceeds b = {b}")));
    }
    let eta = lambda as f64 / (b + 1 - lambda) as f64;
    let mut candidates = scores.tau.clone();
    candidates.sort_by(|a, c| a.total_cmp(c));
    candidates.dedup();
    let threshold = candidates
        .into_iter()
        .find(|&t| {
            let (mut low, mut high) = (0usize, 0usize);
            for (&r, &g) in scores.ranks.iter().zip(&scores.tau) {
                if g >= t {
                    if r <= lambda {
                        low += 1;
                    } else {
                        high += 1;
                    }
                }
            }
            eta * (1 + high) as f64 <= alpha * low.max(1) as f64
        })
        .unwrap_or(f64::INFINITY);
    let selected = (0..scores.p())
        .filter(|&j| scores.ranks[j] <= lambda && scores.tau[j] >= threshold)
        .collect();
    Ok(SelectionResult { threshold, selected, lambda_tilde: lambda, eta })
}

/// The original multiple-knockoff filter (rank cut 1).
pub fn select_original(scores: &KnockoffScores, alpha: f64) -> Result<SelectionResult> {
    select_with_cut(scores, alpha, 1)
}

/// `floor((b + 1) alpha / (alpha + 1))`.
pub fn lambda_tilde(b: usize, alpha: f64) -> usize {
    critical_count(alpha / (alpha + 1.0), b + 1)
}

/// The modified filter with rank cut `lambda_tilde(b, alpha)`; an empty
/// selection with `lambda_tilde = 0` when the cut vanishes.
pub fn select_modified(scores: &KnockoffScores, alpha: f64) -> Result<SelectionResult> {
    check_alpha(alpha)?;
    select_with_cut(scores, alpha, lambda_tilde(scores.b, alpha))
}

/// `lambda_tilde / (b + 1)` where `r_j <= lambda_tilde`, 1 elsewhere.
pub fn one_bit_p_values(scores: &KnockoffScores, alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let l = lambda_tilde(scores.b, alpha);
    if l == 0 {
        return Err(invalid("lambda_tilde is zero; one-bit p-values are undefined"));
    }
    let low = l as f64 / (scores.b + 1) as f64;
    Ok(scores.ranks.iter().map(|&r| if r <= l { low } else { 1.0 }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdrMode {
    /// Null statistic sets are i.i.d. N(0, 1); non-null originals are
    /// shifted by `signal`. Null ranks are then uniform and independent of
    /// the sorted values.
    Claim2,
    /// Only `X_1` is scored: its knockoffs are drawn from `X_1 | X_-1` in a
    /// Gaussian AR(1) design and scored by joint OLS.
    SingleVar,
}

impl FromStr for FdrMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "claim2" => Ok(FdrMode::Claim2),
            "single-var" => Ok(FdrMode::SingleVar),
            _ => Err(invalid(format!("unknown knockoff mode '{s}' (expected claim2 or single-var)"))),
        }
    }
}

impl std::fmt::Display for FdrMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FdrMode::Claim2 => "claim2",
            FdrMode::SingleVar => "single-var",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdrConfig {
    pub mode: FdrMode,
    pub p: usize,
    pub b: usize,
    pub alpha: f64,
    /// Number of non-null variables (claim2); these are the first ones.
    pub nonnull: usize,
    /// Mean shift of non-null originals (claim2) or the coefficient of
    /// `X_1` (single-var; 0 makes it null).
    pub signal: f64,
    /// Rows per replication (single-var).
    pub n: usize,
    pub rho: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for FdrConfig {
    fn default() -> Self {
        FdrConfig {
            mode: FdrMode::Claim2,
            p: 50,
            b: 19,
            alpha: 0.2,
            nonnull: 10,
            signal: 3.0,
            n: 300,
            rho: 0.5,
            reps: 2000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdrEstimate {
    pub fdr: f64,
    pub fdr_stderr: f64,
    pub power: f64,
    pub power_stderr: f64,
    /// The same replications under the original filter.
    pub fdr_original: f64,
    pub power_original: f64,
    pub reps: usize,
}

fn claim2_scores(cfg: &FdrConfig, seed: SeedStream) -> Result<(KnockoffScores, Vec<bool>)> {
    let mut rng = seed.rng();
    let stats: Vec<Vec<f64>> = (0..cfg.p)
        .map(|j| {
            let shift = if j < cfg.nonnull { cfg.signal } else { 0.0 };
            (0..=cfg.b)
                .map(|k| rng.sample::<f64, _>(StandardNormal) + if k == 0 { shift } else { 0.0 })
                .collect()
        })
        .collect();
    let nonnull = (0..cfg.p).map(|j| j < cfg.nonnull).collect();
    Ok((KnockoffScores::from_statistics(&stats)?, nonnull))
}

fn single_var_scores(cfg: &FdrConfig, seed: SeedStream) -> Result<(KnockoffScores, Vec<bool>)> {
    let ar = Ar1Spec::new(cfg.p, cfg.rho)?;
    let (x, z) = sample_ar1_rows(ar, cfg.n, seed.derive(tags::DATA));
    let mut rng = seed.derive(tags::NOISE).rng();
    let y = DVector::from_fn(cfg.n, |i, _| {
        cfg.signal * x[i] + if z.ncols() > 0 { 0.5 * z[(i, 0)] } else { 0.0 } + rng.sample::<f64, _>(StandardNormal)
    });
    let law = conditional_law_from_ar1(ar);
    let copies = sample_pseudo_columns(&law, &z, cfg.b, seed.derive(tags::PSEUDO))?;
    let mut design = DMatrix::zeros(cfg.n, cfg.b + 1);
    design.set_column(0, &x);
    design.view_mut((0, 1), (cfg.n, cfg.b)).copy_from(&copies);
    let t = ols_scores(&y, &z, &design)?;
    Ok((KnockoffScores::from_statistics(&[t])?, vec![cfg.signal != 0.0]))
}

fn rates(selected: &[usize], nonnull: &[bool]) -> (f64, f64) {
    let false_hits = selected.iter().filter(|&&j| !nonnull[j]).count();
    let true_hits = selected.len() - false_hits;
    let total_nonnull = nonnull.iter().filter(|&&v| v).count();
    (
        false_hits as f64 / selected.len().max(1) as f64,
        true_hits as f64 / total_nonnull.max(1) as f64,
    )
}

fn mean_se(v: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let m = v.clone().sum::<f64>() / n as f64;
    let var = v.map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    (m, (var / n as f64).sqrt())
}

/// Empirical FDR and power of the modified filter (and, paired, of the
/// original filter) over `reps` replications.
pub fn simulate_fdr(cfg: &FdrConfig) -> Result<FdrEstimate> {
    check_alpha(cfg.alpha)?;
    if cfg.reps < 2 || cfg.p == 0 || cfg.b == 0 || cfg.nonnull > cfg.p {
        return Err(invalid("simulate_fdr needs reps >= 2, p >= 1, b >= 1 and nonnull <= p"));
    }
    let root = SeedStream::new(cfg.seed);
    let per_rep = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let seed = root.derive2(tags::REPLICATION, r as u64);
            let (scores, nonnull) = match cfg.mode {
                FdrMode::Claim2 => claim2_scores(cfg, seed)?,
                FdrMode::SingleVar => single_var_scores(cfg, seed)?,
            };
            let modified = rates(&select_modified(&scores, cfg.alpha)?.selected, &nonnull);
            let original = rates(&select_original(&scores, cfg.alpha)?.selected, &nonnull);
            Ok((modified, original))
        })
        .collect::<Result<Vec<_>>>()?;
    let (fdr, fdr_stderr) = mean_se(per_rep.iter().map(|r| r.0 .0), cfg.reps);
    let (power, power_stderr) = mean_se(per_rep.iter().map(|r| r.0 .1), cfg.reps);
    let (fdr_original, _) = mean_se(per_rep.iter().map(|r| r.1 .0), cfg.reps);
    let (power_original, _) = mean_se(per_rep.iter().map(|r| r.1 .1), cfg.reps);
    Ok(FdrEstimate { fdr, fdr_stderr, power, power_stderr, fdr_original, power_original, reps: cfg.reps })
}
