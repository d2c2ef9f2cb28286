//! Robustness of the CRRT to a misspecified conditional law.
//!
//! With `x ~ Q*` (truth) and pseudo columns drawn from `Q`, write
//! `D(u) = Q*(u | z) / Q(u | z)` and
//!
//! ```text
//! KL_k = log D(x) - log D(x^(k)),   k = 1..b
//! ```
//!
//! The bounds below control the type-1 error on events where the ordered
//! `KL_(k)` are bounded. Likelihood ratios are handled in log space; the
//! only exponentiations are of log-ratio differences, which are clamped to
//! `[-700, 700]` first.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::model::{critical_count, rank_p_value, StatisticVector};
use crate::rng::{tags, SeedStream};
use crate::samplers::{sample_pseudo_columns, ConditionalGaussianLaw};
use crate::statistics::likelihood::likelihood_ratio_scores;

pub const LOG_CLAMP: f64 = 700.0;

pub fn clamp_log(v: f64) -> f64 {
    v.clamp(-LOG_CLAMP, LOG_CLAMP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlVector {
    pub khat: Vec<f64>,
    pub ordered: Vec<f64>,
}

impl KlVector {
    pub fn from_values(khat: Vec<f64>) -> Self {
        let mut ordered = khat.clone();
        ordered.sort_by(|a, b| a.total_cmp(b));
        KlVector { khat, ordered }
    }

    pub fn b(&self) -> usize {
        self.khat.len()
    }
}

/// `KL_k` for every pseudo column.
pub fn khat_kl(
    x: &DVector<f64>,
    pseudo: &DMatrix<f64>,
    z: &DMatrix<f64>,
    star: &ConditionalGaussianLaw,
    proposal: &ConditionalGaussianLaw,
) -> Result<KlVector> {
    if x.len() != pseudo.nrows() {
        return Err(invalid("x and pseudo columns differ in length"));
    }
    let log_x = likelihood_ratio_scores(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()), z, star, proposal)?[0];
    let log_pseudo = likelihood_ratio_scores(pseudo, z, star, proposal)?;
    Ok(KlVector::from_values(log_pseudo.iter().map(|l| log_x - l).collect()))
}

/// `KL(N(m1, v1) || N(m2, v2))`.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    let d = m1 - m2;
    0.5 * ((v2 / v1).ln() + (v1 + d * d) / v2 - 1.0)
}

/// `sqrt(0.5 * sum_i KL(Q*(. | z_i) || Q(. | z_i)))`, the Pinsker bound on the
/// total variation between the two n-row conditional laws.
pub fn pinsker_tv_bound(star: &ConditionalGaussianLaw, proposal: &ConditionalGaussianLaw, z: &DMatrix<f64>) -> Result<f64> {
    let ms = star.means(z)?;
    let mq = proposal.means(z)?;
    let kl: f64 = ms.iter().zip(mq.iter()).map(|(&a, &b)| gaussian_kl(a, star.sigma2, b, proposal.sigma2)).sum();
    Ok((0.5 * kl.max(0.0)).sqrt())
}

/// Per-order-statistic tolerances `eps_k` (upper) and optionally `eta_k`
/// (lower) on `KL_(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSpec {
    pub epsilons: Vec<f64>,
    pub etas: Option<Vec<f64>>,
    pub alpha: f64,
}

impl BoundSpec {
    pub fn constant(b: usize, epsilon: f64, alpha: f64) -> Self {
        BoundSpec { epsilons: vec![epsilon; b], etas: None, alpha }
    }

    pub fn validate(&self, b: usize) -> Result<()> {
        if self.epsilons.len() != b {
            return Err(invalid(format!("need {b} epsilons, got {}", self.epsilons.len())));
        }
        if self.epsilons.iter().any(|e| e.is_nan()) {
            return Err(invalid("epsilons must not be NaN"));
        }
        if let Some(etas) = &self.etas {
            if etas.len() != b {
                return Err(invalid(format!("need {b} etas, got {}", etas.len())));
            }
            if etas.iter().zip(&self.epsilons).any(|(h, e)| h.is_nan() || h > e) {
                return Err(invalid("each eta_k must be at most eps_k"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    fn etas(&self) -> Vec<f64> {
        self.etas.clone().unwrap_or_else(|| vec![f64::NEG_INFINITY; self.epsilons.len()])
    }

    /// `true` when `eta_k <= KL_(k) <= eps_k` for every k.
    pub fn holds(&self, kl: &KlVector) -> bool {
        let etas = self.etas();
        kl.ordered.iter().zip(&self.epsilons).zip(&etas).all(|((v, e), h)| h <= v && v <= e)
    }
}

fn sum_exp_neg(v: &[f64]) -> f64 {
    v.iter().map(|&e| (-e).exp()).sum()
}

/// `floor((b + 1) alpha) / (1 + sum_k exp(-eps_k))`, capped at 1.
pub fn theorem3_bound(spec: &BoundSpec, b: usize) -> Result<f64> {
    spec.validate(b)?;
    let lambda = critical_count(spec.alpha, b + 1) as f64;
    Ok((lambda / (1.0 + sum_exp_neg(&spec.epsilons))).min(1.0))
}

fn ratio_term(i: f64, denominator_rest: f64) -> f64 {
    if i == 0.0 {
        0.0
    } else {
        i / (i + denominator_rest)
    }
}

/// Conditional bound given the unordered columns.
///
/// `columns` holds the real column first and the `b` pseudo columns after
/// it; `statistics` are their X-symmetric scores. Columns are relabelled
/// `u_0, ..., u_b` in decreasing order of score, so `u_(s-1)` is the column
/// that would make `T_0` rank `s`-th. With `L(u) = log D(u)` and the
/// remaining log ratios sorted ascending as `L^s_(1) <= ... <= L^s_(b)`,
///
/// ```text
/// I(s) = 1{ eta_k <= L(u_(s-1)) - L^(s-1)_(b+1-k) <= eps_k  for all k }
/// M1   = sum_{s <= lambda} I(s) / (I(s) + sum_k exp(-eps_k))
/// M2   = 1 - sum_{s > lambda} I(s) / (I(s) + sum_k exp(-eta_k))
/// ```
///
/// and the bound is `min(M1, M2)`, with `0 / 0` read as 0.
pub fn theorem6_bound(
    columns: &DMatrix<f64>,
    statistics: &StatisticVector,
    z: &DMatrix<f64>,
    star: &ConditionalGaussianLaw,
    proposal: &ConditionalGaussianLaw,
    spec: &BoundSpec,
) -> Result<f64> {
    let b = columns.ncols().saturating_sub(1);
    spec.validate(b)?;
    if statistics.values().len() != b + 1 {
        return Err(invalid("statistics and columns differ in count"));
    }
    let log_d = likelihood_ratio_scores(columns, z, star, proposal)?;
    let t = statistics.values();
    let mut order: Vec<usize> = (0..=b).collect();
    order.sort_by(|&i, &j| t[j].total_cmp(&t[i]).then(i.cmp(&j)));
    let etas = spec.etas();
    let lambda = critical_count(spec.alpha, b + 1);
    let sum_eps = sum_exp_neg(&spec.epsilons);
    let sum_eta = sum_exp_neg(&etas);
    let mut m1 = 0.0;
    let mut m2 = 1.0;
    for s in 1..=b + 1 {
        let u = order[s - 1];
        let mut others: Vec<f64> = (0..=b).filter(|&k| k != u).map(|k| log_d[k]).collect();
        others.sort_by(|a, c| a.total_cmp(c));
        let holds = (1..=b).all(|k| {
            let diff = clamp_log(log_d[u] - others[b - k]);
            etas[k - 1] <= diff && diff <= spec.epsilons[k - 1]
        });
        let i = if holds { 1.0 } else { 0.0 };
        if s <= lambda {
            m1 += ratio_term(i, sum_eps);
        } else {
            m2 -= ratio_term(i, sum_eta);
        }
    }
    Ok(m1.min(m2).clamp(0.0, 1.0))
}

/// `lambda / (b + 1) + c (1 - lambda / (b + 1)) (1 - exp(-eps))`.
pub fn theorem5_lower_bound(c: f64, b: usize, alpha: f64, epsilon: f64) -> f64 {
    let base = critical_count(alpha, b + 1) as f64 / (b + 1) as f64;
    base + c * (1.0 - base) * (1.0 - (-epsilon).exp())
}

/// Event of the Theorem-5 condition: all `KL_k >= 0` and `KL_(lambda) >= eps`.
pub fn theorem5_event(kl: &KlVector, alpha: f64, epsilon: f64) -> bool {
    let lambda = critical_count(alpha, kl.b() + 1);
    kl.khat.iter().all(|&v| v >= 0.0) && (lambda == 0 || kl.ordered[lambda - 1] >= epsilon)
}

/// Monte-Carlo setting: `x ~ star`, pseudo columns from `proposal`, fixed
/// `z`, and the likelihood-ratio statistic `T_k = log D(x^(k))`.
#[derive(Debug, Clone)]
pub struct RobustnessSetting {
    pub star: ConditionalGaussianLaw,
    pub proposal: ConditionalGaussianLaw,
    pub z: DMatrix<f64>,
    pub b: usize,
    pub alpha: f64,
}

/// One replication of the setting.
pub struct Draw {
    pub columns: DMatrix<f64>,
    pub statistics: StatisticVector,
    pub kl: KlVector,
    pub reject: bool,
}

impl RobustnessSetting {
    /// Mean-shift instance with `z` of width zero: `Q* = N(0, sigma2)`,
    /// `Q = N(shift, sigma2)`.
    pub fn mean_shift(n: usize, shift: f64, sigma2: f64, b: usize, alpha: f64) -> Result<Self> {
        let star = ConditionalGaussianLaw::with_link(0.0, DVector::zeros(0), sigma2, Default::default())?;
        let proposal = ConditionalGaussianLaw::with_link(shift, DVector::zeros(0), sigma2, Default::default())?;
        Ok(RobustnessSetting { star, proposal, z: DMatrix::zeros(n, 0), b, alpha })
    }

    pub fn draw(&self, seed: SeedStream) -> Result<Draw> {
        let x = self.star.sample(&self.z, seed.derive(tags::DATA))?;
        let pseudo = sample_pseudo_columns(&self.proposal, &self.z, self.b, seed.derive(tags::PSEUDO))?;
        let mut columns = DMatrix::zeros(x.len(), self.b + 1);
        columns.set_column(0, &x);
        columns.view_mut((0, 1), (x.len(), self.b)).copy_from(&pseudo);
        let log_d = likelihood_ratio_scores(&columns, &self.z, &self.star, &self.proposal)?;
        let kl = KlVector::from_values(log_d[1..].iter().map(|l| log_d[0] - l).collect());
        let statistics = StatisticVector::new(log_d)?;
        let reject = rank_p_value(&statistics).rejects(self.alpha);
        Ok(Draw { columns, statistics, kl, reject })
    }

    fn draws<T: Send>(&self, reps: usize, seed: SeedStream, f: impl Fn(Draw) -> Result<T> + Sync) -> Result<Vec<T>> {
        (0..reps)
            .into_par_iter()
            .map(|r| f(self.draw(seed.derive2(tags::REPLICATION, r as u64))?))
            .collect()
    }
}

/// Empirical probability with its binomial standard error next to a bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub estimate: f64,
    pub stderr: f64,
    pub bound: f64,
    pub reps: usize,
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Estimates `P(p <= alpha and KL_(k) <= eps_k for all k)` next to the
/// Theorem-3 bound.
pub fn theorem3_check(setting: &RobustnessSetting, spec: &BoundSpec, reps: usize, seed: SeedStream) -> Result<BoundCheck> {
    let bound = theorem3_bound(spec, setting.b)?;
    let hits = setting.draws(reps, seed, |d| Ok(if d.reject && spec.holds(&d.kl) { 1.0 } else { 0.0 }))?;
    let (estimate, stderr) = mean_and_se(&hits);
    Ok(BoundCheck { estimate, stderr, bound, reps })
}

/// Estimates `P(p <= alpha and eta_k <= KL_(k) <= eps_k for all k)` next to
/// the replication average of the conditional Theorem-6 bound.
pub fn theorem6_check(setting: &RobustnessSetting, spec: &BoundSpec, reps: usize, seed: SeedStream) -> Result<BoundCheck> {
    spec.validate(setting.b)?;
    let pairs = setting.draws(reps, seed, |d| {
        let hit = if d.reject && spec.holds(&d.kl) { 1.0 } else { 0.0 };
        let bound = theorem6_bound(&d.columns, &d.statistics, &setting.z, &setting.star, &setting.proposal, spec)?;
        Ok((hit, bound))
    })?;
    let hits: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let (estimate, stderr) = mean_and_se(&hits);
    let bound = pairs.iter().map(|p| p.1).sum::<f64>() / reps as f64;
    Ok(BoundCheck { estimate, stderr, bound, reps })
}

/// Theorem-5 comparison: the empirical type-1 error against the lower
/// bound built from the estimated `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBoundCheck {
    pub type1: f64,
    pub type1_stderr: f64,
    pub c_hat: f64,
    pub bound: f64,
    /// Standard error of `type1 - bound` from the paired replications.
    pub gap_stderr: f64,
    pub reps: usize,
}

pub fn theorem5_check(setting: &RobustnessSetting, epsilon: f64, reps: usize, seed: SeedStream) -> Result<LowerBoundCheck> {
    if reps < 2 {
        return Err(invalid("need at least two replications"));
    }
    let outcomes = setting.draws(reps, seed, |d| {
        Ok((if d.reject { 1.0 } else { 0.0 }, if theorem5_event(&d.kl, setting.alpha, epsilon) { 1.0 } else { 0.0 }))
    })?;
    let rejects: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let events: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let (type1, type1_stderr) = mean_and_se(&rejects);
    let (c_hat, _) = mean_and_se(&events);
    let bound = theorem5_lower_bound(c_hat, setting.b, setting.alpha, epsilon);
    let slope = theorem5_lower_bound(1.0, setting.b, setting.alpha, epsilon) - theorem5_lower_bound(0.0, setting.b, setting.alpha, epsilon);
    let gaps: Vec<f64> = outcomes.iter().map(|o| o.0 - slope * o.1).collect();
    let (_, gap_stderr) = mean_and_se(&gaps);
    Ok(LowerBoundCheck { type1, type1_stderr, c_hat, bound, gap_stderr, reps })
}
