//! Monte-Carlo oracles: null validity of every method, exchangeability in
//! distribution of the joint statistics, and consistency of the learners.

mod common;

use cit_rank::bench::{apply_misspecification, run_experiment, sweep_b, ExperimentConfig, Misspecification};
use cit_rank::model::{rank_p_value, Dataset, Response, ResponseKind};
use cit_rank::procedures::{run_test, Method, TestSpec};
use cit_rank::rng::SeedStream;
use cit_rank::robustness::khat_kl;
use cit_rank::samplers::{sample_pseudo_columns, ConditionalGaussianLaw};
use cit_rank::statistics::lasso::log_grid;
use cit_rank::statistics::{
    cv_lasso, distill, fit_lasso, lambda_max, scaled_lasso, CvOptions, ForestParams, ForestStatistic, JointStatistic, LassoOptions,
    LassoStatistic, Learner, OlsStatistic, StatisticSpec,
};
use common::{ar1_instance, binomial_se, normal_matrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn null_rate(spec: &TestSpec, reps: usize, n: usize, p: usize, seed: u64) -> f64 {
    let rejects = (0..reps)
        .into_par_iter()
        .filter(|&r| {
            let (data, law) = ar1_instance(n, p, 0.5, 0.0, seed * 100_000 + r as u64);
            run_test(&data, &law, spec, r as u64).unwrap().reject
        })
        .count();
    rejects as f64 / reps as f64
}

fn assert_valid(rate: f64, alpha: f64, reps: usize, what: &str) {
    let limit = alpha + 3.0 * binomial_se(alpha, reps);
    assert!(rate <= limit, "{what}: type-1 error {rate} exceeds {limit}");
}

/// Chi-square goodness-of-fit p-value of `ranks` (0-based) against the
/// uniform law on `0..cells`.
fn uniformity_p(ranks: &[usize], cells: usize) -> f64 {
    let mut counts = vec![0usize; cells];
    for &r in ranks {
        counts[r] += 1;
    }
    let expected = ranks.len() as f64 / cells as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

/// Rank of `T_0` (0 = largest, ties broken towards the bottom).
fn rank_of_first(t: &[f64]) -> usize {
    t[1..].iter().filter(|&&v| v >= t[0]).count()
}

/// Rank of `T_0` with ties broken uniformly at random.
fn random_rank_of_first(t: &[f64], seed: SeedStream) -> usize {
    let above = t[1..].iter().filter(|&&v| v > t[0]).count();
    let tied = t[1..].iter().filter(|&&v| v == t[0]).count();
    above + seed.rng().random_range(0..=tied)
}

fn joint_ranks(stat: &dyn JointStatistic, reps: usize, n: usize, p: usize, b: usize, seed: u64) -> Vec<usize> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let (data, law) = ar1_instance(n, p, 0.5, 0.0, seed * 100_000 + r as u64);
            let s = SeedStream::new(r as u64);
            let pseudo = sample_pseudo_columns(&law, &data.z, b, s.derive(1)).unwrap();
            let mut design = DMatrix::zeros(n, b + 1);
            design.set_column(0, &data.x);
            design.view_mut((0, 1), (n, b)).copy_from(&pseudo);
            random_rank_of_first(stat.scores(&data.y, &data.z, &design, s.derive(2)).unwrap().as_slice(), s.derive(3))
        })
        .collect()
}

#[test]
fn every_method_is_valid_under_the_null() {
    let reps = 2000;
    let cases = [
        (Method::Crrt, StatisticSpec::Ols, 1),
        (Method::CrrtK, StatisticSpec::Ols, 4),
        (Method::Crt, StatisticSpec::Ols, 1),
        (Method::Cpt, StatisticSpec::Ols, 1),
        (Method::Cprt, StatisticSpec::Ols, 1),
        (Method::Dcrt, StatisticSpec::Lasso { lambda: None }, 1),
        (Method::Hrt, StatisticSpec::Ols, 1),
    ];
    for (method, stat, k) in cases {
        let mut spec = TestSpec::new(method, stat, 19);
        spec.folds_k = k;
        spec.cpt_steps = Some(20);
        for alpha in [0.05, 0.1] {
            spec.alpha = alpha;
            let rate = null_rate(&spec, reps, 40, 3, 1);
            assert_valid(rate, alpha, reps, &spec.label());
        }
    }
}

#[test]
fn crrt_k_is_valid_for_every_fold_count() {
    for k in [2, 5, 10] {
        let mut spec = TestSpec::new(Method::CrrtK, StatisticSpec::Ols, 19);
        spec.folds_k = k;
        assert_valid(null_rate(&spec, 2000, 40, 3, 2), 0.05, 2000, &spec.label());
    }
}

#[test]
fn lasso_based_methods_are_valid_under_the_null() {
    let crt = TestSpec::new(Method::Crt, StatisticSpec::Lasso { lambda: None }, 99);
    assert_valid(null_rate(&crt, 500, 40, 3, 3), 0.05, 500, "crt lasso");
    let hrt = TestSpec::new(Method::Hrt, StatisticSpec::Lasso { lambda: None }, 99);
    assert_valid(null_rate(&hrt, 500, 60, 5, 4), 0.05, 500, "hrt lasso");
    let dcrt = TestSpec::new(Method::Dcrt, StatisticSpec::Lasso { lambda: None }, 99);
    assert_valid(null_rate(&dcrt, 500, 60, 5, 5), 0.05, 500, "dcrt lasso");
}

#[test]
fn cpt_with_independent_law_is_a_permutation_test() {
    let reps = 1000;
    let law = ConditionalGaussianLaw::new(DVector::zeros(3), 1.0).unwrap();
    let spec = TestSpec { cpt_steps: Some(10), ..TestSpec::new(Method::Cpt, StatisticSpec::Ols, 19) };
    let rejects = (0..reps)
        .into_par_iter()
        .filter(|&r| {
            let s = SeedStream::new(600 + r as u64);
            let z = normal_matrix(30, 3, s.derive(1));
            let x = law.sample(&z, s.derive(2)).unwrap();
            let y = z.column(0) * 2.0 + normal_matrix(30, 1, s.derive(3)).column(0);
            let data = Dataset::new(Response::continuous(y), z, x).unwrap();
            run_test(&data, &law, &spec, r as u64).unwrap().reject
        })
        .count();
    assert_valid(rejects as f64 / reps as f64, 0.05, reps, "cpt with zeta = 0");
}

#[test]
fn exact_cpt_is_valid_at_tiny_n() {
    let reps = 1000;
    for method in [Method::Cpt, Method::Cprt] {
        let mut spec = TestSpec::new(method, StatisticSpec::Lasso { lambda: Some(0.1) }, 19);
        spec.cpt_exact = true;
        spec.alpha = 0.1;
        assert_valid(null_rate(&spec, reps, 6, 1, 6), 0.1, reps, &spec.label());
    }
}

#[test]
fn sweep_over_b_keeps_null_cells_valid() {
    let cfg = ExperimentConfig {
        n: 80,
        p: 10,
        sparsity: 5,
        beta0_grid: vec![0.0],
        methods: vec![TestSpec::new(Method::Crrt, StatisticSpec::Lasso { lambda: Some(0.1) }, 19)],
        reps: 200,
        seed: 7,
        ..ExperimentConfig::default()
    };
    let rows = sweep_b(&cfg, &[19, 99, 199]).unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_valid(row.rejection_rate, 0.05, row.reps, &format!("b = {}", row.b));
    }
}

#[test]
fn joint_lasso_rank_is_uniform_under_the_null() {
    let ranks = joint_ranks(&LassoStatistic::cross_validated(), 2000, 50, 5, 9, 8);
    let p = uniformity_p(&ranks, 10);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn forest_importance_rank_is_uniform_under_the_null() {
    let stat = ForestStatistic { params: ForestParams { trees: 30, ..Default::default() } };
    let ranks = joint_ranks(&stat, 500, 60, 3, 9, 9);
    let p = uniformity_p(&ranks, 10);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn joint_lasso_favours_the_real_column_under_signal() {
    let reps = 200;
    let gaps: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (data, law) = ar1_instance(100, 10, 0.5, 0.3, 900_000 + r as u64);
            let s = SeedStream::new(r as u64);
            let pseudo = sample_pseudo_columns(&law, &data.z, 9, s.derive(1)).unwrap();
            let mut design = DMatrix::zeros(100, 10);
            design.set_column(0, &data.x);
            design.view_mut((0, 1), (100, 9)).copy_from(&pseudo);
            let t = LassoStatistic::cross_validated().scores(&data.y, &data.z, &design, s.derive(2)).unwrap();
            t[0] - t[1..].iter().sum::<f64>() / 9.0
        })
        .collect();
    assert!(gaps.iter().sum::<f64>() > 0.0);
}

#[test]
fn forest_finds_a_threshold_signal() {
    let runs = 20;
    let n = 500;
    let wins = (0..runs)
        .into_par_iter()
        .filter(|&r| {
            let s = SeedStream::new(1000 + r as u64);
            let z = normal_matrix(n, 3, s.derive(1));
            let design = normal_matrix(n, 10, s.derive(2));
            let y = DVector::from_iterator(n, design.column(0).iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }));
            let y = Response::new(y, ResponseKind::Binary).unwrap();
            let stat = ForestStatistic { params: ForestParams::default() };
            let t = stat.scores(&y, &z, &design, s.derive(3)).unwrap();
            rank_of_first(&t) == 0
        })
        .count();
    assert!(wins as f64 >= 0.95 * runs as f64, "{wins}/{runs}");
}

#[test]
fn more_trees_shrink_importance_variance() {
    let n = 100;
    let s = SeedStream::new(11);
    let z = normal_matrix(n, 3, s.derive(1));
    let design = normal_matrix(n, 2, s.derive(2));
    let y = Response::continuous(&design.column(0) * 1.0 + normal_matrix(n, 1, s.derive(3)).column(0));
    let variance = |trees: usize| {
        let stat = ForestStatistic { params: ForestParams { trees, ..Default::default() } };
        let v: Vec<f64> = (0..30).map(|r| stat.scores(&y, &z, &design, s.derive2(4, r)).unwrap()[0]).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (v1, v10, v100) = (variance(1), variance(10), variance(100));
    assert!(v1 > v10 && v10 > v100, "{v1} {v10} {v100}");
}

#[test]
fn cv_prefers_heavy_shrinkage_on_noise() {
    let grid_len = 50;
    let hits = (0..100u64)
        .into_par_iter()
        .filter(|&r| {
            let s = SeedStream::new(1200 + r);
            let x = normal_matrix(100, 10, s.derive(1));
            let y = normal_matrix(100, 1, s.derive(2)).column(0).into_owned();
            let fit = cv_lasso(&x, &y, &CvOptions::default(), s.derive(3)).unwrap();
            let grid = log_grid(lambda_max(&x, &y, true).unwrap(), 1e-3, grid_len);
            grid.iter().position(|&l| l == fit.lambda).unwrap() < grid_len / 5
        })
        .count();
    assert!(hits >= 80, "{hits}/100");
}

#[test]
fn cv_keeps_a_strong_signal() {
    let kept = (0..100u64)
        .into_par_iter()
        .filter(|&r| {
            let s = SeedStream::new(1300 + r);
            let x = normal_matrix(200, 5, s.derive(1));
            let y = &x.column(0) * 10.0 + normal_matrix(200, 1, s.derive(2)).column(0);
            cv_lasso(&x, &y, &CvOptions::default(), s.derive(3)).unwrap().coefficients[0] != 0.0
        })
        .count();
    assert!(kept >= 99, "{kept}/100");
}

#[test]
fn ols_statistic_equals_lasso_at_zero_penalty() {
    let (data, law) = ar1_instance(80, 4, 0.3, 0.5, 14);
    let pseudo = sample_pseudo_columns(&law, &data.z, 4, SeedStream::new(1)).unwrap();
    let mut design = DMatrix::zeros(80, 5);
    design.set_column(0, &data.x);
    design.view_mut((0, 1), (80, 4)).copy_from(&pseudo);
    let ols = OlsStatistic.scores(&data.y, &data.z, &design, SeedStream::new(2)).unwrap();
    let lasso = LassoStatistic::fixed(0.0).scores(&data.y, &data.z, &design, SeedStream::new(2)).unwrap();
    for (a, b) in ols.iter().zip(&lasso) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn distillation_keeps_the_large_coefficients() {
    let runs = 40;
    let n = 400;
    let law = ConditionalGaussianLaw::new(DVector::zeros(20), 1.0).unwrap();
    let hits = (0..runs)
        .into_par_iter()
        .filter(|&r| {
            let s = SeedStream::new(1500 + r as u64);
            let z = normal_matrix(n, 20, s.derive(1));
            let y = &z.column(4) * 2.0 - &z.column(11) * 1.5 + normal_matrix(n, 1, s.derive(2)).column(0);
            let dist = distill(&Response::continuous(y), &z, &law, 2, &Learner::Lasso, &CvOptions::default(), s.derive(3)).unwrap();
            dist.kept == vec![4, 11]
        })
        .count();
    assert!(hits as f64 >= 0.95 * runs as f64, "{hits}/{runs}");
}

#[test]
fn scaled_lasso_is_consistent_at_large_n() {
    let runs = 10;
    let good = (0..runs)
        .into_par_iter()
        .filter(|&r| {
            let s = SeedStream::new(1600 + r as u64);
            let z = normal_matrix(5000, 100, s.derive(1));
            let noise = normal_matrix(5000, 1, s.derive(2)) * 0.75f64.sqrt();
            let x = &z.column(0) * 0.5 + noise.column(0);
            let fit = scaled_lasso(&z, &x, &LassoOptions::default()).unwrap();
            let mut truth = DVector::zeros(100);
            truth[0] = 0.5;
            (0.70..=0.80).contains(&fit.sigma2) && (&fit.zeta - truth).norm() <= 0.1
        })
        .count();
    assert!(good as f64 >= 0.9 * runs as f64, "{good}/{runs}");
}

#[test]
fn scaled_lasso_on_noise_recovers_unit_variance() {
    let s = SeedStream::new(1700);
    let z = normal_matrix(2000, 20, s.derive(1));
    let y = normal_matrix(2000, 1, s.derive(2)).column(0).into_owned();
    let fit = scaled_lasso(&z, &y, &LassoOptions::default()).unwrap();
    assert!((0.9..=1.1).contains(&fit.sigma2), "sigma2 = {}", fit.sigma2);
    assert!(fit.zeta.amax() < 0.05);
}

#[test]
fn unlabeled_fits_concentrate_kl_with_more_rows() {
    let runs = 20;
    let mean_abs_kl = |n_unlabeled: usize, r: u64| {
        let s = SeedStream::new(1800 + r);
        let d = apply_misspecification(Misspecification::Unlabeled { n: n_unlabeled }, 100, 20, 0.5, s).unwrap();
        let pseudo = sample_pseudo_columns(&d.proposal, &d.z, 9, s.derive(1)).unwrap();
        let kl = khat_kl(&d.x, &pseudo, &d.z, &d.truth, &d.proposal).unwrap();
        kl.khat.iter().map(|v| v.abs()).sum::<f64>() / 9.0
    };
    let better = (0..runs as u64).into_par_iter().filter(|&r| mean_abs_kl(5000, r) < mean_abs_kl(250, r)).count();
    assert!(better as f64 >= 0.9 * runs as f64, "{better}/{runs}");
}

#[test]
fn linear_model_power_ordering() {
    let specs = vec![
        TestSpec::new(Method::Crrt, StatisticSpec::Lasso { lambda: None }, 99),
        TestSpec { folds_k: 2, ..TestSpec::new(Method::CrrtK, StatisticSpec::Lasso { lambda: None }, 99) },
        TestSpec::new(Method::Dcrt, StatisticSpec::Lasso { lambda: None }, 99),
        TestSpec::new(Method::Hrt, StatisticSpec::Lasso { lambda: None }, 99),
    ];
    let cfg = ExperimentConfig { beta0_grid: vec![0.2], methods: specs, reps: 200, seed: 19, ..ExperimentConfig::default() };
    let rows = run_experiment(&cfg).unwrap();
    let rate = |m: &str| rows.iter().find(|r| r.method == m).unwrap().rejection_rate;
    assert!(rate("hrt") < rate("crrt"), "hrt {} vs crrt {}", rate("hrt"), rate("crrt"));
    assert!((rate("d0crt") - rate("crrt-2")).abs() <= 0.15, "d0crt {} vs crrt-2 {}", rate("d0crt"), rate("crrt-2"));
}

#[test]
fn crrt_rejection_granularity_follows_b() {
    let (data, law) = ar1_instance(60, 3, 0.5, 0.0, 20);
    for b in [19, 199] {
        let r = run_test(&data, &law, &TestSpec::new(Method::Crrt, StatisticSpec::Lasso { lambda: Some(0.1) }, b), 1).unwrap();
        assert_eq!(r.p_value.denominator(), b + 1);
        assert_eq!(r.p_value, rank_p_value(&r.statistics));
    }
}

#[test]
fn fixed_penalty_matches_the_direct_fit() {
    let s = SeedStream::new(21);
    let x = normal_matrix(50, 6, s.derive(1));
    let y = x.column(2) * 1.0 + normal_matrix(50, 1, s.derive(2)).column(0);
    let cv = CvOptions { grid: Some(vec![0.05]), ..Default::default() };
    let a = cv_lasso(&x, &y, &cv, s.derive(3)).unwrap();
    let b = fit_lasso(&x, &y, 0.05, &LassoOptions::default()).unwrap();
    assert_eq!(a.coefficients, b.coefficients);
}
