use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cit_rank::bench::{draw_instance, run_experiment, ExperimentConfig, Misspecification, ResponseModel};
use cit_rank::io::{read_dataset, read_law, write_dataset, write_law, write_reports, write_table};
use cit_rank::knockoffs::{simulate_fdr, FdrConfig, FdrMode};
use cit_rank::model::ResponseKind;
use cit_rank::procedures::{run_test, Method, TestSpec};
use cit_rank::rng::SeedStream;
use cit_rank::robustness::{khat_kl, pinsker_tv_bound, theorem3_check, theorem5_check, theorem6_check, BoundSpec, RobustnessSetting};
use cit_rank::statistics::StatisticSpec;
use cit_rank::{Error, Result};

#[derive(Parser)]
#[command(name = "cit-rank", version, about = "Conditional randomization rank tests for conditional independence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one test of X independent of Y given Z on a CSV dataset.
    Test(TestArgs),
    /// Robustness diagnostics on a Gaussian mean-shift instance.
    Robustness {
        #[command(subcommand)]
        which: RobustnessCommand,
    },
    /// Monte-Carlo FDR and power of the multiple-knockoff selection rules.
    KnockoffSim(KnockoffArgs),
    /// Run a Monte-Carlo experiment described by a TOML config.
    Simulate(SimulateArgs),
    /// Write one synthetic dataset and its proposal law.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, default_value = "crrt")]
    method: Method,
    /// ols, lasso, lasso:<lambda>, forest or forest:<trees>
    #[arg(long, default_value = "lasso")]
    stat: StatisticSpec,
    #[arg(long, default_value_t = 199)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    folds_k: usize,
    #[arg(long)]
    random_folds: bool,
    #[arg(long, default_value_t = 0)]
    keep_k: usize,
    #[arg(long, default_value_t = 0.5)]
    train_frac: f64,
    #[arg(long)]
    cpt_steps: Option<usize>,
    #[arg(long)]
    cpt_exact: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    data: PathBuf,
    /// TOML file with zeta (or zeta_path), sigma2 and optional intercept.
    #[arg(long)]
    law: PathBuf,
    /// continuous, binary or categorical:<classes>; inferred when absent.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<ResponseKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SettingArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Mean of the proposal; the true law is N(0, sigma2).
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 19)]
    b: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RobustnessCommand {
    /// KL estimates of one draw and the Pinsker bound.
    Khat(SettingArgs),
    /// Theorem-3 upper bound against its Monte-Carlo event probability.
    Bound3 {
        #[command(flatten)]
        setting: SettingArgs,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Theorem-6 upper bound against its Monte-Carlo event probability.
    Bound6 {
        #[command(flatten)]
        setting: SettingArgs,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = f64::NEG_INFINITY, allow_negative_numbers = true)]
        eta: f64,
    },
    /// Theorem-5 lower bound against the empirical type-1 error.
    Lower5 {
        #[command(flatten)]
        setting: SettingArgs,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
    },
}

#[derive(Args)]
struct KnockoffArgs {
    #[arg(long, default_value = "claim2")]
    mode: FdrMode,
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, default_value_t = 19)]
    b: usize,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out` in the config; stdout when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use n = 400, p = 100 and b = 199.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "linear")]
    model: ResponseModel,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    beta0: f64,
    /// Non-zero coefficients in the nuisance part; at most p, 20 by default.
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the proposal law.
    #[arg(long)]
    law_out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> std::result::Result<ResponseKind, String> {
    match s {
        "continuous" => Ok(ResponseKind::Continuous),
        "binary" => Ok(ResponseKind::Binary),
        _ => s
            .strip_prefix("categorical:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 2)
            .map(ResponseKind::Categorical)
            .ok_or_else(|| format!("unknown response kind '{s}'")),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct QuantityRow {
    quantity: String,
    value: f64,
    stderr: Option<f64>,
    reps: usize,
    seed: u64,
}

#[derive(Serialize)]
struct KnockoffRow {
    mode: String,
    alpha: f64,
    b: usize,
    fdr: f64,
    power: f64,
    stderr: f64,
}

fn run_test_command(args: TestArgs) -> Result<()> {
    let data = read_dataset(&args.data, args.kind)?;
    let law = read_law(&args.law)?;
    let spec = TestSpec {
        method: args.method,
        b: args.b,
        alpha: args.alpha,
        statistic: args.stat,
        folds_k: args.folds_k,
        random_folds: args.random_folds,
        keep_k: args.keep_k,
        train_fraction: args.train_frac,
        cpt_steps: args.cpt_steps,
        cpt_exact: args.cpt_exact,
    };
    let report = run_test(&data, &law, &spec, args.seed)?;
    write_reports(output(args.out.as_deref())?, &[report])
}

fn run_robustness(cmd: RobustnessCommand) -> Result<()> {
    let (s, rows) = match cmd {
        RobustnessCommand::Khat(s) => {
            let setting = RobustnessSetting::mean_shift(s.n, s.shift, s.sigma2, s.b, s.alpha)?;
            let draw = setting.draw(SeedStream::new(s.seed))?;
            let pseudo = draw.columns.columns(1, s.b).into_owned();
            let kl = khat_kl(&draw.columns.column(0).into_owned(), &pseudo, &setting.z, &setting.star, &setting.proposal)?;
            let mut rows: Vec<QuantityRow> = kl
                .khat
                .iter()
                .enumerate()
                .map(|(k, v)| QuantityRow { quantity: format!("khat_{}", k + 1), value: *v, stderr: None, reps: 1, seed: s.seed })
                .collect();
            let tv = pinsker_tv_bound(&setting.star, &setting.proposal, &setting.z)?;
            rows.push(QuantityRow { quantity: "pinsker_tv".into(), value: tv, stderr: None, reps: 1, seed: s.seed });
            (s, rows)
        }
        RobustnessCommand::Bound3 { setting: s, epsilon } => {
            let setting = RobustnessSetting::mean_shift(s.n, s.shift, s.sigma2, s.b, s.alpha)?;
            let spec = BoundSpec::constant(s.b, epsilon, s.alpha);
            let c = theorem3_check(&setting, &spec, s.reps, SeedStream::new(s.seed))?;
            let rows = vec![
                QuantityRow { quantity: "event_probability".into(), value: c.estimate, stderr: Some(c.stderr), reps: c.reps, seed: s.seed },
                QuantityRow { quantity: "bound3".into(), value: c.bound, stderr: None, reps: c.reps, seed: s.seed },
            ];
            (s, rows)
        }
        RobustnessCommand::Bound6 { setting: s, epsilon, eta } => {
            let setting = RobustnessSetting::mean_shift(s.n, s.shift, s.sigma2, s.b, s.alpha)?;
            let spec = BoundSpec { epsilons: vec![epsilon; s.b], etas: Some(vec![eta; s.b]), alpha: s.alpha };
            let c = theorem6_check(&setting, &spec, s.reps, SeedStream::new(s.seed))?;
            let rows = vec![
                QuantityRow { quantity: "event_probability".into(), value: c.estimate, stderr: Some(c.stderr), reps: c.reps, seed: s.seed },
                QuantityRow { quantity: "bound6".into(), value: c.bound, stderr: None, reps: c.reps, seed: s.seed },
            ];
            (s, rows)
        }
        RobustnessCommand::Lower5 { setting: s, epsilon } => {
            let setting = RobustnessSetting::mean_shift(s.n, s.shift, s.sigma2, s.b, s.alpha)?;
            let c = theorem5_check(&setting, epsilon, s.reps, SeedStream::new(s.seed))?;
            let row = |q: &str, value, stderr| QuantityRow { quantity: q.into(), value, stderr, reps: c.reps, seed: s.seed };
            let rows = vec![
                row("type1", c.type1, Some(c.type1_stderr)),
                row("c_hat", c.c_hat, None),
                row("bound5", c.bound, None),
                row("gap", c.type1 - c.bound, Some(c.gap_stderr)),
            ];
            (s, rows)
        }
    };
    write_table(output(s.out.as_deref())?, &rows)
}

fn run_knockoff_sim(args: KnockoffArgs) -> Result<()> {
    let cfg = FdrConfig { mode: args.mode, p: args.p, b: args.b, alpha: args.alpha, reps: args.reps, seed: args.seed, ..FdrConfig::default() };
    let est = simulate_fdr(&cfg)?;
    let rows = vec![KnockoffRow { mode: args.mode.to_string(), alpha: args.alpha, b: args.b, fdr: est.fdr, power: est.power, stderr: est.fdr_stderr }];
    write_table(output(args.out.as_deref())?, &rows)
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml(&std::fs::read_to_string(&args.config)?)?;
    if args.paper_scale {
        cfg = cfg.paper_scale();
    }
    let out = args.out.or_else(|| cfg.out.clone());
    let rows = run_experiment(&cfg)?;
    write_table(output(out.as_deref())?, &rows)
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let cfg = ExperimentConfig { model: args.model, n: args.n, p: args.p, rho: args.rho, seed: args.seed, ..ExperimentConfig::default() };
    let cfg = ExperimentConfig { sparsity: args.sparsity.unwrap_or(cfg.sparsity.min(args.p)), ..cfg };
    cfg.validate()?;
    let inst = draw_instance(&cfg, Misspecification::None, args.beta0, SeedStream::new(args.seed))?;
    write_dataset(File::create(&args.out)?, &inst.data)?;
    if let Some(path) = args.law_out {
        write_law(&path, &inst.proposal)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<()> = match cli.command {
        Command::Test(a) => run_test_command(a),
        Command::Robustness { which } => run_robustness(which),
        Command::KnockoffSim(a) => run_knockoff_sim(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Generate(a) => run_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cit-rank: {e}");
            match e {
                Error::Config(_) | Error::Toml(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
