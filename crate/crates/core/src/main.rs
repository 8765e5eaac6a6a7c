//! `hsel` — seeded hypothesis-selection experiments and budget tables.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hsel::harness::{
    run_experiment, write_csv, write_summary, ExperimentConfig, HarnessError, OracleKind,
};
use hsel::selectors::{
    bokserr_params_scaled, budget_plan, plan_rr_total, Algorithm, ConstMultipliers, ParamMode,
};
use hsel::{InstanceFamily, InstanceSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_EXHAUSTED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hsel",
    version,
    about = "Hypothesis selection over finite discrete distributions with exact, empirical, and locally private oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded experiment; writes a CSV of trials and a JSON summary.
    Run(RunArgs),
    /// Print the deterministic worst-case sample budget, round by round.
    Budget(BudgetArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Planted,
    Perturbed,
    Dirichlet,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Bokserr,
    RoundRobin,
    Mde,
    Knockout,
    Srr,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Bokserr => Algorithm::Bokserr,
            AlgoArg::RoundRobin => Algorithm::RoundRobin,
            AlgoArg::Mde => Algorithm::MdeVariant,
            AlgoArg::Knockout => Algorithm::KnockoutOnly,
            AlgoArg::Srr => Algorithm::SrrOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Exact,
    Empirical,
    Rr,
}

impl From<OracleArg> for OracleKind {
    fn from(o: OracleArg) -> Self {
        match o {
            OracleArg::Exact => OracleKind::Exact,
            OracleArg::Empirical => OracleKind::Empirical,
            OracleArg::Rr => OracleKind::Rr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Theory,
    Practical,
}

impl From<ModeArg> for ParamMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Theory => ParamMode::Theory,
            ModeArg::Practical => ParamMode::Practical,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct ScaleArgs {
    /// Knockout repetition multiplier (default: mode's).
    #[arg(long)]
    scale_r: Option<f64>,
    /// SRR repetition multiplier (default: mode's).
    #[arg(long)]
    scale_rep: Option<f64>,
    /// Knockout sub-sample multiplier (default: mode's).
    #[arg(long)]
    scale_n1: Option<f64>,
    /// SRR sub-sample multiplier (default: mode's).
    #[arg(long)]
    scale_n2: Option<f64>,
}

impl ScaleArgs {
    fn resolve(&self, mode: ParamMode) -> ConstMultipliers {
        let mut scales = mode.default_scales();
        if let Some(v) = self.scale_r {
            scales.c_r = v;
        }
        if let Some(v) = self.scale_rep {
            scales.c_rep = v;
        }
        if let Some(v) = self.scale_n1 {
            scales.c_n1 = v;
        }
        if let Some(v) = self.scale_n2 {
            scales.c_n2 = v;
        }
        scales
    }
}

#[derive(Args)]
struct RunArgs {
    /// Number of candidate distributions.
    #[arg(long)]
    k: usize,
    /// Domain size of every distribution.
    #[arg(long)]
    domain: usize,
    #[arg(long, value_enum, default_value = "planted")]
    family: FamilyArg,
    /// Exact distance of the target from the class (perturbed family).
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Dirichlet concentration for random probability vectors.
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    #[arg(long, value_enum)]
    algo: AlgoArg,
    #[arg(long, value_enum)]
    oracle: OracleArg,
    /// Privacy parameter for the rr oracle.
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    /// Base seed; trial i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "practical")]
    mode: ModeArg,
    #[command(flatten)]
    scales: ScaleArgs,
    /// Database size override (exercises the exhaustion path).
    #[arg(long)]
    db_size: Option<u64>,
    /// Output CSV path (one trial per row).
    #[arg(long)]
    out: PathBuf,
    /// Output JSON summary path.
    #[arg(long)]
    summary: PathBuf,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, value_enum, default_value = "practical")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "bokserr")]
    algo: AlgoArg,
    #[command(flatten)]
    scales: ScaleArgs,
}

fn run(args: &RunArgs) -> Result<bool, HarnessError> {
    let family = match args.family {
        FamilyArg::Planted => InstanceFamily::Planted,
        FamilyArg::Perturbed => InstanceFamily::Perturbed { delta: args.delta },
        FamilyArg::Dirichlet => InstanceFamily::DirichletRandom,
    };
    let mode = ParamMode::from(args.mode);
    let config = ExperimentConfig {
        instance: InstanceSpec {
            family,
            k: args.k,
            domain_size: args.domain,
            concentration: args.concentration,
        },
        algorithm: args.algo.into(),
        oracle: args.oracle.into(),
        epsilon: args.eps,
        alpha: args.alpha,
        beta: args.beta,
        trials: args.trials,
        base_seed: args.seed,
        mode,
        scales: Some(args.scales.resolve(mode)),
        db_size: args.db_size,
    };
    let output = run_experiment(&config)?;
    write_csv(&output.records, &args.out)?;
    write_summary(&output.summary, &args.summary)?;
    let s = &output.summary;
    println!(
        "{} trials: failure_rate {:.4} (95% CI [{:.4}, {:.4}]), mean samples {:.1}, \
         max samples {}, mean rounds {:.2}, budget {}",
        s.trials,
        s.failure_rate,
        s.failure_ci95.0,
        s.failure_ci95.1,
        s.mean_samples_consumed,
        s.max_samples_consumed,
        s.mean_rounds,
        s.budget_estimate,
    );
    if output.any_exhausted() {
        eprintln!(
            "{} of {} trials ran out of samples",
            s.exhausted_trials, s.trials
        );
    }
    Ok(output.any_exhausted())
}

fn budget(args: &BudgetArgs) -> Result<(), HarnessError> {
    let mode = ParamMode::from(args.mode);
    let algo = Algorithm::from(args.algo);
    if args.k < 2 {
        println!("k = {}: no oracle rounds, total samples 0", args.k);
        return Ok(());
    }
    let params = bokserr_params_scaled(args.k, args.beta, mode, args.scales.resolve(mode))?;
    let plan = budget_plan(algo, args.k, args.alpha, args.beta, &params);
    println!(
        "worst-case rr-oracle budget: algo {algo}, k {}, alpha {}, beta {}, eps {}, t1 {}, t2 {}, eta {}",
        args.k, args.alpha, args.beta, args.eps, params.t1, params.t2, params.eta
    );
    println!(
        "{:<24} {:>6} {:>12} {:>10} {:>12} {:>16}",
        "stage", "round", "queries", "critical", "per-query", "samples"
    );
    for round in &plan {
        let samples = round.rr_samples(args.eps)?;
        let per_query = samples.checked_div(round.workload_size).unwrap_or(0);
        println!(
            "{:<24} {:>6} {:>12} {:>10} {:>12} {:>16}",
            round.stage.to_string(),
            round.round,
            round.workload_size,
            round.critical_count,
            per_query,
            samples
        );
    }
    println!("total: {}", plan_rr_total(&plan, args.eps)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args).map(|exhausted| {
            if exhausted {
                ExitCode::from(EXIT_EXHAUSTED)
            } else {
                ExitCode::SUCCESS
            }
        }),
        Command::Budget(args) => budget(args).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
