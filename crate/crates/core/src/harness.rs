//! Seeded experiment runner: builds instances, wires oracles to selectors,
//! aggregates trials, and emits CSV rows plus a JSON summary.
//!
//! Trial `i` of an experiment uses the nominal seed `base_seed + i`; all of a
//! trial's RNG streams (instance generation, database draws, oracle noise,
//! selector pairings) are derived from that seed through a splitmix64 mixer,
//! so trials are independent, reproducible, and safe to run in parallel.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{generate_instance, tv_to_class, DistError, InstanceSpec};
use crate::oracles::{
    Database, EmpiricalOracle, ExactOracle, Oracle, OracleError, PrivacyLedger, RrOracle,
};
use crate::seeding;
use crate::selectors::{
    bokserr_params_scaled, budget_plan, plan_empirical_total, plan_rr_total, run_algorithm,
    Algorithm, BokserrParams, ConstMultipliers, ParamMode, PlannedRound, SelectError,
    SelectionOutcome,
};

const STREAM_INSTANCE: u64 = 1;
const STREAM_DB: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_SELECT: u64 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// True for errors caused by the configuration rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::InvalidConfig(_)
                | HarnessError::Dist(DistError::InvalidSpec(_))
                | HarnessError::Select(SelectError::InvalidParameter(_))
                | HarnessError::Oracle(OracleError::InvalidParameter(_))
        )
    }
}

/// Oracle backend for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Exact,
    Empirical,
    Rr,
}

/// Full description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub algorithm: Algorithm,
    pub oracle: OracleKind,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub trials: u64,
    pub base_seed: u64,
    pub mode: ParamMode,
    /// Constant multipliers; `None` uses the mode's defaults.
    pub scales: Option<ConstMultipliers>,
    /// Database size override, to exercise the exhaustion path. `None` sizes
    /// the database from the worst-case budget plan so exhaustion cannot
    /// occur in nominal runs.
    pub db_size: Option<u64>,
}

impl ExperimentConfig {
    pub fn effective_scales(&self) -> ConstMultipliers {
        self.scales.unwrap_or_else(|| self.mode.default_scales())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.instance.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "beta must lie in (0,1), got {}",
                self.beta
            )));
        }
        if self.trials < 1 {
            return Err(HarnessError::InvalidConfig(
                "trials must be at least 1".into(),
            ));
        }
        if self.oracle == OracleKind::Rr && !(self.epsilon > 0.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "epsilon must be positive for the rr oracle, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    fn params(&self) -> Result<BokserrParams, HarnessError> {
        Ok(bokserr_params_scaled(
            self.instance.k,
            self.beta,
            self.mode,
            self.effective_scales(),
        )?)
    }

    /// Worst-case round schedule for this configuration.
    pub fn plan(&self) -> Result<Vec<PlannedRound>, HarnessError> {
        if self.instance.k < 2 {
            return Ok(Vec::new());
        }
        let params = self.params()?;
        Ok(budget_plan(
            self.algorithm,
            self.instance.k,
            self.alpha,
            self.beta,
            &params,
        ))
    }

    /// Database size the configured oracle needs in the worst case.
    pub fn sample_requirement(&self) -> Result<u64, HarnessError> {
        let plan = self.plan()?;
        Ok(match self.oracle {
            OracleKind::Exact => 0,
            OracleKind::Empirical => plan_empirical_total(&plan),
            OracleKind::Rr => plan_rr_total(&plan, self.epsilon)?,
        })
    }
}

/// Extra per-trial information kept out of the CSV row.
#[derive(Debug, Clone)]
pub struct TrialDetail {
    pub outcome: Option<SelectionOutcome>,
    pub ledger: PrivacyLedger,
    pub failure_reason: Option<String>,
    pub one_pass_ok: bool,
    pub db_capacity: u64,
}

/// One row of experiment output.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    /// Chosen member index, or -1 when the trial aborted on budget
    /// exhaustion before selecting.
    pub chosen_index: i64,
    pub tv_error: f64,
    pub opt: f64,
    pub success: bool,
    pub rounds_used: u64,
    pub samples_consumed: u64,
    pub wall_time_ms: f64,
    #[serde(skip)]
    pub detail: Option<TrialDetail>,
}

impl TrialRecord {
    pub fn exhausted(&self) -> bool {
        self.chosen_index < 0
    }

    /// CSV-stable content without the wall-time column.
    pub fn deterministic_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seed,
            self.chosen_index,
            self.tv_error,
            self.opt,
            self.success,
            self.rounds_used,
            self.samples_consumed
        )
    }
}

/// Runs one seeded trial: generates the instance, sizes and draws the
/// database, runs the selector, and scores the result against the exact
/// optimum. Deterministic for a given `(config, seed)`.
pub fn run_trial(config: &ExperimentConfig, seed: u64) -> Result<TrialRecord, HarnessError> {
    config.validate()?;
    let start = Instant::now();
    let root = seeding::splitmix64(seed);
    let (class, target) = generate_instance(
        &config.instance,
        seeding::derive_seed(root, STREAM_INSTANCE),
    )?;
    let (opt, _) = tv_to_class(&target, &class)?;
    let k = class.len();

    if k == 1 {
        let tv_error = target.tv_distance(class.member(0))?;
        return Ok(TrialRecord {
            seed,
            chosen_index: 0,
            tv_error,
            opt,
            success: tv_error <= 9.0 * opt + config.alpha,
            rounds_used: 0,
            samples_consumed: 0,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            detail: Some(TrialDetail {
                outcome: None,
                ledger: PrivacyLedger::new(None),
                failure_reason: None,
                one_pass_ok: true,
                db_capacity: 0,
            }),
        });
    }

    let params = config.params()?;
    let mut select_rng = seeding::stream_rng(root, STREAM_SELECT);
    let capacity = match config.oracle {
        OracleKind::Exact => 0,
        _ => config
            .db_size
            .map(Ok)
            .unwrap_or_else(|| config.sample_requirement())?,
    };

    let (result, ledger, one_pass) = match config.oracle {
        OracleKind::Exact => {
            let mut oracle = ExactOracle::new(target.clone());
            let result = run_algorithm(
                config.algorithm,
                &class,
                &mut oracle,
                config.alpha,
                config.beta,
                &params,
                &mut select_rng,
            );
            (result, oracle.ledger().clone(), true)
        }
        OracleKind::Empirical => {
            let db = Database::from_distribution(
                &target,
                seeding::derive_seed(root, STREAM_DB),
                capacity,
            );
            let mut oracle = EmpiricalOracle::new(db);
            let result = run_algorithm(
                config.algorithm,
                &class,
                &mut oracle,
                config.alpha,
                config.beta,
                &params,
                &mut select_rng,
            );
            let one_pass = oracle.database().one_pass_ok();
            (result, oracle.ledger().clone(), one_pass)
        }
        OracleKind::Rr => {
            let db = Database::from_distribution(
                &target,
                seeding::derive_seed(root, STREAM_DB),
                capacity,
            );
            let mut oracle =
                RrOracle::new(db, config.epsilon, seeding::derive_seed(root, STREAM_NOISE))?;
            let result = run_algorithm(
                config.algorithm,
                &class,
                &mut oracle,
                config.alpha,
                config.beta,
                &params,
                &mut select_rng,
            );
            let one_pass = oracle.database().one_pass_ok();
            (result, oracle.ledger().clone(), one_pass)
        }
    };

    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(outcome) => {
            let tv_error = target.tv_distance(class.member(outcome.chosen_index))?;
            assert!(tv_error >= opt - 1e-12, "chosen member beat the optimum");
            Ok(TrialRecord {
                seed,
                chosen_index: outcome.chosen_index as i64,
                tv_error,
                opt,
                success: tv_error <= 9.0 * opt + config.alpha,
                rounds_used: outcome.rounds_used as u64,
                samples_consumed: ledger.samples_consumed,
                wall_time_ms,
                detail: Some(TrialDetail {
                    outcome: Some(outcome),
                    ledger,
                    failure_reason: None,
                    one_pass_ok: one_pass,
                    db_capacity: capacity,
                }),
            })
        }
        Err(err @ SelectError::InsufficientBudget { .. }) => Ok(TrialRecord {
            seed,
            chosen_index: -1,
            tv_error: f64::NAN,
            opt,
            success: false,
            rounds_used: ledger.oracle_rounds,
            samples_consumed: ledger.samples_consumed,
            wall_time_ms,
            detail: Some(TrialDetail {
                outcome: None,
                ledger,
                failure_reason: Some(err.to_string()),
                one_pass_ok: one_pass,
                db_capacity: capacity,
            }),
        }),
        Err(other) => Err(other.into()),
    }
}

/// Aggregate over an experiment's trials.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub trials: u64,
    pub failures: u64,
    pub failure_rate: f64,
    /// 95% Wilson score interval for the failure rate.
    pub failure_ci95: (f64, f64),
    pub exhausted_trials: u64,
    pub mean_samples_consumed: f64,
    pub max_samples_consumed: u64,
    pub mean_rounds: f64,
    /// Worst-case sample requirement for the configured oracle.
    pub budget_estimate: u64,
}

fn wilson_ci95(events: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054f64;
    let nf = n as f64;
    let p = events as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = p + z2 / (2.0 * nf);
    let spread = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    (
        ((center - spread) / denom).max(0.0),
        ((center + spread) / denom).min(1.0),
    )
}

/// Everything one experiment produced.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: ExperimentSummary,
}

impl ExperimentOutput {
    pub fn any_exhausted(&self) -> bool {
        self.records.iter().any(TrialRecord::exhausted)
    }
}

/// Runs all trials (in parallel, with disjoint seeded streams), sorts the
/// records by seed, and aggregates them.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.trials)
        .map(|i| config.base_seed.wrapping_add(i))
        .collect();
    let mut records = seeds
        .par_iter()
        .map(|&seed| run_trial(config, seed))
        .collect::<Result<Vec<_>, _>>()?;
    records.sort_by_key(|r| r.seed);

    let trials = records.len() as u64;
    let failures = records.iter().filter(|r| !r.success).count() as u64;
    let exhausted = records.iter().filter(|r| r.exhausted()).count() as u64;
    let total_samples: u64 = records.iter().map(|r| r.samples_consumed).sum();
    let total_rounds: u64 = records.iter().map(|r| r.rounds_used).sum();
    let summary = ExperimentSummary {
        config: config.clone(),
        trials,
        failures,
        failure_rate: failures as f64 / trials as f64,
        failure_ci95: wilson_ci95(failures, trials),
        exhausted_trials: exhausted,
        mean_samples_consumed: total_samples as f64 / trials as f64,
        max_samples_consumed: records
            .iter()
            .map(|r| r.samples_consumed)
            .max()
            .unwrap_or(0),
        mean_rounds: total_rounds as f64 / trials as f64,
        budget_estimate: config.sample_requirement()?,
    };
    Ok(ExperimentOutput { records, summary })
}

/// Writes one record per row with a header line.
pub fn write_csv(records: &[TrialRecord], path: &Path) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path)?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_summary(summary: &ExperimentSummary, path: &Path) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::InstanceFamily;
    use crate::oracles::per_query_budget;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            instance: InstanceSpec {
                family: InstanceFamily::Planted,
                k: 6,
                domain_size: 6,
                concentration: 1.0,
            },
            algorithm: Algorithm::MdeVariant,
            oracle: OracleKind::Exact,
            epsilon: 1.0,
            alpha: 0.2,
            beta: 0.1,
            trials: 20,
            base_seed: 7,
            mode: ParamMode::Practical,
            scales: None,
            db_size: None,
        }
    }

    #[test]
    fn exact_mde_on_planted_instances_always_succeeds() {
        let out = run_experiment(&base_config()).unwrap();
        assert_eq!(out.summary.failures, 0);
        assert_eq!(out.summary.trials, 20);
        for r in &out.records {
            assert_eq!(r.tv_error, 0.0);
            assert!(r.success);
        }
    }

    #[test]
    fn single_trial_summary_mirrors_the_record() {
        let mut config = base_config();
        config.trials = 1;
        let out = run_experiment(&config).unwrap();
        let record = &out.records[0];
        assert_eq!(out.summary.trials, 1);
        assert_eq!(out.summary.mean_samples_consumed, record.samples_consumed as f64);
        assert_eq!(out.summary.max_samples_consumed, record.samples_consumed);
        assert_eq!(out.summary.mean_rounds, record.rounds_used as f64);
        assert_eq!(out.summary.failures, u64::from(!record.success));
    }

    #[test]
    fn trials_are_deterministic() {
        let config = base_config();
        let a = run_trial(&config, 11).unwrap();
        let b = run_trial(&config, 11).unwrap();
        assert_eq!(a.deterministic_fields(), b.deterministic_fields());
        assert_eq!(
            serde_json::to_string(&a.detail.unwrap().outcome).unwrap(),
            serde_json::to_string(&b.detail.unwrap().outcome).unwrap()
        );
    }

    #[test]
    fn single_member_class_reports_opt() {
        let mut config = base_config();
        config.instance.k = 1;
        config.instance.family = InstanceFamily::Perturbed { delta: 0.3 };
        let r = run_trial(&config, 5).unwrap();
        assert_eq!(r.chosen_index, 0);
        assert_eq!(r.tv_error, r.opt);
        assert!((r.opt - 0.3).abs() <= 1e-9);
        assert_eq!(r.samples_consumed, 0);
    }

    #[test]
    fn loosening_alpha_cannot_increase_failures() {
        let mut config = base_config();
        config.instance.family = InstanceFamily::Perturbed { delta: 0.05 };
        config.instance.k = 5;
        config.oracle = OracleKind::Empirical;
        config.trials = 30;

        let mut tight = config.clone();
        tight.alpha = 0.05;
        let mut loose = config;
        loose.alpha = 0.5;
        let tight_rate = run_experiment(&tight).unwrap().summary.failure_rate;
        let loose_rate = run_experiment(&loose).unwrap().summary.failure_rate;
        assert!(loose_rate <= tight_rate, "{loose_rate} > {tight_rate}");
    }

    #[test]
    fn rr_trials_respect_budget_and_accounting() {
        let mut config = base_config();
        config.algorithm = Algorithm::Bokserr;
        config.oracle = OracleKind::Rr;
        config.instance.k = 8;
        config.trials = 4;
        let out = run_experiment(&config).unwrap();
        let budget = config.sample_requirement().unwrap();
        assert_eq!(out.summary.budget_estimate, budget);
        for r in &out.records {
            assert!(!r.exhausted());
            assert!(r.samples_consumed <= budget);
            let detail = r.detail.as_ref().unwrap();
            assert!(detail.one_pass_ok);
            // The ledger total must be recomputable from the round log.
            let outcome = detail.outcome.as_ref().unwrap();
            let recomputed: u64 = outcome
                .round_log
                .iter()
                .map(|e| {
                    per_query_budget(e.alpha, e.beta, e.critical_count as u64, config.epsilon)
                        .unwrap()
                        * e.workload_size as u64
                })
                .sum();
            assert_eq!(recomputed, r.samples_consumed);
            assert_eq!(
                detail.ledger.oracle_rounds as usize,
                outcome.round_log.len()
            );
        }
    }

    #[test]
    fn undersized_database_records_exhaustion() {
        let mut config = base_config();
        config.algorithm = Algorithm::RoundRobin;
        config.oracle = OracleKind::Rr;
        config.db_size = Some(10);
        config.trials = 2;
        let out = run_experiment(&config).unwrap();
        assert!(out.any_exhausted());
        assert_eq!(out.summary.exhausted_trials, 2);
        for r in &out.records {
            assert_eq!(r.chosen_index, -1);
            assert!(!r.success);
            assert!(r.tv_error.is_nan());
            assert_eq!(r.samples_consumed, 0);
            assert!(r.detail.as_ref().unwrap().failure_reason.is_some());
        }
    }

    #[test]
    fn csv_output_shape_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config();
        let out = run_experiment(&config).unwrap();

        let path_a = dir.path().join("a.csv");
        let path_b = dir.path().join("b.csv");
        write_csv(&out.records, &path_a).unwrap();
        let again = run_experiment(&config).unwrap();
        write_csv(&again.records, &path_b).unwrap();

        let read = |p: &Path| std::fs::read_to_string(p).unwrap();
        let a = read(&path_a);
        let b = read(&path_b);
        assert_eq!(a.lines().count() as u64, config.trials + 1);
        assert!(a.starts_with(
            "seed,chosen_index,tv_error,opt,success,rounds_used,samples_consumed,wall_time_ms"
        ));
        // Identical up to the wall-time column.
        let strip = |s: &str| {
            s.lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));

        let summary_path = dir.path().join("s.json");
        write_summary(&out.summary, &summary_path).unwrap();
        assert!(read(&summary_path).contains("failure_rate"));
    }

    #[test]
    fn config_validation_errors_are_flagged() {
        let mut config = base_config();
        config.alpha = 1.2;
        let err = run_experiment(&config).unwrap_err();
        assert!(err.is_config_error());

        let mut config = base_config();
        config.oracle = OracleKind::Rr;
        config.epsilon = -1.0;
        let err = run_experiment(&config).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn wilson_interval_sane() {
        let (lo, hi) = wilson_ci95(0, 100);
        assert!(lo.abs() < 1e-12);
        assert!(hi < 0.05);
        let (lo, hi) = wilson_ci95(50, 100);
        assert!(lo < 0.5 && 0.5 < hi);
    }
}
