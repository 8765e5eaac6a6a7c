//! Statistical-query oracles and sample accounting.
//!
//! A [`Workload`] is an ordered batch of event queries submitted in one round,
//! together with an accuracy `alpha`, failure probability `beta`, and the
//! number of critical queries `m` the caller's correctness actually depends
//! on. Three backends answer workloads:
//!
//! - [`ExactOracle`] returns true event probabilities (zero error),
//! - [`EmpiricalOracle`] answers every query from one shared block of raw
//!   samples (non-private baseline; the block may be reused across queries),
//! - [`RrOracle`] answers each query from a fresh block of samples, each seen
//!   only through one randomized-response bit, so the released channel is an
//!   ε-local randomizer.
//!
//! Samples live in a [`Database`] with a strictly advancing cursor: a request
//! that does not fit in the remaining budget yields the NULL result (no
//! samples are consumed), surfaced as [`OracleError::Exhausted`].

use rand::prelude::*;
use rand_distr::weighted_alias::WeightedAliasIndex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DiscreteDistribution, DistError, EventSet};
use crate::Prng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("workload must contain at least one query")]
    EmptyWorkload,
    #[error("critical count {critical} outside [1, {len}]")]
    InvalidCriticalCount { critical: usize, len: usize },
    #[error("domain mismatch: {left} vs {right}")]
    DomainMismatch { left: usize, right: usize },
    #[error("sample value {value} outside query domain of size {domain}")]
    SampleOutOfDomain { value: usize, domain: usize },
    #[error("database exhausted: requested {requested} samples, {remaining} remain")]
    Exhausted { requested: u64, remaining: u64 },
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// One round's batch of statistical queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    queries: Vec<EventSet>,
    alpha: f64,
    beta: f64,
    critical: usize,
}

impl Workload {
    pub fn new(
        queries: Vec<EventSet>,
        alpha: f64,
        beta: f64,
        critical: usize,
    ) -> Result<Self, OracleError> {
        if queries.is_empty() {
            return Err(OracleError::EmptyWorkload);
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(OracleError::InvalidParameter(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(OracleError::InvalidParameter(format!(
                "beta must lie in (0,1), got {beta}"
            )));
        }
        if critical < 1 || critical > queries.len() {
            return Err(OracleError::InvalidCriticalCount {
                critical,
                len: queries.len(),
            });
        }
        let domain = queries[0].len();
        for q in &queries {
            if q.len() != domain {
                return Err(OracleError::DomainMismatch {
                    left: domain,
                    right: q.len(),
                });
            }
        }
        Ok(Self {
            queries,
            alpha,
            beta,
            critical,
        })
    }

    pub fn queries(&self) -> &[EventSet] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn critical_count(&self) -> usize {
        self.critical
    }

    pub fn domain_size(&self) -> usize {
        self.queries[0].len()
    }
}

// One source per database; the variant size gap is irrelevant.
#[allow(clippy::large_enum_variant)]
enum DbSource {
    Materialized(Vec<usize>),
    Stream {
        // Alias-method sampler: per-draw cost stays flat in the domain size.
        index: WeightedAliasIndex<f64>,
        rng: Prng,
        domain_size: usize,
    },
}

/// Ordered one-pass sample store.
///
/// Samples are i.i.d. draws from the generating distribution; the cursor only
/// advances and every sample is handed out at most once. The streaming
/// constructor materializes draws on demand in cursor order, which is
/// observationally identical to drawing the full list up front.
pub struct Database {
    source: DbSource,
    capacity: u64,
    cursor: u64,
    access_log: Vec<(u64, u64)>,
}

impl Database {
    /// Wraps an explicit sample list; capacity equals its length.
    pub fn from_samples(samples: Vec<usize>) -> Self {
        let capacity = samples.len() as u64;
        Self {
            source: DbSource::Materialized(samples),
            capacity,
            cursor: 0,
            access_log: Vec::new(),
        }
    }

    /// Draws up to `capacity` i.i.d. samples from `dist`, lazily, in cursor
    /// order, deterministically for the seed.
    pub fn from_distribution(dist: &DiscreteDistribution, seed: u64, capacity: u64) -> Self {
        let index = WeightedAliasIndex::new(dist.weights().to_vec()).expect("weights sum to 1");
        Self {
            source: DbSource::Stream {
                index,
                rng: Prng::seed_from_u64(seed),
                domain_size: dist.domain_size(),
            },
            capacity,
            cursor: 0,
            access_log: Vec::new(),
        }
    }

    /// Total number of samples the database holds.
    pub fn len(&self) -> u64 {
        self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.capacity == 0
    }

    /// Number of samples consumed so far.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn remaining(&self) -> u64 {
        self.capacity - self.cursor
    }

    /// Domain size when known (streaming source).
    pub fn domain_size(&self) -> Option<usize> {
        match &self.source {
            DbSource::Materialized(_) => None,
            DbSource::Stream { domain_size, .. } => Some(*domain_size),
        }
    }

    /// Instrumented one-pass check: every recorded access block starts exactly
    /// where the previous one ended, so no sample index was read twice.
    pub fn one_pass_ok(&self) -> bool {
        let mut expected = 0u64;
        for &(start, end) in &self.access_log {
            if start != expected || end < start {
                return false;
            }
            expected = end;
        }
        expected == self.cursor
    }

    /// Feeds the next `n` samples to `sink(i, x)`. Returns `false` without
    /// consuming anything if fewer than `n` samples remain.
    pub(crate) fn consume_with(&mut self, n: u64, mut sink: impl FnMut(usize, usize)) -> bool {
        if n > self.remaining() {
            return false;
        }
        let start = self.cursor;
        match &mut self.source {
            DbSource::Materialized(samples) => {
                for i in 0..n {
                    sink(i as usize, samples[(start + i) as usize]);
                }
            }
            DbSource::Stream { index, rng, .. } => {
                for i in 0..n {
                    sink(i as usize, index.sample(rng));
                }
            }
        }
        self.cursor = start + n;
        self.access_log.push((start, self.cursor));
        true
    }
}

/// One call to the local-randomizer oracle: applies `randomizer(i, x)` to the
/// i-th fresh sample `x`. Returns `None` (the NULL result) when `n` exceeds
/// the remaining samples, leaving the cursor untouched.
pub fn lr_call<T>(
    db: &mut Database,
    n: usize,
    mut randomizer: impl FnMut(usize, usize) -> T,
) -> Option<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    if db.consume_with(n as u64, |i, x| out.push(randomizer(i, x))) {
        Some(out)
    } else {
        None
    }
}

/// Privacy and consumption accounting for one oracle.
///
/// `epsilon` is `None` for oracles that release raw statistics (exact and
/// empirical backends).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub epsilon: Option<f64>,
    pub samples_consumed: u64,
    pub oracle_rounds: u64,
    pub queries_answered: u64,
}

impl PrivacyLedger {
    pub fn new(epsilon: Option<f64>) -> Self {
        Self {
            epsilon,
            samples_consumed: 0,
            oracle_rounds: 0,
            queries_answered: 0,
        }
    }

    pub fn record_round(&mut self, samples: u64, queries: u64) {
        self.samples_consumed += samples;
        self.oracle_rounds += 1;
        self.queries_answered += queries;
    }
}

/// The oracle contract: one `answer` call per round, one real value per query
/// in submission order.
pub trait Oracle {
    fn answer(&mut self, workload: &Workload) -> Result<Vec<f64>, OracleError>;
    fn ledger(&self) -> &PrivacyLedger;
}

/// True event probabilities under `h`: zero error, so the accuracy guarantee
/// holds for every `(alpha, beta, m)` with no samples at all.
pub fn exact_answer(
    h: &DiscreteDistribution,
    workload: &Workload,
) -> Result<Vec<f64>, OracleError> {
    workload
        .queries()
        .iter()
        .map(|q| h.event_probability(q).map_err(OracleError::from))
        .collect()
}

/// Shared-block size for the empirical oracle: `ceil(ln(2n/beta) / (2
/// alpha^2))` samples make every one of the `n` answers `alpha`-accurate with
/// probability `1 - beta` (two-sided Hoeffding plus a union bound).
pub fn shared_block_size(n: usize, alpha: f64, beta: f64) -> u64 {
    ((2.0 * n as f64 / beta).ln() / (2.0 * alpha * alpha)).ceil() as u64
}

/// Non-private baseline: consumes one shared block and answers every query
/// with its empirical frequency on that block.
pub fn empirical_answer(db: &mut Database, workload: &Workload) -> Result<Vec<f64>, OracleError> {
    let domain = workload.domain_size();
    if let Some(db_domain) = db.domain_size() {
        if db_domain != domain {
            return Err(OracleError::DomainMismatch {
                left: db_domain,
                right: domain,
            });
        }
    }
    let block = shared_block_size(workload.len(), workload.alpha(), workload.beta());
    if block > db.remaining() {
        return Err(OracleError::Exhausted {
            requested: block,
            remaining: db.remaining(),
        });
    }
    let mut counts = vec![0u64; domain];
    let mut stray = None;
    db.consume_with(block, |_, x| {
        if x < domain {
            counts[x] += 1;
        } else {
            stray = Some(x);
        }
    });
    if let Some(value) = stray {
        return Err(OracleError::SampleOutOfDomain { value, domain });
    }
    Ok(workload
        .queries()
        .iter()
        .map(|q| {
            let hits: u64 = (0..domain)
                .filter(|&x| q.contains(x))
                .map(|x| counts[x])
                .sum();
            hits as f64 / block as f64
        })
        .collect())
}

/// Probability that randomized response leaves its input bit unchanged.
pub fn rr_keep_probability(epsilon: f64) -> f64 {
    rr_channel(epsilon).0
}

/// The two Bernoulli parameters of the randomized-response channel,
/// `(e^eps/(e^eps+1), 1/(e^eps+1))`, computed over a shared denominator so
/// their ratio reproduces `e^eps` to machine precision.
pub fn rr_channel(epsilon: f64) -> (f64, f64) {
    let q = (-epsilon).exp();
    let d = 1.0 + q;
    (1.0 / d, q / d)
}

/// De-biasing factor `(e^eps + 1) / (e^eps - 1)`, computed as `coth(eps/2)`
/// so large `eps` does not overflow.
pub fn debias_factor(epsilon: f64) -> f64 {
    1.0 / (epsilon / 2.0).tanh()
}

/// Randomized response on a single bit: keeps it with probability
/// `e^eps / (e^eps + 1)`, flips it otherwise.
pub fn rr_bit(bit: bool, epsilon: f64, rng: &mut Prng) -> Result<bool, OracleError> {
    if !(epsilon > 0.0) {
        return Err(OracleError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(flip(bit, rr_keep_probability(epsilon), rng))
}

#[inline]
fn flip(bit: bool, keep: f64, rng: &mut Prng) -> bool {
    if rng.gen::<f64>() < keep {
        bit
    } else {
        !bit
    }
}

/// Unbiased estimate of the query probability from `ones` positive response
/// bits out of `p`. Not clipped to [0,1]; unbiasedness matters more than
/// range for the selectors, which only compare magnitudes.
pub fn debiased_estimate(ones: u64, p: u64, epsilon: f64) -> f64 {
    let e = epsilon.exp();
    debias_factor(epsilon) * (ones as f64 / p as f64 - 1.0 / (e + 1.0))
}

/// Fresh samples needed per query so that any fixed set of `m` answers is
/// `alpha`-accurate with probability `1 - beta`:
/// `ceil(c^2 ln(2m/beta) / (2 alpha^2))` with `c = (e^eps+1)/(e^eps-1)`.
pub fn per_query_budget(alpha: f64, beta: f64, m: u64, epsilon: f64) -> Result<u64, OracleError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(OracleError::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(OracleError::InvalidParameter(format!(
            "beta must lie in (0,1), got {beta}"
        )));
    }
    if m < 1 {
        return Err(OracleError::InvalidParameter(
            "critical count must be at least 1".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(OracleError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let c = debias_factor(epsilon);
    Ok((c * c * (2.0 * m as f64 / beta).ln() / (2.0 * alpha * alpha)).ceil() as u64)
}

/// Randomized-response oracle round with an explicit per-query budget `p`.
///
/// Query `i` is answered from samples `p*i .. p*(i+1)` of this call's block;
/// each sample is released only as one randomized bit of its query
/// membership, then de-biased. Consumes nothing on exhaustion.
pub fn rr_sqoc_answer_with_budget(
    db: &mut Database,
    workload: &Workload,
    epsilon: f64,
    p: u64,
    rng: &mut Prng,
    ledger: &mut PrivacyLedger,
) -> Result<Vec<f64>, OracleError> {
    if !(epsilon > 0.0) {
        return Err(OracleError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if p < 1 {
        return Err(OracleError::InvalidParameter(
            "per-query budget must be at least 1".into(),
        ));
    }
    let domain = workload.domain_size();
    if let Some(db_domain) = db.domain_size() {
        if db_domain != domain {
            return Err(OracleError::DomainMismatch {
                left: db_domain,
                right: domain,
            });
        }
    }
    let n = workload.len() as u64;
    let requested = p
        .checked_mul(n)
        .ok_or_else(|| OracleError::InvalidParameter("budget overflow".into()))?;
    if requested > db.remaining() {
        return Err(OracleError::Exhausted {
            requested,
            remaining: db.remaining(),
        });
    }
    let keep = rr_keep_probability(epsilon);
    let mut answers = Vec::with_capacity(workload.len());
    let mut stray = None;
    for query in workload.queries() {
        let mut ones = 0u64;
        db.consume_with(p, |_, x| {
            if x < domain {
                if flip(query.contains(x), keep, rng) {
                    ones += 1;
                }
            } else {
                stray = Some(x);
            }
        });
        if let Some(value) = stray {
            return Err(OracleError::SampleOutOfDomain { value, domain });
        }
        answers.push(debiased_estimate(ones, p, epsilon));
    }
    ledger.record_round(requested, n);
    Ok(answers)
}

/// Randomized-response oracle round with the budget implied by the workload's
/// own `(alpha, beta, m)` parameters.
pub fn rr_sqoc_answer(
    db: &mut Database,
    workload: &Workload,
    epsilon: f64,
    rng: &mut Prng,
    ledger: &mut PrivacyLedger,
) -> Result<Vec<f64>, OracleError> {
    let p = per_query_budget(
        workload.alpha(),
        workload.beta(),
        workload.critical_count() as u64,
        epsilon,
    )?;
    rr_sqoc_answer_with_budget(db, workload, epsilon, p, rng, ledger)
}

/// Oracle answering with true event probabilities.
pub struct ExactOracle {
    target: DiscreteDistribution,
    ledger: PrivacyLedger,
}

impl ExactOracle {
    pub fn new(target: DiscreteDistribution) -> Self {
        Self {
            target,
            ledger: PrivacyLedger::new(None),
        }
    }
}

impl Oracle for ExactOracle {
    fn answer(&mut self, workload: &Workload) -> Result<Vec<f64>, OracleError> {
        let answers = exact_answer(&self.target, workload)?;
        self.ledger.record_round(0, workload.len() as u64);
        Ok(answers)
    }

    fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }
}

/// Non-private oracle answering from raw sample frequencies.
pub struct EmpiricalOracle {
    db: Database,
    ledger: PrivacyLedger,
}

impl EmpiricalOracle {
    pub fn new(db: Database) -> Self {
        Self {
            db,
            ledger: PrivacyLedger::new(None),
        }
    }

    pub fn database(&self) -> &Database {
        &self.db
    }
}

impl Oracle for EmpiricalOracle {
    fn answer(&mut self, workload: &Workload) -> Result<Vec<f64>, OracleError> {
        let block = shared_block_size(workload.len(), workload.alpha(), workload.beta());
        let answers = empirical_answer(&mut self.db, workload)?;
        self.ledger.record_round(block, workload.len() as u64);
        Ok(answers)
    }

    fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }
}

/// ε-LDP oracle backed by randomized response over a one-pass database.
pub struct RrOracle {
    db: Database,
    epsilon: f64,
    rng: Prng,
    ledger: PrivacyLedger,
}

impl RrOracle {
    pub fn new(db: Database, epsilon: f64, noise_seed: u64) -> Result<Self, OracleError> {
        if !(epsilon > 0.0) {
            return Err(OracleError::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            db,
            epsilon,
            rng: Prng::seed_from_u64(noise_seed),
            ledger: PrivacyLedger::new(Some(epsilon)),
        })
    }

    pub fn database(&self) -> &Database {
        &self.db
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Oracle for RrOracle {
    fn answer(&mut self, workload: &Workload) -> Result<Vec<f64>, OracleError> {
        rr_sqoc_answer(
            &mut self.db,
            workload,
            self.epsilon,
            &mut self.rng,
            &mut self.ledger,
        )
    }

    fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DiscreteDistribution as Dist;
    use proptest::prelude::*;

    fn dist(raw: &[f64]) -> Dist {
        Dist::new(raw).unwrap()
    }

    fn workload(queries: Vec<EventSet>, alpha: f64, beta: f64, m: usize) -> Workload {
        Workload::new(queries, alpha, beta, m).unwrap()
    }

    #[test]
    fn exact_oracle_answers_truth() {
        let h = dist(&[0.25, 0.5, 0.25]);
        let w = workload(vec![EventSet::full(3)], 0.1, 0.1, 1);
        assert_eq!(exact_answer(&h, &w).unwrap(), vec![1.0]);
        let w = workload(vec![EventSet::from_indices(3, &[1])], 0.1, 0.1, 1);
        assert_eq!(exact_answer(&h, &w).unwrap(), vec![0.5]);
        let w = workload(vec![EventSet::full(2)], 0.1, 0.1, 1);
        assert!(exact_answer(&h, &w).is_err());
    }

    #[test]
    fn workload_validation() {
        assert!(matches!(
            Workload::new(vec![], 0.1, 0.1, 1),
            Err(OracleError::EmptyWorkload)
        ));
        assert!(Workload::new(vec![EventSet::full(2)], 0.1, 0.1, 2).is_err());
        assert!(Workload::new(vec![EventSet::full(2)], 1.5, 0.1, 1).is_err());
        assert!(Workload::new(vec![EventSet::full(2), EventSet::full(3)], 0.1, 0.1, 1).is_err());
    }

    #[test]
    fn shared_block_matches_hoeffding_bound() {
        // Independent recomputation: ln(2*1/0.1) / (2 * 0.1^2) = ln(20)/0.02.
        let by_hand = (20.0f64.ln() / 0.02).ceil() as u64;
        assert_eq!(by_hand, 150);
        assert_eq!(shared_block_size(1, 0.1, 0.1), 150);
    }

    #[test]
    fn empirical_oracle_uses_one_shared_block() {
        let h = dist(&[1.0, 0.0]);
        let mut db = Database::from_distribution(&h, 5, 10_000);
        let w = workload(
            vec![
                EventSet::from_indices(2, &[0]),
                EventSet::from_indices(2, &[1]),
            ],
            0.1,
            0.1,
            2,
        );
        let block = shared_block_size(2, 0.1, 0.1);
        let answers = empirical_answer(&mut db, &w).unwrap();
        assert_eq!(answers, vec![1.0, 0.0]);
        assert_eq!(db.cursor(), block);
    }

    #[test]
    fn empirical_oracle_reports_exhaustion() {
        let h = dist(&[0.5, 0.5]);
        let mut db = Database::from_distribution(&h, 5, 10);
        let w = workload(vec![EventSet::full(2)], 0.1, 0.1, 1);
        match empirical_answer(&mut db, &w) {
            Err(OracleError::Exhausted { remaining, .. }) => assert_eq!(remaining, 10),
            other => panic!("expected exhaustion, got {other:?}"),
        }
        assert_eq!(db.cursor(), 0);
    }

    #[test]
    fn rr_bit_high_epsilon_never_flips_in_practice() {
        let mut rng = Prng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert!(rr_bit(true, 50.0, &mut rng).unwrap());
            assert!(!rr_bit(false, 50.0, &mut rng).unwrap());
        }
    }

    #[test]
    fn rr_bit_matches_keep_probability() {
        let mut rng = Prng::seed_from_u64(2);
        let kept = (0..10_000)
            .filter(|_| rr_bit(true, 1.0, &mut rng).unwrap())
            .count() as f64;
        let expect = std::f64::consts::E / (std::f64::consts::E + 1.0);
        assert!((kept / 10_000.0 - expect).abs() <= 0.02);
        assert!(rr_bit(true, 0.0, &mut rng).is_err());
    }

    #[test]
    fn rr_channel_is_exactly_eps_lr() {
        for eps in [0.1, 1.0, 5.0] {
            let (keep, flip_p) = rr_channel(eps);
            assert!((keep + flip_p - 1.0).abs() <= 1e-15);
            // P(out=1 | 1) / P(out=1 | 0) and the reverse bit.
            assert!((keep / flip_p - eps.exp()).abs() <= 1e-12);
            assert!((flip_p / keep - (-eps).exp()).abs() <= 1e-12);
        }
    }

    #[test]
    fn per_query_budget_frozen_values() {
        // By-hand: c = coth(eps/2); p = ceil(c^2 ln(2m/beta) / (2 alpha^2)).
        let c1 = (1.0f64.exp() + 1.0) / (1.0f64.exp() - 1.0);
        assert_eq!(
            ((20.0f64.ln()) / 0.02).ceil() as u64,
            150,
            "near-noiseless budget"
        );
        assert_eq!(per_query_budget(0.1, 0.1, 1, 50.0).unwrap(), 150);
        assert_eq!((c1 * c1 * 20.0f64.ln() / 0.02).ceil() as u64, 702);
        assert_eq!(per_query_budget(0.1, 0.1, 1, 1.0).unwrap(), 702);
        assert_eq!((c1 * c1 * 100.0f64.ln() / 0.02).ceil() as u64, 1079);
        assert_eq!(per_query_budget(0.1, 0.1, 5, 1.0).unwrap(), 1079);
        // Growth in m follows the log ratio before rounding.
        let ratio = 100.0f64.ln() / 20.0f64.ln();
        assert!((1079.0 / 702.0 - ratio).abs() < 0.01);
    }

    #[test]
    fn per_query_budget_monotonicity() {
        let base = per_query_budget(0.1, 0.1, 4, 1.0).unwrap();
        assert!(per_query_budget(0.2, 0.1, 4, 1.0).unwrap() <= base);
        assert!(per_query_budget(0.1, 0.2, 4, 1.0).unwrap() <= base);
        assert!(per_query_budget(0.1, 0.1, 4, 2.0).unwrap() <= base);
        assert!(per_query_budget(0.1, 0.1, 8, 1.0).unwrap() >= base);
        assert!(per_query_budget(0.1, 0.1, 4, 0.0).is_err());
    }

    #[test]
    fn debiased_estimate_is_not_clipped() {
        // All-positive responses push the estimate above 1.
        let e = std::f64::consts::E;
        let v = debiased_estimate(100, 100, 1.0);
        assert!((v - e / (e - 1.0)).abs() < 1e-12);
        assert!(v > 1.0);
        assert!(debiased_estimate(0, 100, 1.0) < 0.0);
    }

    #[test]
    fn rr_answer_near_noiseless_at_high_epsilon() {
        let h = dist(&[1.0, 0.0]);
        let w = workload(vec![EventSet::from_indices(2, &[0])], 0.1, 0.1, 1);
        let mut db = Database::from_distribution(&h, 3, 1_000);
        let mut rng = Prng::seed_from_u64(4);
        let mut ledger = PrivacyLedger::new(Some(50.0));
        let ans = rr_sqoc_answer(&mut db, &w, 50.0, &mut rng, &mut ledger).unwrap();
        assert!((ans[0] - 1.0).abs() <= 0.01);
        let p = per_query_budget(0.1, 0.1, 1, 50.0).unwrap();
        assert_eq!(ledger.samples_consumed, p);
        assert_eq!(ledger.oracle_rounds, 1);
        assert_eq!(ledger.queries_answered, 1);
        assert_eq!(db.cursor(), p);
        assert!(db.one_pass_ok());
    }

    #[test]
    fn rr_answer_is_unbiased() {
        // Mean over repetitions stays within 4 sigma of the true mass, with
        // sigma <= c / (2 sqrt(pT)).
        let h = dist(&[0.3, 0.7]);
        let q = EventSet::from_indices(2, &[0]);
        let w = workload(vec![q], 0.2, 0.2, 1);
        let p = 500u64;
        let trials = 2000u64;
        let mut rng = Prng::seed_from_u64(6);
        let mut total = 0.0;
        for i in 0..trials {
            let mut db = Database::from_distribution(&h, 100 + i, p);
            let mut ledger = PrivacyLedger::new(Some(1.0));
            total +=
                rr_sqoc_answer_with_budget(&mut db, &w, 1.0, p, &mut rng, &mut ledger).unwrap()[0];
        }
        let mean = total / trials as f64;
        let bound = 4.0 * debias_factor(1.0) / (2.0 * ((p * trials) as f64).sqrt());
        assert!((mean - 0.3).abs() <= bound, "mean {mean}, bound {bound}");
    }

    #[test]
    fn rr_answer_exhaustion_consumes_nothing() {
        let h = dist(&[0.5, 0.5]);
        let w = workload(vec![EventSet::full(2)], 0.1, 0.1, 1);
        let mut db = Database::from_distribution(&h, 8, 10);
        let mut rng = Prng::seed_from_u64(9);
        let mut ledger = PrivacyLedger::new(Some(1.0));
        assert!(matches!(
            rr_sqoc_answer(&mut db, &w, 1.0, &mut rng, &mut ledger),
            Err(OracleError::Exhausted { .. })
        ));
        assert_eq!(db.cursor(), 0);
        assert_eq!(ledger.samples_consumed, 0);
    }

    #[test]
    fn sqoc_guarantee_holds_on_a_fixed_critical_subset() {
        // 12-query workload, 3 critical; the fixed subset's max error exceeds
        // alpha in at most beta + 3 sqrt(beta/T) of trials.
        let weights: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let h = dist(&weights);
        let queries: Vec<EventSet> = (0..12)
            .map(|i| EventSet::from_indices(8, &[i % 8, (i + 3) % 8, (i * 5 + 1) % 8]))
            .collect();
        let truths: Vec<f64> = queries
            .iter()
            .map(|q| h.event_probability(q).unwrap())
            .collect();
        let (alpha, beta) = (0.2, 0.2);
        let w = workload(queries, alpha, beta, 3);
        let subset = [0usize, 5, 9];
        let p = per_query_budget(alpha, beta, 3, 1.0).unwrap();
        let trials = 2000;
        let mut rng = Prng::seed_from_u64(10);
        let mut failures = 0;
        for i in 0..trials {
            let mut db = Database::from_distribution(&h, 500 + i, p * 12);
            let mut ledger = PrivacyLedger::new(Some(1.0));
            let ans = rr_sqoc_answer(&mut db, &w, 1.0, &mut rng, &mut ledger).unwrap();
            if subset.iter().any(|&j| (ans[j] - truths[j]).abs() > alpha) {
                failures += 1;
            }
        }
        let rate = failures as f64 / trials as f64;
        let bound = beta + 3.0 * (beta / trials as f64).sqrt();
        assert!(rate <= bound, "rate {rate}, bound {bound}");
    }

    #[test]
    fn lr_call_cursor_semantics() {
        let mut db = Database::from_samples(vec![1, 0, 1]);
        let out = lr_call(&mut db, 3, |_, x| x as u8).unwrap();
        assert_eq!(out, vec![1, 0, 1]);
        assert_eq!(db.cursor(), 3);
        assert!(lr_call(&mut db, 1, |_, x| x as u8).is_none());

        let mut db = Database::from_samples(vec![1, 0, 1]);
        assert!(lr_call(&mut db, 2, |_, x| x).is_some());
        assert!(lr_call(&mut db, 2, |_, x| x).is_none());
        assert_eq!(db.cursor(), 2);
        assert!(db.one_pass_ok());
    }

    proptest! {
        #[test]
        fn lr_call_matches_reference_cursor_model(
            capacity in 0usize..40,
            requests in proptest::collection::vec(0usize..12, 0..20),
        ) {
            let samples: Vec<usize> = (0..capacity).collect();
            let mut db = Database::from_samples(samples);
            let mut model_cursor = 0usize;
            for n in requests {
                let got = lr_call(&mut db, n, |_, x| x);
                if n + model_cursor > capacity {
                    prop_assert!(got.is_none());
                } else {
                    let out = got.expect("within budget");
                    // Outputs are exactly the next n sample indices.
                    prop_assert_eq!(out, (model_cursor..model_cursor + n).collect::<Vec<_>>());
                    model_cursor += n;
                }
                prop_assert_eq!(db.cursor(), model_cursor as u64);
            }
            prop_assert!(db.one_pass_ok());
        }
    }
}
