//! Hypothesis selection algorithms, generic over the oracle contract.
//!
//! All selectors batch each adaptive round into a single oracle submission:
//!
//! - [`round_robin`] and [`mde_variant`] are one-round tournaments over all
//!   pairs,
//! - [`boosted_knockout`] repeatedly pairs survivors at random and keeps
//!   members winning at least 3/4 of their comparisons; only the repetitions
//!   involving any one member are critical, so its workloads carry small
//!   critical counts,
//! - [`boosted_srr`] partitions survivors into groups whose size squares
//!   every round and keeps the group winners of several repeated partitions,
//! - [`bokserr`] chains knockout, sequential round-robin, and a final
//!   minimum-distance selection over the surviving pool plus random
//!   sub-samples.
//!
//! [`budget_plan`] simulates worst-case workload sizes round by round, which
//! pins the database size an experiment needs up front.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DiscreteDistribution, DistError, EventSet, HypothesisClass};
use crate::oracles::{
    per_query_budget, shared_block_size, Oracle, OracleError, PrivacyLedger, Workload,
};
use crate::Prng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("insufficient sample budget in {stage} stage: {source}")]
    InsufficientBudget { stage: Stage, source: OracleError },
    #[error("oracle error in {stage} stage: {source}")]
    Oracle { stage: Stage, source: OracleError },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl SelectError {
    fn from_oracle(stage: Stage, source: OracleError) -> Self {
        match source {
            OracleError::Exhausted { .. } => SelectError::InsufficientBudget { stage, source },
            _ => SelectError::Oracle { stage, source },
        }
    }
}

/// Pipeline stage an oracle submission belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RoundRobin,
    Mde,
    Knockout,
    Srr,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::RoundRobin => write!(f, "round-robin"),
            Stage::Mde => write!(f, "mde"),
            Stage::Knockout => write!(f, "knockout"),
            Stage::Srr => write!(f, "sequential-round-robin"),
        }
    }
}

/// One oracle submission as recorded by a selector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLogEntry {
    pub round: usize,
    pub stage: Stage,
    pub workload_size: usize,
    pub critical_count: usize,
    pub alpha: f64,
    pub beta: f64,
    pub samples_consumed: u64,
    /// Survivor count after elimination rounds (knockout and SRR only).
    pub survivors_after: Option<usize>,
}

/// Index lists produced by intermediate stages, when the selector has them.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IntermediateLists {
    pub l1: Option<Vec<usize>>,
    pub l2: Option<Vec<usize>>,
    pub k1: Option<Vec<usize>>,
    pub k2: Option<Vec<usize>>,
    pub r1: Option<Vec<usize>>,
    pub r2: Option<Vec<usize>>,
}

/// Result of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionOutcome {
    pub chosen_index: usize,
    pub rounds_used: usize,
    pub ledger: PrivacyLedger,
    pub intermediate: IntermediateLists,
    pub round_log: Vec<RoundLogEntry>,
}

impl SelectionOutcome {
    fn trivial<O: Oracle>(chosen: usize, oracle: &O) -> Self {
        Self {
            chosen_index: chosen,
            rounds_used: 0,
            ledger: oracle.ledger().clone(),
            intermediate: IntermediateLists::default(),
            round_log: Vec::new(),
        }
    }
}

/// Winner of a two-way comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheffeWinner {
    First,
    Second,
}

/// Decides between `f1` and `f2` given an estimate `y` of the target's mass
/// on their distinguishing event `{x : f1(x) > f2(x)}`. Ties favor `f1`.
pub fn scheffe_test(
    f1: &DiscreteDistribution,
    f2: &DiscreteDistribution,
    y: f64,
) -> Result<ScheffeWinner, DistError> {
    let set = f1.scheffe_set(f2)?;
    scheffe_winner_on(f1, f2, &set, y)
}

fn scheffe_winner_on(
    f1: &DiscreteDistribution,
    f2: &DiscreteDistribution,
    set: &EventSet,
    y: f64,
) -> Result<ScheffeWinner, DistError> {
    let r1 = (f1.event_probability(set)? - y).abs();
    let r2 = (f2.event_probability(set)? - y).abs();
    Ok(if r1 <= r2 {
        ScheffeWinner::First
    } else {
        ScheffeWinner::Second
    })
}

fn submit<O: Oracle>(
    oracle: &mut O,
    queries: Vec<EventSet>,
    alpha: f64,
    beta: f64,
    critical: usize,
    stage: Stage,
    log: &mut Vec<RoundLogEntry>,
) -> Result<(Vec<f64>, Workload), SelectError> {
    let workload = Workload::new(queries, alpha, beta, critical)
        .map_err(|e| SelectError::from_oracle(stage, e))?;
    let before = oracle.ledger().samples_consumed;
    let answers = oracle
        .answer(&workload)
        .map_err(|e| SelectError::from_oracle(stage, e))?;
    log.push(RoundLogEntry {
        round: log.len() + 1,
        stage,
        workload_size: workload.len(),
        critical_count: critical,
        alpha,
        beta,
        samples_consumed: oracle.ledger().samples_consumed - before,
        survivors_after: None,
    });
    Ok((answers, workload))
}

fn scheffe_queries(
    class: &HypothesisClass,
    pairs: &[(usize, usize)],
) -> Result<Vec<EventSet>, SelectError> {
    pairs
        .iter()
        .map(|&(a, b)| {
            class
                .member(a)
                .scheffe_set(class.member(b))
                .map_err(SelectError::from)
        })
        .collect()
}

fn position_pairs(len: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(len * len.saturating_sub(1) / 2);
    for i in 0..len {
        for j in i + 1..len {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Win tally over one ordered member list; ties break toward the earliest
/// position. `answers[idx]` and `queries[idx]` correspond to `pairs[idx]`.
fn tally_round_robin(
    class: &HypothesisClass,
    members: &[usize],
    pairs: &[(usize, usize)],
    queries: &[EventSet],
    answers: &[f64],
) -> Result<usize, SelectError> {
    let mut wins = vec![0u64; members.len()];
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        match scheffe_winner_on(
            class.member(members[i]),
            class.member(members[j]),
            &queries[idx],
            answers[idx],
        )? {
            ScheffeWinner::First => wins[i] += 1,
            ScheffeWinner::Second => wins[j] += 1,
        }
    }
    let mut best = 0;
    for pos in 1..members.len() {
        if wins[pos] > wins[best] {
            best = pos;
        }
    }
    Ok(members[best])
}

fn round_robin_core<O: Oracle>(
    class: &HypothesisClass,
    members: &[usize],
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    log: &mut Vec<RoundLogEntry>,
) -> Result<usize, SelectError> {
    if members.len() == 1 {
        return Ok(members[0]);
    }
    let pairs = position_pairs(members.len());
    let orig: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(i, j)| (members[i], members[j]))
        .collect();
    let queries = scheffe_queries(class, &orig)?;
    let m = queries.len();
    let (answers, workload) = submit(oracle, queries, alpha, beta, m, Stage::RoundRobin, log)?;
    tally_round_robin(class, members, &pairs, workload.queries(), &answers)
}

/// Runs every pairwise comparison in one round and returns the member with
/// the most wins (lowest index on ties).
pub fn round_robin<O: Oracle>(
    class: &HypothesisClass,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
) -> Result<SelectionOutcome, SelectError> {
    let members: Vec<usize> = (0..class.len()).collect();
    if members.len() == 1 {
        return Ok(SelectionOutcome::trivial(0, oracle));
    }
    let mut log = Vec::new();
    let chosen = round_robin_core(class, &members, oracle, alpha, beta, &mut log)?;
    Ok(SelectionOutcome {
        chosen_index: chosen,
        rounds_used: log.len(),
        ledger: oracle.ledger().clone(),
        intermediate: IntermediateLists::default(),
        round_log: log,
    })
}

fn mde_core<O: Oracle>(
    class: &HypothesisClass,
    members: &[usize],
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    log: &mut Vec<RoundLogEntry>,
) -> Result<usize, SelectError> {
    if members.len() == 1 {
        return Ok(members[0]);
    }
    let pairs = position_pairs(members.len());
    let orig: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(i, j)| (members[i], members[j]))
        .collect();
    let queries = scheffe_queries(class, &orig)?;
    let m = queries.len();
    let (answers, workload) = submit(oracle, queries, alpha, beta, m, Stage::Mde, log)?;
    // Each member's score is its largest residual against the estimated
    // target mass over every pair set it appears in; both endpoints of a
    // pair share one answer.
    let mut score = vec![0.0f64; members.len()];
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        let set = &workload.queries()[idx];
        let y = answers[idx];
        let ri = (class.member(members[i]).event_probability(set)? - y).abs();
        let rj = (class.member(members[j]).event_probability(set)? - y).abs();
        score[i] = score[i].max(ri);
        score[j] = score[j].max(rj);
    }
    let mut best = 0;
    for pos in 1..members.len() {
        if score[pos] < score[best] {
            best = pos;
        }
    }
    Ok(members[best])
}

/// Minimum-distance selection: one round over all pair sets, returning the
/// member whose worst residual against the answers is smallest (lowest index
/// on ties).
pub fn mde_variant<O: Oracle>(
    class: &HypothesisClass,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
) -> Result<SelectionOutcome, SelectError> {
    let members: Vec<usize> = (0..class.len()).collect();
    if members.len() == 1 {
        return Ok(SelectionOutcome::trivial(0, oracle));
    }
    let mut log = Vec::new();
    let chosen = mde_core(class, &members, oracle, alpha, beta, &mut log)?;
    Ok(SelectionOutcome {
        chosen_index: chosen,
        rounds_used: log.len(),
        ledger: oracle.ledger().clone(),
        intermediate: IntermediateLists::default(),
        round_log: log,
    })
}

/// Random partition into groups of at most `eta` members; the last group may
/// be smaller. Group composition is random; member order within a group is
/// canonical (ascending) so pair orientation and ties are deterministic.
fn partition_groups(survivors: &[usize], eta: usize, rng: &mut Prng) -> Vec<Vec<usize>> {
    let mut shuffled = survivors.to_vec();
    shuffled.shuffle(rng);
    shuffled
        .chunks(eta.max(1))
        .map(|chunk| {
            let mut group = chunk.to_vec();
            group.sort_unstable();
            group
        })
        .collect()
}

struct GroupRound {
    groups: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

fn plan_group_queries(
    class: &HypothesisClass,
    groups: Vec<Vec<usize>>,
    queries: &mut Vec<EventSet>,
) -> Result<GroupRound, SelectError> {
    let mut offsets = Vec::with_capacity(groups.len());
    for group in &groups {
        offsets.push(queries.len());
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                queries.push(class.member(group[i]).scheffe_set(class.member(group[j]))?);
            }
        }
    }
    Ok(GroupRound { groups, offsets })
}

fn eval_group_winners(
    class: &HypothesisClass,
    round: &GroupRound,
    queries: &[EventSet],
    answers: &[f64],
) -> Result<Vec<usize>, SelectError> {
    let mut winners = Vec::with_capacity(round.groups.len());
    for (group, &offset) in round.groups.iter().zip(&round.offsets) {
        let pairs = position_pairs(group.len());
        let end = offset + pairs.len();
        winners.push(tally_round_robin(
            class,
            group,
            &pairs,
            &queries[offset..end],
            &answers[offset..end],
        )?);
    }
    Ok(winners)
}

/// Partitions the class into groups of size at most `eta`, runs one
/// round-robin per group in a single submission, and returns the group
/// winners.
pub fn multi_round_robin<O: Oracle>(
    class: &HypothesisClass,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    eta: u64,
    rng: &mut Prng,
) -> Result<Vec<usize>, SelectError> {
    if eta < 2 {
        return Err(SelectError::InvalidParameter(format!(
            "eta must be at least 2, got {eta}"
        )));
    }
    let members: Vec<usize> = (0..class.len()).collect();
    if members.len() == 1 {
        return Ok(members);
    }
    let groups = partition_groups(&members, eta as usize, rng);
    let mut queries = Vec::new();
    let round = plan_group_queries(class, groups, &mut queries)?;
    let m = queries.len();
    let mut log = Vec::new();
    let (answers, workload) = submit(oracle, queries, alpha, beta, m, Stage::Srr, &mut log)?;
    eval_group_winners(class, &round, workload.queries(), &answers)
}

/// Constant multipliers applied to repetition counts and sub-sample sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstMultipliers {
    /// Scales knockout pairing repetitions per round.
    pub c_r: f64,
    /// Scales SRR partition repetitions per round.
    pub c_rep: f64,
    /// Scales the knockout sub-sample size.
    pub c_n1: f64,
    /// Scales the SRR sub-sample size.
    pub c_n2: f64,
}

impl ConstMultipliers {
    pub const UNIT: Self = Self {
        c_r: 1.0,
        c_rep: 1.0,
        c_n1: 1.0,
        c_n2: 1.0,
    };

    /// Default scaling for experiments; keeps intermediate lists meaningful
    /// at desk-scale `k` where the literal constants saturate everything.
    pub const PRACTICAL: Self = Self {
        c_r: 0.25,
        c_rep: 0.25,
        c_n1: 0.25,
        c_n2: 0.25,
    };
}

impl Default for ConstMultipliers {
    fn default() -> Self {
        Self::UNIT
    }
}

/// Parameter regime for the pipeline constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    /// Literal constants from the analysis.
    Theory,
    /// Same formulas with scaled repetition and sub-sample constants.
    Practical,
}

impl ParamMode {
    pub fn default_scales(self) -> ConstMultipliers {
        match self {
            ParamMode::Theory => ConstMultipliers::UNIT,
            ParamMode::Practical => ConstMultipliers::PRACTICAL,
        }
    }
}

/// Derived pipeline parameters for a class of `k` members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BokserrParams {
    pub k: usize,
    /// Knockout rounds actually run (clamped so knockout stops by the time
    /// elimination forces a singleton).
    pub t1: u32,
    /// Knockout rounds before clamping, per the literal formula.
    pub t1_unclamped: u32,
    /// SRR rounds.
    pub t2: u32,
    /// Residual class-size scale after the unclamped knockout schedule.
    pub k_prime: f64,
    /// Initial SRR group size.
    pub eta: u64,
    pub mode: ParamMode,
    pub scales: ConstMultipliers,
}

fn log2_inv(beta: f64) -> f64 {
    (1.0 / beta).log2()
}

/// `max(1, ceil(log2 log2 x))`.
fn loglog2_ceil(x: f64) -> u32 {
    let v = x.log2().log2().ceil();
    if v.is_nan() || v < 1.0 {
        1
    } else {
        v as u32
    }
}

/// Derives round counts and the SRR group size for a class of `k` members.
/// All logarithms are base 2, with ceilings where integers are needed.
pub fn bokserr_params(k: usize, beta: f64, mode: ParamMode) -> Result<BokserrParams, SelectError> {
    bokserr_params_scaled(k, beta, mode, mode.default_scales())
}

/// Same as [`bokserr_params`] with explicit constant multipliers.
pub fn bokserr_params_scaled(
    k: usize,
    beta: f64,
    mode: ParamMode,
    scales: ConstMultipliers,
) -> Result<BokserrParams, SelectError> {
    if k < 2 {
        return Err(SelectError::InvalidParameter(format!(
            "class size must be at least 2, got {k}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(SelectError::InvalidParameter(format!(
            "beta must lie in (0,1), got {beta}"
        )));
    }
    let ll_k = loglog2_ceil(k as f64);
    let ll_b = loglog2_ceil(3.0 / beta);
    let t1_unclamped = (5 + 4 * ll_b) * ll_k;
    let t2 = ll_k - 1;
    let k_prime = k as f64 / 1.5f64.powi(t1_unclamped as i32);
    let eta_raw = k_prime.powf(1.0 / 2f64.powi(t2 as i32 + 1));
    let eta = eta_raw.round().max(2.0) as u64;
    // Past this many rounds elimination has already forced a singleton, so a
    // longer schedule only wastes budget.
    let t1_cap = ((k as f64).ln() / 1.5f64.ln()).ceil() as u32;
    Ok(BokserrParams {
        k,
        t1: t1_unclamped.min(t1_cap),
        t1_unclamped,
        t2,
        k_prime,
        eta,
        mode,
        scales,
    })
}

fn knockout_reps(round: u32, beta: f64, c_r: f64) -> u64 {
    let raw = (c_r * 32.0 * (4.0f64 / 3.0).powi(round as i32) * log2_inv(beta)).ceil();
    (raw as u64).max(1)
}

fn srr_reps(beta: f64, c_rep: f64) -> u64 {
    ((c_rep * log2_inv(beta)).ceil() as u64).max(1)
}

fn knockout_subsample_size(k: usize, beta: f64, t: u32, c_n1: f64) -> usize {
    let raw = (c_n1 * 8.0 * log2_inv(beta) * 1.5f64.powi(t as i32)).ceil();
    (raw as u64).max(1).min(k as u64) as usize
}

fn srr_subsample_size(k: usize, beta: f64, eta: u64, t: u32, c_n2: f64) -> usize {
    let eta_pow = (eta as f64).powf(2f64.powi(t as i32));
    let raw = (c_n2 * 2.0 * eta_pow * log2_inv(beta)).ceil();
    (raw as u64).max(1).min(k as u64) as usize
}

fn sample_without_replacement(pool: &[usize], amount: usize, rng: &mut Prng) -> Vec<usize> {
    let amount = amount.min(pool.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Minimum win count that clears the 3/4 threshold out of `r` comparisons.
fn knockout_win_threshold(r: u64) -> u64 {
    (3 * r).div_ceil(4)
}

#[allow(clippy::too_many_arguments)]
fn knockout_core<O: Oracle>(
    class: &HypothesisClass,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    t: u32,
    scales: &ConstMultipliers,
    rng: &mut Prng,
    log: &mut Vec<RoundLogEntry>,
) -> Result<(Vec<usize>, Vec<usize>), SelectError> {
    let k = class.len();
    let all: Vec<usize> = (0..k).collect();
    let sub = knockout_subsample_size(k, beta, t, scales.c_n1);
    let l2 = sample_without_replacement(&all, sub, rng);
    let mut survivors = all;
    let mut wins = vec![0u64; k];
    for round in 1..=t {
        if survivors.len() <= 1 {
            break;
        }
        let r = knockout_reps(round, beta, scales.c_r);
        wins.fill(0);
        // r independent random pairings; the unpaired member of an odd list
        // gets a bye counted as a win. Every survivor is involved in exactly
        // r comparisons, so the 3/4 threshold applies to r.
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(r as usize * (survivors.len() / 2));
        let mut shuffled = survivors.clone();
        for _ in 0..r {
            shuffled.shuffle(rng);
            let mut chunks = shuffled.chunks_exact(2);
            for chunk in &mut chunks {
                pairs.push((chunk[0].min(chunk[1]), chunk[0].max(chunk[1])));
            }
            if let [bye] = chunks.remainder() {
                wins[*bye] += 1;
            }
        }
        let queries = scheffe_queries(class, &pairs)?;
        let (answers, workload) = submit(
            oracle,
            queries,
            alpha,
            beta,
            r as usize,
            Stage::Knockout,
            log,
        )?;
        for (idx, &(a, b)) in pairs.iter().enumerate() {
            match scheffe_winner_on(
                class.member(a),
                class.member(b),
                &workload.queries()[idx],
                answers[idx],
            )? {
                ScheffeWinner::First => wins[a] += 1,
                ScheffeWinner::Second => wins[b] += 1,
            }
        }
        let threshold = knockout_win_threshold(r);
        survivors.retain(|&m| wins[m] >= threshold);
        log.last_mut().expect("just pushed").survivors_after = Some(survivors.len());
    }
    Ok((survivors, l2))
}

/// Boosted knockout: `t` elimination rounds plus an up-front random
/// sub-sample of the input class. Returns the survivor list, the sub-sample,
/// and the run record (whose chosen index is the lowest-index survivor,
/// falling back to the sub-sample).
pub fn boosted_knockout<O: Oracle>(
    class: &HypothesisClass,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    t: u32,
    scales: &ConstMultipliers,
    rng: &mut Prng,
) -> Result<(Vec<usize>, Vec<usize>, SelectionOutcome), SelectError> {
    if t < 1 {
        return Err(SelectError::InvalidParameter(
            "knockout needs at least one round".into(),
        ));
    }
    let mut log = Vec::new();
    let (l1, l2) = knockout_core(class, oracle, alpha, beta, t, scales, rng, &mut log)?;
    let chosen = l1
        .first()
        .copied()
        .or_else(|| l2.first().copied())
        .unwrap_or(0);
    let outcome = SelectionOutcome {
        chosen_index: chosen,
        rounds_used: log.len(),
        ledger: oracle.ledger().clone(),
        intermediate: IntermediateLists {
            l1: Some(l1.clone()),
            l2: Some(l2.clone()),
            ..Default::default()
        },
        round_log: log,
    };
    Ok((l1, l2, outcome))
}

#[allow(clippy::too_many_arguments)]
fn srr_core<O: Oracle>(
    class: &HypothesisClass,
    members: Vec<usize>,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    eta: u64,
    t: u32,
    scales: &ConstMultipliers,
    rng: &mut Prng,
    log: &mut Vec<RoundLogEntry>,
) -> Result<(Vec<usize>, Vec<usize>), SelectError> {
    let sub = srr_subsample_size(members.len(), beta, eta, t, scales.c_n2);
    let l2 = sample_without_replacement(&members, sub, rng);
    let mut survivors = members;
    let mut group_size = eta;
    for _ in 1..=t {
        if survivors.len() <= 1 {
            break;
        }
        let reps = srr_reps(beta, scales.c_rep);
        let mut queries = Vec::new();
        let mut rounds = Vec::with_capacity(reps as usize);
        for _ in 0..reps {
            let groups = partition_groups(&survivors, group_size as usize, rng);
            rounds.push(plan_group_queries(class, groups, &mut queries)?);
        }
        let m = queries.len();
        let (answers, workload) = submit(oracle, queries, alpha, beta, m, Stage::Srr, log)?;
        let mut next: Vec<usize> = Vec::new();
        for round in &rounds {
            next.extend(eval_group_winners(
                class,
                round,
                workload.queries(),
                &answers,
            )?);
        }
        next.sort_unstable();
        next.dedup();
        survivors = next;
        log.last_mut().expect("just pushed").survivors_after = Some(survivors.len());
        group_size = group_size.saturating_mul(group_size);
    }
    Ok((survivors, l2))
}

/// Boosted sequential round-robin: `t` rounds of repeated random partitions
/// with group sizes squaring each round, plus an up-front random sub-sample.
#[allow(clippy::too_many_arguments)]
pub fn boosted_srr<O: Oracle>(
    class: &HypothesisClass,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    eta: u64,
    t: u32,
    scales: &ConstMultipliers,
    rng: &mut Prng,
) -> Result<(Vec<usize>, Vec<usize>, SelectionOutcome), SelectError> {
    if eta < 2 {
        return Err(SelectError::InvalidParameter(format!(
            "eta must be at least 2, got {eta}"
        )));
    }
    let members: Vec<usize> = (0..class.len()).collect();
    let mut log = Vec::new();
    let (l1, l2) = srr_core(
        class, members, oracle, alpha, beta, eta, t, scales, rng, &mut log,
    )?;
    let chosen = l1
        .first()
        .copied()
        .or_else(|| l2.first().copied())
        .unwrap_or(0);
    let outcome = SelectionOutcome {
        chosen_index: chosen,
        rounds_used: log.len(),
        ledger: oracle.ledger().clone(),
        intermediate: IntermediateLists {
            l1: Some(l1.clone()),
            l2: Some(l2.clone()),
            ..Default::default()
        },
        round_log: log,
    };
    Ok((l1, l2, outcome))
}

/// First-occurrence deduplication preserving list order.
fn dedup_preserving_order(lists: &[&[usize]]) -> Vec<usize> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for list in lists {
        for &m in *list {
            if seen.insert(m) {
                out.push(m);
            }
        }
    }
    out
}

/// Full selection pipeline: boosted knockout at accuracy `alpha/6`, boosted
/// SRR on the knockout survivors, then minimum-distance selection at
/// `alpha/2` over the surviving pool and both sub-samples (deduplicated in
/// K2, R1, R2 order).
pub fn bokserr<O: Oracle>(
    class: &HypothesisClass,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    params: &BokserrParams,
    rng: &mut Prng,
) -> Result<SelectionOutcome, SelectError> {
    if class.len() == 1 {
        let mut outcome = SelectionOutcome::trivial(0, oracle);
        outcome.intermediate = IntermediateLists {
            k1: Some(vec![0]),
            k2: Some(vec![0]),
            r1: Some(vec![0]),
            r2: Some(vec![0]),
            ..Default::default()
        };
        return Ok(outcome);
    }
    if params.k != class.len() {
        return Err(SelectError::InvalidParameter(format!(
            "parameters were derived for k={}, class has k={}",
            params.k,
            class.len()
        )));
    }
    let mut log = Vec::new();
    let (k1, k2) = knockout_core(
        class,
        oracle,
        alpha / 6.0,
        beta / 3.0,
        params.t1,
        &params.scales,
        rng,
        &mut log,
    )?;
    let (r1, r2) = srr_core(
        class,
        k1.clone(),
        oracle,
        alpha / 6.0,
        beta / 3.0,
        params.eta,
        params.t2,
        &params.scales,
        rng,
        &mut log,
    )?;
    let pool = dedup_preserving_order(&[&k2, &r1, &r2]);
    let chosen = mde_core(class, &pool, oracle, alpha / 2.0, beta / 3.0, &mut log)?;
    Ok(SelectionOutcome {
        chosen_index: chosen,
        rounds_used: log.len(),
        ledger: oracle.ledger().clone(),
        intermediate: IntermediateLists {
            k1: Some(k1),
            k2: Some(k2),
            r1: Some(r1),
            r2: Some(r2),
            ..Default::default()
        },
        round_log: log,
    })
}

/// Selection algorithm exposed by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bokserr,
    RoundRobin,
    MdeVariant,
    KnockoutOnly,
    SrrOnly,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Bokserr => write!(f, "bokserr"),
            Algorithm::RoundRobin => write!(f, "round-robin"),
            Algorithm::MdeVariant => write!(f, "mde"),
            Algorithm::KnockoutOnly => write!(f, "knockout"),
            Algorithm::SrrOnly => write!(f, "srr"),
        }
    }
}

/// Runs the chosen algorithm. The knockout-only and SRR-only variants report
/// the lowest-index member of their survivor list (falling back to the
/// sub-sample) as the chosen hypothesis.
pub fn run_algorithm<O: Oracle>(
    algo: Algorithm,
    class: &HypothesisClass,
    oracle: &mut O,
    alpha: f64,
    beta: f64,
    params: &BokserrParams,
    rng: &mut Prng,
) -> Result<SelectionOutcome, SelectError> {
    if class.len() == 1 {
        return Ok(SelectionOutcome::trivial(0, oracle));
    }
    match algo {
        Algorithm::Bokserr => bokserr(class, oracle, alpha, beta, params, rng),
        Algorithm::RoundRobin => round_robin(class, oracle, alpha, beta),
        Algorithm::MdeVariant => mde_variant(class, oracle, alpha, beta),
        Algorithm::KnockoutOnly => {
            boosted_knockout(class, oracle, alpha, beta, params.t1, &params.scales, rng)
                .map(|(_, _, outcome)| outcome)
        }
        Algorithm::SrrOnly => boosted_srr(
            class,
            oracle,
            alpha,
            beta,
            params.eta,
            params.t2,
            &params.scales,
            rng,
        )
        .map(|(_, _, outcome)| outcome),
    }
}

/// One planned oracle round in a worst-case budget simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedRound {
    pub stage: Stage,
    pub round: usize,
    pub workload_size: u64,
    pub critical_count: u64,
    pub alpha: f64,
    pub beta: f64,
}

impl PlannedRound {
    /// Samples the randomized-response oracle spends on this round.
    pub fn rr_samples(&self, epsilon: f64) -> Result<u64, OracleError> {
        let p = per_query_budget(self.alpha, self.beta, self.critical_count, epsilon)?;
        Ok(p.saturating_mul(self.workload_size))
    }

    /// Samples the empirical oracle spends on this round (one shared block).
    pub fn empirical_samples(&self) -> u64 {
        shared_block_size(self.workload_size as usize, self.alpha, self.beta)
    }
}

fn choose2(x: u64) -> u64 {
    x * x.saturating_sub(1) / 2
}

/// Worst-case knockout schedule: no early exit, survivors shrinking at the
/// slowest rate the 3/4-win threshold permits. Returns the survivor bound.
fn knockout_plan(
    k: u64,
    alpha: f64,
    beta: f64,
    t: u32,
    scales: &ConstMultipliers,
    plan: &mut Vec<PlannedRound>,
) -> u64 {
    let mut survivors = k;
    for round in 1..=t {
        if survivors <= 1 {
            break;
        }
        let r = knockout_reps(round, beta, scales.c_r);
        let pairs = survivors / 2;
        plan.push(PlannedRound {
            stage: Stage::Knockout,
            round: round as usize,
            workload_size: r * pairs,
            critical_count: r,
            alpha,
            beta,
        });
        let total_wins = r * survivors.div_ceil(2);
        survivors = survivors.min(total_wins / knockout_win_threshold(r));
    }
    survivors
}

/// Worst-case SRR schedule on an input of `k_in` members.
fn srr_plan(
    k_in: u64,
    alpha: f64,
    beta: f64,
    eta: u64,
    t: u32,
    scales: &ConstMultipliers,
    plan: &mut Vec<PlannedRound>,
) -> u64 {
    let mut survivors = k_in;
    let mut group_size = eta.max(2);
    let reps = srr_reps(beta, scales.c_rep);
    for round in 1..=t {
        if survivors <= 1 {
            break;
        }
        let full = survivors / group_size;
        let rem = survivors % group_size;
        let per_rep = full * choose2(group_size) + choose2(rem);
        if per_rep == 0 {
            break;
        }
        plan.push(PlannedRound {
            stage: Stage::Srr,
            round: round as usize,
            workload_size: reps * per_rep,
            critical_count: reps * per_rep,
            alpha,
            beta,
        });
        survivors = survivors.min(reps * survivors.div_ceil(group_size));
        group_size = group_size.saturating_mul(group_size);
    }
    survivors
}

/// Deterministic worst-case round schedule for an algorithm: workload sizes
/// and critical counts per round assuming no early exit. Actual runs never
/// exceed these sizes round for round.
pub fn budget_plan(
    algo: Algorithm,
    k: usize,
    alpha: f64,
    beta: f64,
    params: &BokserrParams,
) -> Vec<PlannedRound> {
    let mut plan = Vec::new();
    if k <= 1 {
        return plan;
    }
    let kk = k as u64;
    match algo {
        Algorithm::RoundRobin | Algorithm::MdeVariant => {
            let n = choose2(kk);
            plan.push(PlannedRound {
                stage: if algo == Algorithm::RoundRobin {
                    Stage::RoundRobin
                } else {
                    Stage::Mde
                },
                round: 1,
                workload_size: n,
                critical_count: n,
                alpha,
                beta,
            });
        }
        Algorithm::KnockoutOnly => {
            knockout_plan(kk, alpha, beta, params.t1, &params.scales, &mut plan);
        }
        Algorithm::SrrOnly => {
            srr_plan(
                kk,
                alpha,
                beta,
                params.eta,
                params.t2,
                &params.scales,
                &mut plan,
            );
        }
        Algorithm::Bokserr => {
            let (a_sub, b_sub) = (alpha / 6.0, beta / 3.0);
            let k1 = knockout_plan(kk, a_sub, b_sub, params.t1, &params.scales, &mut plan);
            let r1 = srr_plan(
                k1,
                a_sub,
                b_sub,
                params.eta,
                params.t2,
                &params.scales,
                &mut plan,
            );
            let k2 = knockout_subsample_size(k, b_sub, params.t1, params.scales.c_n1) as u64;
            let r2 = srr_subsample_size(
                k1 as usize,
                b_sub,
                params.eta,
                params.t2,
                params.scales.c_n2,
            ) as u64;
            let pool = (k2 + r1 + r2).min(kk);
            let n = choose2(pool);
            if n > 0 {
                plan.push(PlannedRound {
                    stage: Stage::Mde,
                    round: 1,
                    workload_size: n,
                    critical_count: n,
                    alpha: alpha / 2.0,
                    beta: b_sub,
                });
            }
        }
    }
    plan
}

/// Total randomized-response samples a plan needs.
pub fn plan_rr_total(plan: &[PlannedRound], epsilon: f64) -> Result<u64, OracleError> {
    let mut total = 0u64;
    for round in plan {
        total = total.saturating_add(round.rr_samples(epsilon)?);
    }
    Ok(total)
}

/// Total empirical-oracle samples a plan needs.
pub fn plan_empirical_total(plan: &[PlannedRound]) -> u64 {
    plan.iter().map(|r| r.empirical_samples()).sum()
}

/// Upper bound on the samples the full pipeline consumes through the
/// randomized-response oracle; every actual run stays at or below it.
pub fn budget_estimate(
    k: usize,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    params: &BokserrParams,
) -> Result<u64, OracleError> {
    plan_rr_total(
        &budget_plan(Algorithm::Bokserr, k, alpha, beta, params),
        epsilon,
    )
}
