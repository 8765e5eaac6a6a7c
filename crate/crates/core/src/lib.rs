//! Locally private hypothesis selection over finite discrete distributions.
//!
//! Given samples from an unknown distribution `h` and a class of `k` candidate
//! distributions, the selectors in this crate pick a candidate whose total
//! variation distance to `h` is within a constant factor of the best member of
//! the class. Selection runs against a statistical-query oracle; three oracle
//! backends are provided (exact, empirical, and an ε-locally-differentially-
//! private randomized-response oracle with one-pass sample accounting), plus a
//! seeded experiment harness and the `hsel` CLI.

// Parameter guards are written as `!(x > 0.0)` so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod harness;
pub mod oracles;
pub mod seeding;
pub mod selectors;

/// RNG used throughout. ChaCha8 keeps streams reproducible across platforms
/// and crate versions, which the harness determinism contract relies on.
pub type Prng = rand_chacha::ChaCha8Rng;

pub use distributions::{
    generate_instance, tv_to_class, DiscreteDistribution, DistError, EventSet, HypothesisClass,
    InstanceFamily, InstanceSpec,
};
pub use oracles::{
    empirical_answer, exact_answer, lr_call, per_query_budget, rr_bit, rr_sqoc_answer, Database,
    EmpiricalOracle, ExactOracle, Oracle, OracleError, PrivacyLedger, RrOracle, Workload,
};
pub use selectors::{
    bokserr, bokserr_params, boosted_knockout, boosted_srr, budget_estimate, mde_variant,
    multi_round_robin, round_robin, scheffe_test, Algorithm, BokserrParams, ConstMultipliers,
    ParamMode, SelectError, SelectionOutcome,
};
