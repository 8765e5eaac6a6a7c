//! Finite discrete distributions, total-variation geometry, Scheffé sets, and
//! synthetic instance generation.
//!
//! Everything works on explicit probability vectors over a domain `{0..N-1}`,
//! so TV distances, event probabilities, and Scheffé sets are exact and every
//! downstream guarantee can be brute-force checked.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::Prng;

/// Normalization slack accepted at construction time.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("weight at index {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights must have positive total mass")]
    ZeroMass,
    #[error("weights must be non-empty")]
    EmptyDomain,
    #[error("domain size mismatch: {left} vs {right}")]
    DomainMismatch { left: usize, right: usize },
    #[error("hypothesis class must contain at least one member")]
    EmptyClass,
    #[error("invalid instance spec: {0}")]
    InvalidSpec(String),
    #[error("tv offset {delta} is infeasible for this instance: {reason}")]
    InfeasibleDelta { delta: f64, reason: String },
}

/// A probability mass function over the domain `{0..N-1}`.
///
/// Weights are non-negative and sum to 1 within [`WEIGHT_TOLERANCE`] after
/// construction; the constructor normalizes raw weights. Serializes as a
/// bare weight array; deserialization re-normalizes through the constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    weights: Vec<f64>,
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = DistError;

    fn try_from(raw: Vec<f64>) -> Result<Self, DistError> {
        Self::new(&raw)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(dist: DiscreteDistribution) -> Self {
        dist.weights
    }
}

impl DiscreteDistribution {
    /// Builds a distribution by normalizing `raw_weights`.
    pub fn new(raw_weights: &[f64]) -> Result<Self, DistError> {
        if raw_weights.is_empty() {
            return Err(DistError::EmptyDomain);
        }
        for (index, &value) in raw_weights.iter().enumerate() {
            if value < 0.0 || !value.is_finite() {
                return Err(DistError::NegativeWeight { index, value });
            }
        }
        let total: f64 = raw_weights.iter().sum();
        if total <= 0.0 {
            return Err(DistError::ZeroMass);
        }
        Ok(Self {
            weights: raw_weights.iter().map(|w| w / total).collect(),
        })
    }

    /// All mass on a single point.
    pub fn point_mass(domain_size: usize, at: usize) -> Self {
        assert!(at < domain_size, "point mass index out of range");
        let mut weights = vec![0.0; domain_size];
        weights[at] = 1.0;
        Self { weights }
    }

    /// Uniform over the domain.
    pub fn uniform(domain_size: usize) -> Self {
        assert!(domain_size > 0, "empty domain");
        Self {
            weights: vec![1.0 / domain_size as f64; domain_size],
        }
    }

    pub fn domain_size(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    fn check_domain(&self, other: &Self) -> Result<(), DistError> {
        if self.domain_size() != other.domain_size() {
            return Err(DistError::DomainMismatch {
                left: self.domain_size(),
                right: other.domain_size(),
            });
        }
        Ok(())
    }

    /// Total variation distance: half the L1 distance between the mass
    /// functions. Symmetric, zero iff the vectors are identical.
    pub fn tv_distance(&self, other: &Self) -> Result<f64, DistError> {
        self.check_domain(other)?;
        let l1: f64 = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(0.5 * l1)
    }

    /// The event `{x : self(x) > other(x)}` (strict inequality, so ties are
    /// excluded and the set for a distribution against itself is empty).
    pub fn scheffe_set(&self, other: &Self) -> Result<EventSet, DistError> {
        self.check_domain(other)?;
        Ok(EventSet::new(
            self.weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| a > b)
                .collect(),
        ))
    }

    /// Probability mass of the event.
    pub fn event_probability(&self, event: &EventSet) -> Result<f64, DistError> {
        if event.len() != self.domain_size() {
            return Err(DistError::DomainMismatch {
                left: self.domain_size(),
                right: event.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(event.mask())
            .filter(|(_, &m)| m)
            .map(|(w, _)| w)
            .sum())
    }

    /// `n` i.i.d. draws, deterministic for a given seed.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<usize> {
        let mut rng = Prng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    /// `n` i.i.d. draws from an existing RNG stream.
    pub fn sample_with(&self, rng: &mut Prng, n: usize) -> Vec<usize> {
        let index = WeightedIndex::new(&self.weights).expect("weights sum to 1");
        (0..n).map(|_| index.sample(rng)).collect()
    }
}

/// A measurable subset of the domain, stored as a membership mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSet {
    mask: Vec<bool>,
}

impl EventSet {
    pub fn new(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn empty(len: usize) -> Self {
        Self {
            mask: vec![false; len],
        }
    }

    pub fn full(len: usize) -> Self {
        Self {
            mask: vec![true; len],
        }
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut mask = vec![false; len];
        for &i in indices {
            mask[i] = true;
        }
        Self { mask }
    }

    /// Mask length (the domain size this event is defined over).
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// True when no point belongs to the event.
    pub fn is_null(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn contains(&self, x: usize) -> bool {
        self.mask.get(x).copied().unwrap_or(false)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect()
    }

    /// True when the two events share no point.
    pub fn disjoint_from(&self, other: &EventSet) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !(a && b))
    }
}

/// An ordered list of candidate distributions sharing one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClass {
    members: Vec<DiscreteDistribution>,
}

impl HypothesisClass {
    pub fn new(members: Vec<DiscreteDistribution>) -> Result<Self, DistError> {
        let first = members.first().ok_or(DistError::EmptyClass)?;
        let domain = first.domain_size();
        for m in &members {
            if m.domain_size() != domain {
                return Err(DistError::DomainMismatch {
                    left: domain,
                    right: m.domain_size(),
                });
            }
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn domain_size(&self) -> usize {
        self.members[0].domain_size()
    }

    pub fn member(&self, i: usize) -> &DiscreteDistribution {
        &self.members[i]
    }

    pub fn members(&self) -> &[DiscreteDistribution] {
        &self.members
    }
}

/// Minimum TV distance from `h` to the class and the smallest index attaining
/// it.
pub fn tv_to_class(
    h: &DiscreteDistribution,
    class: &HypothesisClass,
) -> Result<(f64, usize), DistError> {
    let mut best: Option<(f64, usize)> = None;
    for (i, member) in class.members().iter().enumerate() {
        let d = h.tv_distance(member)?;
        match best {
            Some((b, _)) if d >= b => {}
            _ => best = Some((d, i)),
        }
    }
    best.ok_or(DistError::EmptyClass)
}

/// Family of synthetic experiment instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceFamily {
    /// The target is a uniformly chosen member of the class (optimum 0).
    Planted,
    /// The target sits at exactly `delta` TV distance from the class.
    Perturbed { delta: f64 },
    /// Target and members are independent Dirichlet draws.
    DirichletRandom,
}

/// Recipe for one synthetic (class, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub family: InstanceFamily,
    pub k: usize,
    pub domain_size: usize,
    /// Dirichlet concentration for random probability vectors.
    pub concentration: f64,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<(), DistError> {
        if self.k < 1 {
            return Err(DistError::InvalidSpec("k must be at least 1".into()));
        }
        if self.domain_size < 2 {
            return Err(DistError::InvalidSpec(
                "domain_size must be at least 2".into(),
            ));
        }
        if !(self.concentration > 0.0) {
            return Err(DistError::InvalidSpec(
                "concentration must be positive".into(),
            ));
        }
        if let InstanceFamily::Perturbed { delta } = self.family {
            if !(0.0..1.0).contains(&delta) {
                return Err(DistError::InvalidSpec("delta must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

fn dirichlet_vector(domain_size: usize, concentration: f64, rng: &mut Prng) -> Vec<f64> {
    let gamma = rand_distr::Gamma::new(concentration, 1.0).expect("valid gamma");
    loop {
        let draw: Vec<f64> = (0..domain_size).map(|_| gamma.sample(rng)).collect();
        if draw.iter().sum::<f64>() > 0.0 {
            return draw;
        }
        // All-zero draws can occur for tiny concentrations; redraw.
    }
}

fn random_class(spec: &InstanceSpec, rng: &mut Prng) -> Result<HypothesisClass, DistError> {
    let members = (0..spec.k)
        .map(|_| {
            DiscreteDistribution::new(&dirichlet_vector(spec.domain_size, spec.concentration, rng))
        })
        .collect::<Result<Vec<_>, _>>()?;
    HypothesisClass::new(members)
}

/// Moves exactly `delta` of mass within `base`: adds `delta` to the lightest
/// coordinate and removes the same total from the heaviest ones, so the TV
/// distance to `base` is `delta` by construction.
fn perturb_by_tv(
    base: &DiscreteDistribution,
    delta: f64,
) -> Result<DiscreteDistribution, DistError> {
    let mut weights = base.weights().to_vec();
    let receiver = weights
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let removable = 1.0 - weights[receiver];
    if delta > removable {
        return Err(DistError::InfeasibleDelta {
            delta,
            reason: format!("only {removable} mass available outside the receiving point"),
        });
    }
    let mut donors: Vec<usize> = (0..weights.len()).filter(|&i| i != receiver).collect();
    donors.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap());
    let mut remaining = delta;
    for i in donors {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(weights[i]);
        weights[i] -= take;
        remaining -= take;
    }
    weights[receiver] += delta;
    DiscreteDistribution::new(&weights)
}

const PERTURB_ATTEMPTS: usize = 64;

/// Generates the (class, target) pair described by `spec`, deterministically
/// from the seed.
pub fn generate_instance(
    spec: &InstanceSpec,
    seed: u64,
) -> Result<(HypothesisClass, DiscreteDistribution), DistError> {
    spec.validate()?;
    let mut rng = seeding::stream_rng(seed, 0x1a57a9ce);
    match spec.family {
        InstanceFamily::Planted => {
            let class = random_class(spec, &mut rng)?;
            let target = class.member(rng.gen_range(0..spec.k)).clone();
            Ok((class, target))
        }
        InstanceFamily::DirichletRandom => {
            let class = random_class(spec, &mut rng)?;
            let target = DiscreteDistribution::new(&dirichlet_vector(
                spec.domain_size,
                spec.concentration,
                &mut rng,
            ))?;
            Ok((class, target))
        }
        InstanceFamily::Perturbed { delta } => {
            // The perturbed base is at distance delta exactly; a fresh class is
            // drawn if some other member lands closer than delta.
            let mut last_err = None;
            for _ in 0..PERTURB_ATTEMPTS {
                let class = random_class(spec, &mut rng)?;
                let base = rng.gen_range(0..spec.k);
                let target = match perturb_by_tv(class.member(base), delta) {
                    Ok(t) => t,
                    Err(e) => {
                        last_err = Some(e);
                        continue;
                    }
                };
                let (opt, _) = tv_to_class(&target, &class)?;
                if (opt - delta).abs() <= WEIGHT_TOLERANCE {
                    return Ok((class, target));
                }
                last_err = Some(DistError::InfeasibleDelta {
                    delta,
                    reason: format!("another member came within {opt} of the target"),
                });
            }
            Err(last_err.unwrap_or(DistError::InfeasibleDelta {
                delta,
                reason: "no feasible instance found".into(),
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(raw: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(raw).unwrap()
    }

    #[test]
    fn normalizes_raw_weights() {
        assert_eq!(dist(&[2.0, 2.0]).weights(), &[0.5, 0.5]);
        assert_eq!(dist(&[1.0, 0.0, 0.0]).weights(), &[1.0, 0.0, 0.0]);
        assert_eq!(dist(&[1.0, 2.0, 1.0]).weights(), &[0.25, 0.5, 0.25]);
        let awkward = dist(&[0.037, 1.91, 0.0021, 7.3, 0.44]);
        assert!((awkward.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn serializes_as_weight_array() {
        let f = dist(&[1.0, 3.0]);
        assert_eq!(serde_json::to_string(&f).unwrap(), "[0.25,0.75]");
        let back: DiscreteDistribution = serde_json::from_str("[2.0,2.0]").unwrap();
        assert_eq!(back.weights(), &[0.5, 0.5]);
        assert!(serde_json::from_str::<DiscreteDistribution>("[-1.0,2.0]").is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(
            DiscreteDistribution::new(&[0.5, -0.1]),
            Err(DistError::NegativeWeight { index: 1, .. })
        ));
        assert!(matches!(
            DiscreteDistribution::new(&[0.0, 0.0]),
            Err(DistError::ZeroMass)
        ));
        assert!(matches!(
            DiscreteDistribution::new(&[]),
            Err(DistError::EmptyDomain)
        ));
    }

    #[test]
    fn tv_distance_basics() {
        let f = dist(&[1.0, 0.0]);
        let g = dist(&[0.0, 1.0]);
        assert_eq!(f.tv_distance(&g).unwrap(), 1.0);
        assert_eq!(f.tv_distance(&f).unwrap(), 0.0);
        let a = dist(&[0.5, 0.5]);
        let b = dist(&[0.75, 0.25]);
        assert!((a.tv_distance(&b).unwrap() - 0.25).abs() < 1e-15);
        assert!(a.tv_distance(&dist(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn scheffe_set_basics() {
        let f = dist(&[0.5, 0.3, 0.2]);
        let g = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(f.scheffe_set(&g).unwrap().indices(), vec![0]);
        assert!(f.scheffe_set(&f).unwrap().is_null());

        let p = dist(&[1.0, 0.0]);
        let q = dist(&[0.0, 1.0]);
        let s = p.scheffe_set(&q).unwrap();
        assert_eq!(s.indices(), vec![0]);
        let gap = p.event_probability(&s).unwrap() - q.event_probability(&s).unwrap();
        assert_eq!(gap, p.tv_distance(&q).unwrap());
    }

    #[test]
    fn event_probability_basics() {
        let f = dist(&[0.25, 0.5, 0.25]);
        assert_eq!(f.event_probability(&EventSet::full(3)).unwrap(), 1.0);
        assert_eq!(f.event_probability(&EventSet::empty(3)).unwrap(), 0.0);
        let a = EventSet::from_indices(3, &[0, 2]);
        assert!((f.event_probability(&a).unwrap() - 0.5).abs() < 1e-15);
        assert!(f.event_probability(&EventSet::full(2)).is_err());
    }

    #[test]
    fn sampling_point_mass_and_determinism() {
        let f = dist(&[1.0, 0.0]);
        assert_eq!(f.sample(9, 5), vec![0, 0, 0, 0, 0]);
        let g = dist(&[0.3, 0.3, 0.4]);
        assert_eq!(g.sample(1234, 100), g.sample(1234, 100));
    }

    #[test]
    fn sampling_frequency_converges() {
        let f = dist(&[0.5, 0.5]);
        let draws = f.sample(77, 100_000);
        let zeros = draws.iter().filter(|&&x| x == 0).count() as f64;
        assert!((zeros / 100_000.0 - 0.5).abs() <= 0.01);

        // Wider domain, looser per-cell tolerance.
        let weights: Vec<f64> = (1..=64).map(|i| i as f64).collect();
        let g = dist(&weights);
        let draws = g.sample(78, 100_000);
        let mut counts = vec![0usize; 64];
        for x in draws {
            counts[x] += 1;
        }
        let max_gap = counts
            .iter()
            .zip(g.weights())
            .map(|(&c, &p)| (c as f64 / 100_000.0 - p).abs())
            .fold(0.0f64, f64::max);
        assert!(max_gap <= 0.02, "max frequency gap {max_gap}");
    }

    #[test]
    fn tv_to_class_basics() {
        let class = HypothesisClass::new(vec![dist(&[1.0, 0.0]), dist(&[0.0, 1.0])]).unwrap();
        let h = dist(&[0.6, 0.4]);
        let (d, i) = tv_to_class(&h, &class).unwrap();
        assert!((d - 0.4).abs() < 1e-15);
        assert_eq!(i, 0);

        // Membership gives zero distance at the member's index.
        let (d, i) = tv_to_class(class.member(1), &class).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(i, 1);

        // Ties break toward the lower index.
        let twin = HypothesisClass::new(vec![dist(&[0.5, 0.5]), dist(&[0.5, 0.5])]).unwrap();
        assert_eq!(tv_to_class(&h, &twin).unwrap().1, 0);
    }

    #[test]
    fn planted_instances_have_zero_optimum() {
        for k in [1usize, 2, 7] {
            let spec = InstanceSpec {
                family: InstanceFamily::Planted,
                k,
                domain_size: 6,
                concentration: 1.0,
            };
            let (class, h) = generate_instance(&spec, 3 + k as u64).unwrap();
            assert_eq!(class.len(), k);
            let (opt, _) = tv_to_class(&h, &class).unwrap();
            assert_eq!(opt, 0.0);
        }
    }

    #[test]
    fn perturbed_instances_sit_at_delta() {
        let spec = InstanceSpec {
            family: InstanceFamily::Perturbed { delta: 0.1 },
            k: 5,
            domain_size: 8,
            concentration: 1.0,
        };
        for seed in 0..20 {
            let (class, h) = generate_instance(&spec, seed).unwrap();
            let (opt, _) = tv_to_class(&h, &class).unwrap();
            assert!((opt - 0.1).abs() <= 1e-9, "opt {opt} at seed {seed}");
        }
    }

    #[test]
    fn instance_spec_validation() {
        let bad = InstanceSpec {
            family: InstanceFamily::Perturbed { delta: 1.0 },
            k: 2,
            domain_size: 4,
            concentration: 1.0,
        };
        assert!(bad.validate().is_err());
        let bad = InstanceSpec {
            family: InstanceFamily::Planted,
            k: 2,
            domain_size: 1,
            concentration: 1.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn instances_are_seed_deterministic() {
        let spec = InstanceSpec {
            family: InstanceFamily::DirichletRandom,
            k: 4,
            domain_size: 5,
            concentration: 1.0,
        };
        let a = generate_instance(&spec, 11).unwrap();
        let b = generate_instance(&spec, 11).unwrap();
        assert_eq!(a, b);
    }

    fn arb_weights(domain: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..10.0, domain)
    }

    proptest! {
        #[test]
        fn tv_equals_scheffe_gap(w1 in arb_weights(6), w2 in arb_weights(6)) {
            let f = DiscreteDistribution::new(&w1).unwrap();
            let g = DiscreteDistribution::new(&w2).unwrap();
            let s = f.scheffe_set(&g).unwrap();
            let gap = f.event_probability(&s).unwrap() - g.event_probability(&s).unwrap();
            let tv = f.tv_distance(&g).unwrap();
            prop_assert!((tv - gap).abs() <= 1e-12);
        }

        #[test]
        fn opposite_scheffe_sets_are_disjoint(w1 in arb_weights(5), w2 in arb_weights(5)) {
            let f = DiscreteDistribution::new(&w1).unwrap();
            let g = DiscreteDistribution::new(&w2).unwrap();
            prop_assert!(f.scheffe_set(&g).unwrap().disjoint_from(&g.scheffe_set(&f).unwrap()));
        }

        #[test]
        fn tv_is_a_metric(w1 in arb_weights(4), w2 in arb_weights(4), w3 in arb_weights(4)) {
            let f = DiscreteDistribution::new(&w1).unwrap();
            let g = DiscreteDistribution::new(&w2).unwrap();
            let h = DiscreteDistribution::new(&w3).unwrap();
            let fg = f.tv_distance(&g).unwrap();
            let gf = g.tv_distance(&f).unwrap();
            prop_assert!((fg - gf).abs() <= 1e-12);
            let fh = f.tv_distance(&h).unwrap();
            let hg = h.tv_distance(&g).unwrap();
            prop_assert!(fg <= fh + hg + 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&fg));
        }
    }
}
