//! Ground truth for small instances.
//!
//! [`exact_mechanism_law`] enumerates every template, every assignment of
//! the non-critical entries and every critical value, and builds the exact
//! law of the released answer tuple for each critical value. Its
//! hockey-stick divergence is the true privacy loss of the whole mechanism,
//! which every composition bound must dominate. [`mc_distinguish`] estimates
//! the same quantity from sampled answer histograms.
//!
//! Answer tuples are flattened to a single index in mixed radix over the
//! per-block answer ranges, so each conditional law is an ordinary [`Pmf`].

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::compose::{
    adaptive_general, adaptive_iid, nonadaptive_general, nonadaptive_iid, CompositionMode, CompositionOptions,
    CompositionReport, CompositionSpec, QueryRule,
};
use crate::curve::{check_epsilon, hockey_stick};
use crate::distkit::Pmf;
use crate::error::{Error, Result};
use crate::partition::{PartitionLaw, Template, TemplateFormat};
use crate::query::{EntryValue, QueryDescriptor, QueryKernel};
use crate::seeding::{derive_seed, trial_rng};
use crate::spc::Scenario;

/// Default limit on `|W|^(n-1) · templates · answer tuples`.
pub const DEFAULT_ORACLE_CAP: u128 = 10_000_000;

/// Tolerance used when checking that a bound dominates the exact divergence.
pub const DOMINATION_TOLERANCE: f64 = 1e-9;

/// Mixed-radix layout of answer tuples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TupleSpace {
    ranges: Vec<(i64, i64)>,
}

impl TupleSpace {
    fn of(spec: &CompositionSpec) -> Self {
        Self { ranges: (0..spec.blocks()).map(|k| spec.answer_range(k)).collect() }
    }

    pub fn ranges(&self) -> &[(i64, i64)] {
        &self.ranges
    }

    /// Number of distinct tuples, saturating.
    pub fn count(&self) -> u128 {
        self.ranges
            .iter()
            .fold(1u128, |acc, (lo, hi)| acc.saturating_mul((hi - lo + 1) as u128))
    }

    pub fn encode(&self, tuple: &[i64]) -> i64 {
        tuple
            .iter()
            .zip(&self.ranges)
            .fold(0i64, |acc, (a, (lo, hi))| acc * (hi - lo + 1) + (a - lo))
    }

    pub fn decode(&self, mut index: i64) -> Vec<i64> {
        let mut tuple = vec![0; self.ranges.len()];
        for (slot, (lo, hi)) in tuple.iter_mut().zip(&self.ranges).rev() {
            let radix = hi - lo + 1;
            *slot = lo + index % radix;
            index /= radix;
        }
        tuple
    }
}

/// Exact joint answer laws, one per value of the critical entry.
#[derive(Debug, Clone, Serialize)]
pub struct ExactMechanismLaw {
    space: TupleSpace,
    laws: Vec<Pmf>,
}

impl ExactMechanismLaw {
    pub fn space(&self) -> &TupleSpace {
        &self.space
    }

    /// Law of the flattened answer tuple when the critical entry is `value`.
    pub fn law(&self, value: EntryValue) -> &Pmf {
        &self.laws[value as usize]
    }

    pub fn values(&self) -> usize {
        self.laws.len()
    }

    /// Largest hockey-stick divergence over ordered pairs of critical values.
    pub fn delta(&self, epsilon: f64) -> Result<f64> {
        check_epsilon(epsilon)?;
        Ok(max_over_pairs(&self.laws, |p, q| hockey_stick(p, q, epsilon)))
    }
}

fn max_over_pairs<F: Fn(&Pmf, &Pmf) -> f64>(laws: &[Pmf], f: F) -> f64 {
    let mut best: f64 = 0.0;
    for (a, p) in laws.iter().enumerate() {
        for (b, q) in laws.iter().enumerate() {
            if a != b {
                best = best.max(f(p, q));
            }
        }
    }
    best
}

/// Probability that an entry with attribute probabilities `p` takes `value`.
fn value_probability(p: &[f64], value: EntryValue) -> f64 {
    p.iter()
        .enumerate()
        .map(|(a, &pa)| if (value >> a) & 1 == 1 { pa } else { 1.0 - pa })
        .product()
}

/// Answers of the composed mechanism on concrete values under a template.
fn answer_tuple(spec: &CompositionSpec, template: &Template, values: &[EntryValue], tuple: &mut Vec<i64>) {
    tuple.clear();
    let mut block_values = Vec::new();
    for (k, block) in template.blocks().iter().enumerate() {
        block_values.clear();
        block_values.extend(block.iter().map(|&i| values[i]));
        let answer = spec.query_for(k, tuple).answer(&block_values);
        tuple.push(answer);
    }
}

fn prepare(scenario: &Scenario, spec: &CompositionSpec) -> Result<(Scenario, PartitionLaw, TupleSpace)> {
    let scenario = scenario.to_explicit()?;
    spec.check_attributes(&scenario)?;
    let law = PartitionLaw::new(scenario.n(), spec.format().clone())?;
    let space = TupleSpace::of(spec);
    if space.count() > i64::MAX as u128 {
        return Err(Error::Capacity {
            what: "answer-tuple space",
            required: space.count(),
            cap: i64::MAX as u128,
            hint: "",
        });
    }
    Ok((scenario, law, space))
}

pub fn exact_mechanism_law(scenario: &Scenario, spec: &CompositionSpec) -> Result<ExactMechanismLaw> {
    exact_mechanism_law_capped(scenario, spec, DEFAULT_ORACLE_CAP)
}

pub fn exact_mechanism_law_capped(scenario: &Scenario, spec: &CompositionSpec, cap: u128) -> Result<ExactMechanismLaw> {
    let (scenario, law, space) = prepare(scenario, spec)?;
    let n = scenario.n();
    let j = scenario.critical();
    let v = scenario.value_count();
    let required = (v as u128)
        .saturating_pow((n - 1) as u32)
        .saturating_mul(law.template_count())
        .saturating_mul(space.count());
    if required > cap {
        return Err(Error::Capacity {
            what: "exact mechanism enumeration",
            required,
            cap,
            hint: "; shrink the instance or use mc_distinguish",
        });
    }
    let templates = law.enumerate(cap)?;
    let rows: Vec<&[f64]> = (0..n).map(|i| scenario.entry_probabilities(i).expect("explicit scenario")).collect();
    let mut masses = vec![vec![0.0; space.count() as usize]; v];
    let mut values = vec![0 as EntryValue; n];
    let mut tuple = Vec::with_capacity(spec.blocks());
    let others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
    // odometer over the values of the non-critical entries
    loop {
        let prob: f64 = others.iter().map(|&i| value_probability(rows[i], values[i])).product();
        if prob > 0.0 {
            for (c, table) in masses.iter_mut().enumerate() {
                values[j] = c as EntryValue;
                for (template, weight) in &templates {
                    answer_tuple(spec, template, &values, &mut tuple);
                    table[space.encode(&tuple) as usize] += prob * weight;
                }
            }
        }
        let mut carry = true;
        for &i in &others {
            values[i] += 1;
            if (values[i] as usize) < v {
                carry = false;
                break;
            }
            values[i] = 0;
        }
        if carry {
            break;
        }
    }
    let laws = masses
        .into_iter()
        .map(|m| Pmf::new(0, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExactMechanismLaw { space, laws })
}

/// Exact privacy loss of the composed mechanism at `epsilon`.
pub fn exact_mechanism_delta(scenario: &Scenario, spec: &CompositionSpec, epsilon: f64) -> Result<f64> {
    exact_mechanism_law(scenario, spec)?.delta(epsilon)
}

/// Smallest trial count accepted by the Monte-Carlo distinguisher.
pub const MIN_TRIALS: u64 = 1_000;

/// Sampled answer histograms, one per critical value.
#[derive(Debug, Clone, Serialize)]
pub struct MechanismHistograms {
    space: TupleSpace,
    trials: u64,
    counts: Vec<Vec<u64>>,
}

/// A plug-in divergence estimate with a 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub half_width: f64,
}

impl McEstimate {
    /// Whether `value` lies within `widths` half-widths of the estimate.
    pub fn covers(&self, value: f64, widths: f64) -> bool {
        (self.estimate - value).abs() <= widths * self.half_width + DOMINATION_TOLERANCE
    }
}

/// Draws `trials` runs of the mechanism per critical value. Trial `t` under
/// critical value `c` uses its own stream split from `seed`.
pub fn mc_histograms(scenario: &Scenario, spec: &CompositionSpec, trials: u64, seed: u64) -> Result<MechanismHistograms> {
    if trials < MIN_TRIALS {
        return Err(Error::domain(format!("Monte-Carlo checks need at least {MIN_TRIALS} trials")));
    }
    let (scenario, law, space) = prepare(scenario, spec)?;
    let size = usize::try_from(space.count())
        .ok()
        .filter(|s| *s <= 1 << 24)
        .ok_or(Error::Capacity {
            what: "answer histogram",
            required: space.count(),
            cap: 1 << 24,
            hint: "",
        })?;
    let n = scenario.n();
    let j = scenario.critical();
    let rows: Vec<&[f64]> = (0..n).map(|i| scenario.entry_probabilities(i).expect("explicit scenario")).collect();
    let mut counts = vec![vec![0u64; size]; scenario.value_count()];
    let mut values = vec![0 as EntryValue; n];
    let mut tuple = Vec::with_capacity(spec.blocks());
    for (c, hist) in counts.iter_mut().enumerate() {
        let stream_seed = derive_seed(seed, c as u64);
        for t in 0..trials {
            let mut rng = trial_rng(stream_seed, t);
            let template = law.sample(&mut rng);
            for (i, row) in rows.iter().enumerate() {
                values[i] = if i == j {
                    c as EntryValue
                } else {
                    row.iter()
                        .enumerate()
                        .fold(0, |acc, (a, &pa)| acc | ((rng.random::<f64>() < pa) as EntryValue) << a)
                };
            }
            answer_tuple(spec, &template, &values, &mut tuple);
            hist[space.encode(&tuple) as usize] += 1;
        }
    }
    Ok(MechanismHistograms { space, trials, counts })
}

impl MechanismHistograms {
    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn space(&self) -> &TupleSpace {
        &self.space
    }

    /// Plug-in estimate of the divergence, maximized over ordered pairs of
    /// critical values.
    ///
    /// The half-width adds a normal-approximation term for the linear part of
    /// the estimator, `1.96 · sd(P̂(A) - e^ε Q̂(A))` with `A` the estimated
    /// positive set, and a bound on the upward bias of `max(0, ·)` per tuple,
    /// `Σ sd_x · φ(d_x / sd_x)`.
    pub fn estimate(&self, epsilon: f64) -> Result<McEstimate> {
        check_epsilon(epsilon)?;
        let t = self.trials as f64;
        let scale = epsilon.exp();
        let mut best = McEstimate { estimate: 0.0, half_width: 0.0 };
        let mut first = true;
        for (a, p) in self.counts.iter().enumerate() {
            for (b, q) in self.counts.iter().enumerate() {
                if a == b {
                    continue;
                }
                let (mut est, mut pa, mut qa, mut bias) = (0.0, 0.0, 0.0, 0.0);
                for (&cp, &cq) in p.iter().zip(q) {
                    let (ph, qh) = (cp as f64 / t, cq as f64 / t);
                    let d = ph - scale * qh;
                    if d > 0.0 {
                        est += d;
                        pa += ph;
                        qa += qh;
                    }
                    let sd = ((ph * (1.0 - ph) + scale * scale * qh * (1.0 - qh)) / t).sqrt();
                    if sd > 0.0 {
                        let z = d / sd;
                        bias += sd * (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
                    }
                }
                let var = (pa * (1.0 - pa) + scale * scale * qa * (1.0 - qa)) / t;
                let candidate = McEstimate { estimate: est.clamp(0.0, 1.0), half_width: 1.96 * var.sqrt() + bias };
                if first || candidate.estimate > best.estimate {
                    best = candidate;
                    first = false;
                }
            }
        }
        Ok(best)
    }

    /// Empirical law of the answer tuple under critical value `value`.
    pub fn empirical_law(&self, value: EntryValue) -> Result<Pmf> {
        let t = self.trials as f64;
        Pmf::new(0, self.counts[value as usize].iter().map(|&c| c as f64 / t).collect())
    }
}

pub fn mc_distinguish(
    scenario: &Scenario,
    spec: &CompositionSpec,
    epsilon: f64,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    mc_histograms(scenario, spec, trials, seed)?.estimate(epsilon)
}

/// One instance of the verification matrix.
#[derive(Debug, Clone)]
pub struct VerificationCase {
    pub label: String,
    pub scenario: Scenario,
    pub spec: CompositionSpec,
}

/// Grid of ε values the matrix is checked on.
pub const VERIFICATION_EPSILONS: [f64; 3] = [0.0, 0.1, 1.0];

/// Adaptive spec used by the matrix: block 0 asks the property, block `k > 0`
/// asks it again only if block `k - 1` answered at least half its size and
/// otherwise asks nothing.
pub fn two_branch_spec(format: TemplateFormat) -> Result<CompositionSpec> {
    let q = QueryDescriptor::property(0);
    let rules = format
        .sizes()
        .iter()
        .enumerate()
        .map(|(k, _)| {
            if k == 0 {
                QueryRule::fixed(q)
            } else {
                let at = format.sizes()[k - 1].div_ceil(2) as i64;
                QueryRule::threshold(k - 1, at, QueryRule::fixed(q), QueryRule::fixed(QueryDescriptor::Constant))
            }
        })
        .collect();
    CompositionSpec::adaptive(format, rules)
}

/// The built-in matrix: `n ∈ {2,4,6,8}`, `m ∈ {1,2}` equal blocks,
/// `p ∈ {0.2, 0.5}`, nonadaptive and two-branch adaptive, plus a few
/// heterogeneous instances.
pub fn verification_matrix() -> Result<Vec<VerificationCase>> {
    let mut cases = Vec::new();
    for n in [2usize, 4, 6, 8] {
        for m in [1usize, 2] {
            for p in [0.2, 0.5] {
                let scenario = Scenario::iid(n, p, 0)?;
                let format = TemplateFormat::equal(n, m)?;
                cases.push(VerificationCase {
                    label: format!("iid n={n} m={m} p={p} nonadaptive"),
                    scenario: scenario.clone(),
                    spec: CompositionSpec::repeated(format.clone(), QueryDescriptor::property(0)),
                });
                cases.push(VerificationCase {
                    label: format!("iid n={n} m={m} p={p} adaptive"),
                    scenario,
                    spec: two_branch_spec(format)?,
                });
            }
        }
    }
    let hetero4 = Scenario::explicit(vec![0.2, 0.8, 0.5, 0.5], 2)?;
    let hetero6 = Scenario::explicit(vec![0.1, 0.9, 0.3, 0.6, 0.5, 0.75], 3)?;
    let two_attr = Scenario::explicit_attributes(vec![vec![0.3, 0.6], vec![0.5, 0.5], vec![0.8, 0.2], vec![0.4, 0.7]], 0)?;
    let spread = TemplateFormat::new(vec![2, 2])?;
    cases.push(VerificationCase {
        label: "explicit n=4 (2,2) nonadaptive".into(),
        scenario: hetero4.clone(),
        spec: CompositionSpec::repeated(spread.clone(), QueryDescriptor::property(0)),
    });
    cases.push(VerificationCase {
        label: "explicit n=4 (2,2) adaptive".into(),
        scenario: hetero4,
        spec: two_branch_spec(spread.clone())?,
    });
    cases.push(VerificationCase {
        label: "explicit n=6 (2,2) nonadaptive".into(),
        scenario: hetero6.clone(),
        spec: CompositionSpec::repeated(spread.clone(), QueryDescriptor::property(0)),
    });
    cases.push(VerificationCase {
        label: "explicit n=6 (2,2) adaptive".into(),
        scenario: hetero6,
        spec: two_branch_spec(spread.clone())?,
    });
    let q0 = QueryDescriptor::property(0);
    let q1 = QueryDescriptor::property(1);
    cases.push(VerificationCase {
        label: "explicit n=4 two attributes (2,2) adaptive".into(),
        scenario: two_attr,
        spec: CompositionSpec::adaptive(
            spread,
            vec![QueryRule::fixed(q0), QueryRule::threshold(0, 1, QueryRule::fixed(q1), QueryRule::fixed(q0))],
        )?,
    });
    Ok(cases)
}

/// One bound checked against the exact divergence.
#[derive(Debug, Clone, Serialize)]
pub struct DominationRow {
    pub case: String,
    pub epsilon: f64,
    pub mode: CompositionMode,
    pub exact: f64,
    pub bound: f64,
    /// `bound - exact`; negative beyond tolerance means a violation.
    pub margin: f64,
}

impl DominationRow {
    pub fn holds(&self) -> bool {
        self.margin >= -DOMINATION_TOLERANCE
    }
}

/// One Monte-Carlo estimate compared with the exact divergence.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyRow {
    pub case: String,
    pub epsilon: f64,
    pub exact: f64,
    pub estimate: f64,
    pub half_width: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerificationReport {
    pub domination: Vec<DominationRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub consistency: Vec<ConsistencyRow>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.domination.iter().all(DominationRow::holds) && self.consistency.iter().all(|r| r.within)
    }
}

/// Every bound that applies to the case: the iid bound when entries are iid,
/// and the general bound always.
pub fn applicable_bounds(
    scenario: &Scenario,
    spec: &CompositionSpec,
    epsilon: f64,
    options: CompositionOptions,
) -> Result<Vec<CompositionReport>> {
    let mut reports = Vec::with_capacity(2);
    let iid = scenario.iid_probabilities().is_some();
    if spec.is_adaptive() {
        if iid {
            reports.push(adaptive_iid(scenario, spec, epsilon, options)?);
        }
        reports.push(adaptive_general(scenario, spec, epsilon, options)?);
    } else {
        if iid {
            reports.push(nonadaptive_iid(scenario, spec, epsilon)?);
        }
        reports.push(nonadaptive_general(scenario, spec, epsilon, options)?);
    }
    Ok(reports)
}

/// Monte-Carlo settings for [`verify_cases`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McSettings {
    pub trials: u64,
    pub seed: u64,
}

/// Checks every applicable bound against the exact divergence on every case
/// and ε, and optionally the Monte-Carlo estimate against the exact value
/// (within 3 half-widths).
pub fn verify_cases(cases: &[VerificationCase], epsilons: &[f64], mc: Option<McSettings>) -> Result<VerificationReport> {
    let mut report = VerificationReport::default();
    for (index, case) in cases.iter().enumerate() {
        let exact_law = exact_mechanism_law(&case.scenario, &case.spec)?;
        let histograms = match mc {
            Some(s) => Some(mc_histograms(&case.scenario, &case.spec, s.trials, derive_seed(s.seed, index as u64))?),
            None => None,
        };
        for &epsilon in epsilons {
            let exact = exact_law.delta(epsilon)?;
            for bound in applicable_bounds(&case.scenario, &case.spec, epsilon, CompositionOptions::default())? {
                report.domination.push(DominationRow {
                    case: case.label.clone(),
                    epsilon,
                    mode: bound.mode,
                    exact,
                    bound: bound.total_delta,
                    margin: bound.total_delta - exact,
                });
            }
            if let Some(h) = &histograms {
                let est = h.estimate(epsilon)?;
                report.consistency.push(ConsistencyRow {
                    case: case.label.clone(),
                    epsilon,
                    exact,
                    estimate: est.estimate,
                    half_width: est.half_width,
                    within: est.covers(exact, 3.0),
                });
            }
        }
    }
    Ok(report)
}

/// Runs the built-in matrix on its ε grid.
pub fn verify_matrix(mc: Option<McSettings>) -> Result<VerificationReport> {
    verify_cases(&verification_matrix()?, &VERIFICATION_EPSILONS, mc)
}

/// Total mass of each conditional law; used to assert normalization.
pub fn normalization_error(law: &ExactMechanismLaw) -> f64 {
    law.laws.iter().map(|p| (p.total() - 1.0).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuple_space_round_trip() {
        let space = TupleSpace { ranges: vec![(0, 2), (0, 0), (1, 3)] };
        assert_eq!(space.count(), 9);
        for idx in 0..9 {
            assert_eq!(space.encode(&space.decode(idx)), idx);
        }
    }

    #[test]
    fn single_entry_block_of_two() {
        // n = 2, one block of size 1: the answer is the critical value when
        // the critical entry is sampled, a fair coin otherwise
        let sc = Scenario::iid(2, 0.5, 0).unwrap();
        let spec = CompositionSpec::repeated(TemplateFormat::new(vec![1]).unwrap(), QueryDescriptor::property(0));
        let d = exact_mechanism_delta(&sc, &spec, 0.0).unwrap();
        assert!((d - 0.5).abs() < 1e-15, "{d}");
        let bound = nonadaptive_iid(&sc, &spec, 0.0).unwrap().total_delta;
        assert!((bound - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_conditionals_leak_nothing() {
        let sc = Scenario::iid(4, 0.3, 1).unwrap();
        let spec = CompositionSpec::repeated(TemplateFormat::equal(4, 2).unwrap(), QueryDescriptor::Constant);
        let law = exact_mechanism_law(&sc, &spec).unwrap();
        assert!(normalization_error(&law) < 1e-12);
        assert_eq!(law.delta(0.0).unwrap(), 0.0);
        let est = mc_distinguish(&sc, &spec, 0.0, 2_000, 3).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn capacity_is_enforced() {
        let sc = Scenario::iid(8, 0.5, 0).unwrap();
        let spec = CompositionSpec::repeated(TemplateFormat::equal(8, 2).unwrap(), QueryDescriptor::property(0));
        let err = exact_mechanism_law_capped(&sc, &spec, 1000).unwrap_err();
        assert!(err.is_capacity());
    }

    #[test]
    fn too_few_trials_are_rejected() {
        let sc = Scenario::iid(2, 0.5, 0).unwrap();
        let spec = CompositionSpec::repeated(TemplateFormat::new(vec![1]).unwrap(), QueryDescriptor::property(0));
        assert!(mc_distinguish(&sc, &spec, 0.0, 10, 1).is_err());
    }
}
