//! Sampling privacy curves: the expected `d_hat` of a query answered on a
//! random sample that contains the critical entry.
//!
//! Three routes are provided:
//!
//! * [`spc_iid`]: iid entries, where every sample of size `s` containing the
//!   critical entry looks the same, so the curve is `d_hat` at size `s`;
//! * [`spc_known_entries`] and its cheaper upper bound
//!   [`spc_known_entries_threshold_bound`]: iid entries of which the
//!   adversary knows `v`, mixing over how many known entries fall in the
//!   sample;
//! * [`spc_general`]: heterogeneous entries, averaging over the restricted
//!   partition law either exactly or by Monte Carlo.

use serde::{Deserialize, Serialize};

use crate::curve::{check_epsilon, d_hat, property_query_laws, CriticalLaws};
use crate::distkit::{check_probability, compensated_sum, Pmf};
use crate::error::{Error, Result};
use crate::partition::{binomial_u128, for_each_combination, PartitionLaw, DEFAULT_TEMPLATE_CAP};
use crate::query::{EntryValue, QueryKernel, MAX_ATTRIBUTES};
use crate::seeding::trial_rng;

/// How the entries of a database are distributed, as known to the adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryModel {
    /// Every entry independent; attribute `a` is Bernoulli(`p[a]`).
    Iid { p: Vec<f64> },
    /// Entry `i` has attribute `a` Bernoulli(`p[i][a]`), all independent.
    Explicit { p: Vec<Vec<f64>> },
    /// Single-attribute iid Bernoulli(`p`) entries, `known` of which (never
    /// the critical one) are known to the adversary, `known_positive` of
    /// those being positive.
    KnownEntries { p: f64, known: usize, known_positive: usize },
}

/// A database model together with the index of the critical entry (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    n: usize,
    entries: EntryModel,
    critical: usize,
}

impl Scenario {
    pub fn new(n: usize, entries: EntryModel, critical: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("the database must have at least one entry"));
        }
        if critical >= n {
            return Err(Error::domain(format!("critical index {critical} is out of range for n = {n}")));
        }
        match &entries {
            EntryModel::Iid { p } => check_attribute_row(p)?,
            EntryModel::Explicit { p } => {
                if p.len() != n {
                    return Err(Error::domain(format!("{} entry rows given for n = {n}", p.len())));
                }
                let width = p[0].len();
                for row in p {
                    if row.len() != width {
                        return Err(Error::domain("every entry must define the same attributes"));
                    }
                    check_attribute_row(row)?;
                }
            }
            EntryModel::KnownEntries { p, known, known_positive } => {
                check_probability(*p)?;
                if *known > n - 1 {
                    return Err(Error::domain(format!("{known} known entries leave no room for the critical one")));
                }
                if known_positive > known {
                    return Err(Error::domain("more known positives than known entries"));
                }
            }
        }
        Ok(Self { n, entries, critical })
    }

    pub fn iid(n: usize, p: f64, critical: usize) -> Result<Self> {
        Self::new(n, EntryModel::Iid { p: vec![p] }, critical)
    }

    pub fn iid_attributes(n: usize, p: Vec<f64>, critical: usize) -> Result<Self> {
        Self::new(n, EntryModel::Iid { p }, critical)
    }

    /// Single-attribute entries with per-entry probabilities.
    pub fn explicit(p: Vec<f64>, critical: usize) -> Result<Self> {
        let n = p.len();
        Self::new(n, EntryModel::Explicit { p: p.into_iter().map(|x| vec![x]).collect() }, critical)
    }

    pub fn explicit_attributes(p: Vec<Vec<f64>>, critical: usize) -> Result<Self> {
        let n = p.len();
        Self::new(n, EntryModel::Explicit { p }, critical)
    }

    pub fn known_entries(n: usize, p: f64, known: usize, known_positive: usize, critical: usize) -> Result<Self> {
        Self::new(n, EntryModel::KnownEntries { p, known, known_positive }, critical)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn critical(&self) -> usize {
        self.critical
    }

    pub fn entries(&self) -> &EntryModel {
        &self.entries
    }

    pub fn attributes(&self) -> usize {
        match &self.entries {
            EntryModel::Iid { p } => p.len(),
            EntryModel::Explicit { p } => p[0].len(),
            EntryModel::KnownEntries { .. } => 1,
        }
    }

    /// Number of values an entry can take, `2^attributes`.
    pub fn value_count(&self) -> usize {
        1 << self.attributes()
    }

    /// Per-attribute probabilities when entries are iid.
    pub fn iid_probabilities(&self) -> Option<&[f64]> {
        match &self.entries {
            EntryModel::Iid { p } => Some(p),
            _ => None,
        }
    }

    /// Per-attribute probabilities of entry `i`; `None` for the known-entries
    /// model, where the known indices are not identified.
    pub fn entry_probabilities(&self, i: usize) -> Option<&[f64]> {
        match &self.entries {
            EntryModel::Iid { p } => Some(p),
            EntryModel::Explicit { p } => p.get(i).map(Vec::as_slice),
            EntryModel::KnownEntries { .. } => None,
        }
    }

    /// The same model with every entry listed explicitly.
    pub fn to_explicit(&self) -> Result<Self> {
        match &self.entries {
            EntryModel::Iid { p } => Self::explicit_attributes(vec![p.clone(); self.n], self.critical),
            EntryModel::Explicit { .. } => Ok(self.clone()),
            EntryModel::KnownEntries { .. } => {
                Err(Error::domain("the known-entries model has no explicit per-entry form"))
            }
        }
    }

    /// Same entry model with a different critical index.
    pub fn with_critical(&self, critical: usize) -> Result<Self> {
        Self::new(self.n, self.entries.clone(), critical)
    }
}

fn check_attribute_row(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.len() > MAX_ATTRIBUTES {
        return Err(Error::domain(format!("entries need between 1 and {MAX_ATTRIBUTES} attributes")));
    }
    p.iter().try_for_each(|x| check_probability(*x))
}

fn single_attribute_p(scenario: &Scenario) -> Result<f64> {
    match scenario.entries() {
        EntryModel::Iid { p } if p.len() == 1 => Ok(p[0]),
        EntryModel::KnownEntries { p, .. } => Ok(*p),
        _ => Err(Error::domain("this route needs single-attribute iid entries")),
    }
}

/// `d_hat` of a property query over `size` iid Bernoulli(`p`) entries, one of
/// them critical.
pub fn iid_property_d_hat(size: u64, p: f64, epsilon: f64) -> Result<f64> {
    d_hat(&property_query_laws(size, p)?, epsilon)
}

/// Sampling privacy curve of a property query on a sample of size `s` from
/// iid entries.
pub fn spc_iid(scenario: &Scenario, s: usize, epsilon: f64) -> Result<f64> {
    let p = match scenario.entries() {
        EntryModel::Iid { .. } => single_attribute_p(scenario)?,
        _ => return Err(Error::domain("spc_iid needs an iid scenario")),
    };
    if s == 0 || s > scenario.n() {
        return Err(Error::domain(format!("sample size {s} must lie in 1..={}", scenario.n())));
    }
    iid_property_d_hat(s as u64, p, epsilon)
}

/// Population used for the hypergeometric law of known entries in a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnownPopulation {
    /// `H(n, v, s - 1)`: the whole database as population.
    #[default]
    Database,
    /// `H(n - 1, v, s - 1)`: only the non-critical entries, which is where the
    /// `s - 1` free sample slots are actually drawn from.
    NonCritical,
}

/// One term of the known-entries mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KnownEntriesTerm {
    /// Number of known entries in the sample.
    pub known_in_sample: usize,
    pub weight: f64,
    /// `d_hat` with `s - 1 - z` unknown non-critical entries.
    pub delta: f64,
}

fn known_entries_parts(scenario: &Scenario, s: usize) -> Result<(f64, usize, Pmf)> {
    known_entries_parts_with(scenario, s, KnownPopulation::Database)
}

fn known_entries_parts_with(scenario: &Scenario, s: usize, population: KnownPopulation) -> Result<(f64, usize, Pmf)> {
    let known = match scenario.entries() {
        EntryModel::KnownEntries { known, .. } => *known,
        EntryModel::Iid { p } if p.len() == 1 => 0,
        _ => return Err(Error::domain("the known-entries route needs single-attribute iid entries")),
    };
    let p = single_attribute_p(scenario)?;
    let n = scenario.n();
    if s == 0 || s > n {
        return Err(Error::domain(format!("sample size {s} must lie in 1..={n}")));
    }
    let pop = match population {
        KnownPopulation::Database => n,
        KnownPopulation::NonCritical => n - 1,
    };
    let weights = Pmf::hypergeometric(pop as u64, known as u64, (s - 1) as u64)?;
    Ok((p, s, weights))
}

/// The mixture terms `(z, w_z, δ_z)` behind [`spc_known_entries`].
pub fn known_entries_terms(
    scenario: &Scenario,
    s: usize,
    epsilon: f64,
    population: KnownPopulation,
) -> Result<Vec<KnownEntriesTerm>> {
    check_epsilon(epsilon)?;
    let (p, s, weights) = known_entries_parts_with(scenario, s, population)?;
    weights
        .iter()
        .map(|(z, weight)| {
            let z = z as usize;
            Ok(KnownEntriesTerm {
                known_in_sample: z,
                weight,
                delta: iid_property_d_hat((s - z) as u64, p, epsilon)?,
            })
        })
        .collect()
}

/// Sampling privacy curve when `v` entries are known to the adversary:
/// `Σ_z H(n, v, s-1)(z) · d_hat(size s - z)`.
pub fn spc_known_entries(scenario: &Scenario, s: usize, epsilon: f64) -> Result<f64> {
    spc_known_entries_with(scenario, s, epsilon, KnownPopulation::Database)
}

pub fn spc_known_entries_with(
    scenario: &Scenario,
    s: usize,
    epsilon: f64,
    population: KnownPopulation,
) -> Result<f64> {
    let terms = known_entries_terms(scenario, s, epsilon, population)?;
    Ok(compensated_sum(terms.iter().map(|t| t.weight * t.delta)).clamp(0.0, 1.0))
}

/// Upper bound on [`spc_known_entries`] needing a single `d_hat` evaluation:
/// terms with more than `phi` known entries are bounded by 1, the rest by the
/// value at `phi`.
pub fn spc_known_entries_threshold_bound(scenario: &Scenario, s: usize, epsilon: f64, phi: usize) -> Result<f64> {
    check_epsilon(epsilon)?;
    let (p, s, weights) = known_entries_parts(scenario, s)?;
    if phi + 1 >= s {
        return Err(Error::domain(format!("threshold {phi} must be below s - 1 = {}", s - 1)));
    }
    let below = weights.cdf(phi as i64);
    let delta_phi = iid_property_d_hat((s - phi) as u64, p, epsilon)?;
    Ok(((1.0 - below) + below * delta_phi).clamp(0.0, 1.0))
}

/// Evaluation strategy for [`spc_general`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpcMode {
    Enumerate,
    MonteCarlo { trials: u64, seed: u64 },
}

/// A sampling-privacy-curve value; Monte-Carlo results carry a 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpcEstimate {
    pub value: f64,
    pub half_width: Option<f64>,
}

/// Conditional answer laws of a block holding the critical entry, one per
/// value the critical entry can take.
pub fn block_critical_laws<K: QueryKernel + ?Sized>(
    scenario: &Scenario,
    others: &[usize],
    kernel: &K,
) -> Result<CriticalLaws> {
    let rows = others
        .iter()
        .map(|&i| {
            scenario
                .entry_probabilities(i)
                .ok_or_else(|| Error::domain("per-entry probabilities are unavailable for this scenario"))
        })
        .collect::<Result<Vec<&[f64]>>>()?;
    (0..scenario.value_count() as EntryValue)
        .map(|c| Ok((c as i64, kernel.answer_law(&rows, Some(c))?)))
        .collect()
}

/// `d_hat` of the kernel on a block made of the critical entry plus `others`.
pub fn block_d_hat<K: QueryKernel + ?Sized>(scenario: &Scenario, others: &[usize], kernel: &K, epsilon: f64) -> Result<f64> {
    d_hat(&block_critical_laws(scenario, others, kernel)?, epsilon)
}

/// Sampling privacy curve for heterogeneous entries: the expectation over
/// templates of the restricted partition law of the block's `d_hat`.
///
/// Only the composition of the critical block matters, and under the uniform
/// restricted law its `n_k - 1` companions are a uniform subset of the other
/// entries; exact mode enumerates those subsets.
pub fn spc_general<K: QueryKernel + ?Sized>(
    scenario: &Scenario,
    law: &PartitionLaw,
    kernel: &K,
    epsilon: f64,
    mode: SpcMode,
) -> Result<SpcEstimate> {
    spc_general_capped(scenario, law, kernel, epsilon, mode, DEFAULT_TEMPLATE_CAP)
}

pub fn spc_general_capped<K: QueryKernel + ?Sized>(
    scenario: &Scenario,
    law: &PartitionLaw,
    kernel: &K,
    epsilon: f64,
    mode: SpcMode,
    cap: u128,
) -> Result<SpcEstimate> {
    check_epsilon(epsilon)?;
    let restriction = law
        .restriction()
        .ok_or_else(|| Error::domain("spc_general needs a law restricted to the critical block"))?;
    if restriction.critical != scenario.critical() || law.n() != scenario.n() {
        return Err(Error::domain("the partition law does not match the scenario"));
    }
    let size = law.format().sizes()[restriction.block];
    let j = scenario.critical();
    match mode {
        SpcMode::Enumerate => {
            let pool: Vec<usize> = (0..scenario.n()).filter(|&i| i != j).collect();
            let count = binomial_u128(pool.len() as u128, (size - 1) as u128);
            if count > cap {
                return Err(Error::Capacity {
                    what: "critical-block enumeration",
                    required: count,
                    cap,
                    hint: "; use Monte-Carlo mode instead",
                });
            }
            let mut terms = Vec::with_capacity(count as usize);
            let mut failure = None;
            for_each_combination(&pool, size - 1, &mut |others| {
                if failure.is_none() {
                    match block_d_hat(scenario, others, kernel, epsilon) {
                        Ok(d) => terms.push(d),
                        Err(e) => failure = Some(e),
                    }
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            let value = compensated_sum(terms.iter().copied()) / terms.len() as f64;
            Ok(SpcEstimate { value, half_width: None })
        }
        SpcMode::MonteCarlo { trials, seed } => {
            if trials < 2 {
                return Err(Error::domain("Monte-Carlo mode needs at least two trials"));
            }
            let mut values = Vec::with_capacity(trials as usize);
            for t in 0..trials {
                let template = law.sample(&mut trial_rng(seed, t));
                let others: Vec<usize> = template.block(restriction.block).iter().copied().filter(|&i| i != j).collect();
                values.push(block_d_hat(scenario, &others, kernel, epsilon)?);
            }
            let (mean, half_width) = mean_and_half_width(&values);
            Ok(SpcEstimate { value: mean, half_width: Some(half_width) })
        }
    }
}

/// Sample mean and 95% normal-approximation half-width.
pub(crate) fn mean_and_half_width(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::TemplateFormat;
    use crate::query::QueryDescriptor;

    #[test]
    fn scenario_validation() {
        assert!(Scenario::iid(0, 0.5, 0).is_err());
        assert!(Scenario::iid(4, 0.5, 4).is_err());
        assert!(Scenario::iid(4, 1.5, 0).is_err());
        assert!(Scenario::known_entries(4, 0.5, 4, 0, 0).is_err());
        assert!(Scenario::known_entries(4, 0.5, 2, 3, 0).is_err());
        assert!(Scenario::explicit_attributes(vec![vec![0.5], vec![0.5, 0.5]], 0).is_err());
        assert_eq!(Scenario::iid_attributes(3, vec![0.5, 0.2], 0).unwrap().value_count(), 4);
    }

    #[test]
    fn spc_iid_full_sample_equals_unsampled() {
        let sc = Scenario::iid(50, 0.3, 7).unwrap();
        let full = d_hat(&property_query_laws(50, 0.3).unwrap(), 0.1).unwrap();
        assert_eq!(spc_iid(&sc, 50, 0.1).unwrap(), full);
        assert!(spc_iid(&sc, 0, 0.1).is_err());
        assert!(spc_iid(&sc, 51, 0.1).is_err());
    }

    #[test]
    fn known_entries_fully_known_sample_is_one() {
        // n = v + 1 and s - 1 = v: every free slot holds a known entry
        let sc = Scenario::known_entries(6, 0.5, 5, 2, 0).unwrap();
        let exact = spc_known_entries_with(&sc, 6, 0.3, KnownPopulation::NonCritical).unwrap();
        assert!((exact - 1.0).abs() < 1e-12);
        // H(n, v, s - 1) over the whole database still leaves one free slot
        // unknown with probability 1 - 1/(v + 1).
        let printed = known_entries_terms(&sc, 6, 0.3, KnownPopulation::Database).unwrap();
        let full = printed.iter().find(|t| t.known_in_sample == 5).unwrap();
        assert!((full.weight - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(full.delta, 1.0);
        assert!(spc_known_entries(&sc, 6, 0.3).unwrap() < 1.0);
    }

    #[test]
    fn threshold_range_is_checked() {
        let sc = Scenario::known_entries(8, 0.5, 4, 1, 0).unwrap();
        assert!(spc_known_entries_threshold_bound(&sc, 4, 0.1, 3).is_err());
        assert!(spc_known_entries_threshold_bound(&sc, 4, 0.1, 2).is_ok());
    }

    #[test]
    fn spc_general_requires_matching_restricted_law() {
        let sc = Scenario::explicit(vec![0.2, 0.8, 0.5, 0.5], 2).unwrap();
        let law = PartitionLaw::new(4, TemplateFormat::new(vec![2]).unwrap()).unwrap();
        let q = QueryDescriptor::property(0);
        assert!(spc_general(&sc, &law, &q, 0.1, SpcMode::Enumerate).is_err());
        let wrong = law.restricted(1, 0).unwrap();
        assert!(spc_general(&sc, &wrong, &q, 0.1, SpcMode::Enumerate).is_err());
    }

    #[test]
    fn spc_general_capacity_error() {
        let sc = Scenario::explicit(vec![0.5; 40], 0).unwrap();
        let law = PartitionLaw::new(40, TemplateFormat::new(vec![20]).unwrap()).unwrap().restricted(0, 0).unwrap();
        let err = spc_general(&sc, &law, &QueryDescriptor::property(0), 0.1, SpcMode::Enumerate).unwrap_err();
        assert!(err.is_capacity());
    }
}
