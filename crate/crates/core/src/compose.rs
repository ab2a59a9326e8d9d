//! Composition bounds for `m` queries answered on the blocks of an injective
//! random partition.
//!
//! Every bound has the same outer shape: the critical entry lands in block
//! `k` with probability `n_k / n`, and only the `k`-th answer can then depend
//! on it. Answers of earlier blocks steer which query is asked on block `k`
//! in the adaptive case, so the block-`k` term is averaged over the law of the
//! answer prefix. Blocks after `k` are post-processing and drop out.
//!
//! | mode                  | entries        | block term                                        |
//! |-----------------------|----------------|---------------------------------------------------|
//! | `NonadaptiveIid`      | iid            | `d_hat` at size `n_k`                              |
//! | `NonadaptiveGeneral`  | heterogeneous  | sampling privacy curve of the restricted law       |
//! | `AdaptiveIid`         | iid            | prefix-averaged `d_hat` at size `n_k`              |
//! | `AdaptiveGeneral`     | heterogeneous  | template- and prefix-averaged `d_hat`              |
//!
//! Every block term takes the maximum over critical-value pairs inside the
//! term; this is never smaller than taking it once outside the sum.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::curve::check_epsilon;
use crate::distkit::{compensated_sum, Pmf};
use crate::error::{Error, Result};
use crate::partition::{PartitionLaw, TemplateFormat, DEFAULT_TEMPLATE_CAP};
use crate::query::{QueryDescriptor, QueryKernel};
use crate::seeding::derive_seed;
use crate::spc::{block_d_hat, iid_property_d_hat, spc_general_capped, Scenario, SpcMode};

/// Default cap on the number of answer prefixes enumerated for one block.
pub const DEFAULT_PREFIX_CAP: u128 = 100_000;

/// Chooses the query for block `k` from the answers of blocks `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QueryRule {
    Fixed { query: QueryDescriptor },
    /// `above` when `answers[answer] >= at`, `below` otherwise.
    Threshold { answer: usize, at: i64, above: Box<QueryRule>, below: Box<QueryRule> },
}

impl QueryRule {
    pub fn fixed(query: QueryDescriptor) -> Self {
        QueryRule::Fixed { query }
    }

    pub fn threshold(answer: usize, at: i64, above: QueryRule, below: QueryRule) -> Self {
        QueryRule::Threshold { answer, at, above: Box::new(above), below: Box::new(below) }
    }

    pub fn select(&self, prefix: &[i64]) -> QueryDescriptor {
        match self {
            QueryRule::Fixed { query } => *query,
            QueryRule::Threshold { answer, at, above, below } => {
                if prefix[*answer] >= *at {
                    above.select(prefix)
                } else {
                    below.select(prefix)
                }
            }
        }
    }

    fn max_referenced_answer(&self) -> Option<usize> {
        match self {
            QueryRule::Fixed { .. } => None,
            QueryRule::Threshold { answer, above, below, .. } => {
                [Some(*answer), above.max_referenced_answer(), below.max_referenced_answer()]
                    .into_iter()
                    .flatten()
                    .max()
            }
        }
    }

    fn leaves(&self, out: &mut Vec<QueryDescriptor>) {
        match self {
            QueryRule::Fixed { query } => out.push(*query),
            QueryRule::Threshold { above, below, .. } => {
                above.leaves(out);
                below.leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QueryPlan {
    Nonadaptive { queries: Vec<QueryDescriptor> },
    Adaptive { rules: Vec<QueryRule> },
}

/// A template format together with one query (or query rule) per block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct CompositionSpec {
    format: TemplateFormat,
    plan: QueryPlan,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    format: TemplateFormat,
    plan: QueryPlan,
}

impl TryFrom<RawSpec> for CompositionSpec {
    type Error = Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.format, raw.plan)
    }
}

impl From<CompositionSpec> for RawSpec {
    fn from(spec: CompositionSpec) -> Self {
        RawSpec { format: spec.format, plan: spec.plan }
    }
}

impl CompositionSpec {
    pub fn new(format: TemplateFormat, plan: QueryPlan) -> Result<Self> {
        let count = match &plan {
            QueryPlan::Nonadaptive { queries } => queries.len(),
            QueryPlan::Adaptive { rules } => {
                for (k, rule) in rules.iter().enumerate() {
                    if let Some(a) = rule.max_referenced_answer() {
                        if a >= k {
                            return Err(Error::domain(format!(
                                "rule for block {k} reads answer {a}, which is not yet known"
                            )));
                        }
                    }
                }
                rules.len()
            }
        };
        if count != format.blocks() {
            return Err(Error::domain(format!(
                "{count} queries given for a format with {} blocks",
                format.blocks()
            )));
        }
        Ok(Self { format, plan })
    }

    pub fn nonadaptive(format: TemplateFormat, queries: Vec<QueryDescriptor>) -> Result<Self> {
        Self::new(format, QueryPlan::Nonadaptive { queries })
    }

    pub fn adaptive(format: TemplateFormat, rules: Vec<QueryRule>) -> Result<Self> {
        Self::new(format, QueryPlan::Adaptive { rules })
    }

    /// The same query on every block.
    pub fn repeated(format: TemplateFormat, query: QueryDescriptor) -> Self {
        let queries = vec![query; format.blocks()];
        Self { format, plan: QueryPlan::Nonadaptive { queries } }
    }

    pub fn format(&self) -> &TemplateFormat {
        &self.format
    }

    pub fn plan(&self) -> &QueryPlan {
        &self.plan
    }

    pub fn blocks(&self) -> usize {
        self.format.blocks()
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.plan, QueryPlan::Adaptive { .. })
    }

    /// Query asked on block `k` after answers `prefix` (length `k`).
    pub fn query_for(&self, k: usize, prefix: &[i64]) -> QueryDescriptor {
        match &self.plan {
            QueryPlan::Nonadaptive { queries } => queries[k],
            QueryPlan::Adaptive { rules } => rules[k].select(prefix),
        }
    }

    /// Every descriptor that can be asked on block `k`.
    pub fn possible_queries(&self, k: usize) -> Vec<QueryDescriptor> {
        match &self.plan {
            QueryPlan::Nonadaptive { queries } => vec![queries[k]],
            QueryPlan::Adaptive { rules } => {
                let mut out = Vec::new();
                rules[k].leaves(&mut out);
                out.sort_by_key(|q| format!("{q:?}"));
                out.dedup();
                out
            }
        }
    }

    /// Inclusive answer range of block `k`, over every query it may receive.
    pub fn answer_range(&self, k: usize) -> (i64, i64) {
        let size = self.format.sizes()[k];
        self.possible_queries(k)
            .iter()
            .map(|q| q.answer_range(size))
            .fold((i64::MAX, i64::MIN), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)))
    }

    /// Number of answer prefixes preceding block `k`, saturating.
    pub fn prefix_count(&self, k: usize) -> u128 {
        (0..k).fold(1u128, |acc, l| {
            let (lo, hi) = self.answer_range(l);
            acc.saturating_mul((hi - lo + 1) as u128)
        })
    }

    /// Checks that every query reads an attribute the scenario defines.
    pub fn check_attributes(&self, scenario: &Scenario) -> Result<()> {
        let attrs = scenario.attributes();
        for k in 0..self.blocks() {
            for q in self.possible_queries(k) {
                if let Some(a) = q.attribute() {
                    if a >= attrs {
                        return Err(Error::domain(format!(
                            "block {k} queries attribute {a}, but entries have {attrs}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositionMode {
    NonadaptiveIid,
    NonadaptiveGeneral,
    AdaptiveIid,
    AdaptiveGeneral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockTerm {
    pub block: usize,
    /// `n_k / n`.
    pub weight: f64,
    pub term: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub epsilon: f64,
    pub mode: CompositionMode,
    pub per_block: Vec<BlockTerm>,
    /// `Σ weight · term` clamped to `[0, 1]`.
    pub total_delta: f64,
    pub unclamped_delta: f64,
    /// 95% half-width of the total when any block term was estimated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
}

impl CompositionReport {
    fn assemble(epsilon: f64, mode: CompositionMode, per_block: Vec<BlockTerm>) -> Self {
        let unclamped = compensated_sum(per_block.iter().map(|b| b.weight * b.term));
        let half_width = if per_block.iter().any(|b| b.half_width.is_some()) {
            // block estimates may share randomness, so widths add linearly
            Some(compensated_sum(per_block.iter().map(|b| b.weight * b.half_width.unwrap_or(0.0))))
        } else {
            None
        };
        Self {
            epsilon,
            mode,
            per_block,
            total_delta: unclamped.clamp(0.0, 1.0),
            unclamped_delta: unclamped,
            half_width,
        }
    }
}

/// Enumeration caps and the evaluation mode of heterogeneous block terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositionOptions {
    pub template_cap: u128,
    pub prefix_cap: u128,
    pub spc_mode: SpcMode,
}

impl Default for CompositionOptions {
    fn default() -> Self {
        Self { template_cap: DEFAULT_TEMPLATE_CAP, prefix_cap: DEFAULT_PREFIX_CAP, spc_mode: SpcMode::Enumerate }
    }
}

fn check_feasible(scenario: &Scenario, spec: &CompositionSpec) -> Result<PartitionLaw> {
    spec.check_attributes(scenario)?;
    PartitionLaw::new(scenario.n(), spec.format().clone())
}

fn iid_probs(scenario: &Scenario) -> Result<&[f64]> {
    scenario
        .iid_probabilities()
        .ok_or_else(|| Error::domain("this composition mode needs iid entries"))
}

/// `d_hat` of `query` on a block of `size` iid entries.
fn iid_block_d_hat(query: QueryDescriptor, size: usize, probs: &[f64], epsilon: f64) -> Result<f64> {
    match query {
        QueryDescriptor::Property { attribute } => iid_property_d_hat(size as u64, probs[attribute], epsilon),
        QueryDescriptor::Constant => Ok(0.0),
    }
}

/// Unconditioned answer law of `query` on a block of `size` iid entries.
fn iid_block_law(query: QueryDescriptor, size: usize, probs: &[f64]) -> Result<Pmf> {
    match query {
        QueryDescriptor::Property { attribute } => Pmf::binomial(size as u64, probs[attribute]),
        QueryDescriptor::Constant => Ok(Pmf::point(0)),
    }
}

/// Nonadaptive composition over iid entries:
/// `δ = Σ_k (n_k / n) · d_hat(F_k, size n_k)`.
pub fn nonadaptive_iid(scenario: &Scenario, spec: &CompositionSpec, epsilon: f64) -> Result<CompositionReport> {
    check_epsilon(epsilon)?;
    if spec.is_adaptive() {
        return Err(Error::domain("nonadaptive_iid needs a nonadaptive query plan"));
    }
    check_feasible(scenario, spec)?;
    let probs = iid_probs(scenario)?;
    let n = scenario.n() as f64;
    let mut cache: HashMap<(QueryDescriptor, usize), f64> = HashMap::new();
    let per_block = spec
        .format()
        .sizes()
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let query = spec.query_for(k, &[]);
            let term = match cache.get(&(query, size)) {
                Some(t) => *t,
                None => {
                    let t = iid_block_d_hat(query, size, probs, epsilon)?;
                    cache.insert((query, size), t);
                    t
                }
            };
            Ok(BlockTerm { block: k, weight: size as f64 / n, term, half_width: None })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompositionReport::assemble(epsilon, CompositionMode::NonadaptiveIid, per_block))
}

/// Nonadaptive composition over heterogeneous entries:
/// `δ = Σ_k (n_k / n) · SPC(F_k, law restricted to j ↦ k)`.
pub fn nonadaptive_general(
    scenario: &Scenario,
    spec: &CompositionSpec,
    epsilon: f64,
    options: CompositionOptions,
) -> Result<CompositionReport> {
    check_epsilon(epsilon)?;
    if spec.is_adaptive() {
        return Err(Error::domain("nonadaptive_general needs a nonadaptive query plan"));
    }
    let scenario = scenario.to_explicit()?;
    let law = check_feasible(&scenario, spec)?;
    let n = scenario.n() as f64;
    let per_block = spec
        .format()
        .sizes()
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let restricted = law.restricted(scenario.critical(), k)?;
            let query = spec.query_for(k, &[]);
            let mode = match options.spc_mode {
                SpcMode::MonteCarlo { trials, seed } => SpcMode::MonteCarlo { trials, seed: derive_seed(seed, k as u64) },
                SpcMode::Enumerate => SpcMode::Enumerate,
            };
            let est = spc_general_capped(&scenario, &restricted, &query, epsilon, mode, options.template_cap)?;
            Ok(BlockTerm { block: k, weight: size as f64 / n, term: est.value, half_width: est.half_width })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompositionReport::assemble(epsilon, CompositionMode::NonadaptiveGeneral, per_block))
}

/// Walks every answer prefix of blocks `0..k` with positive probability,
/// calling `leaf(prefix, probability)`. `law_of(l, query)` gives the answer
/// law of block `l` under `query`.
fn walk_prefixes<L, F>(spec: &CompositionSpec, k: usize, law_of: &mut L, leaf: &mut F) -> Result<()>
where
    L: FnMut(usize, QueryDescriptor) -> Result<Pmf>,
    F: FnMut(&[i64], f64) -> Result<()>,
{
    fn rec<L, F>(
        spec: &CompositionSpec,
        k: usize,
        prefix: &mut Vec<i64>,
        prob: f64,
        law_of: &mut L,
        leaf: &mut F,
    ) -> Result<()>
    where
        L: FnMut(usize, QueryDescriptor) -> Result<Pmf>,
        F: FnMut(&[i64], f64) -> Result<()>,
    {
        let l = prefix.len();
        if l == k {
            return leaf(prefix, prob);
        }
        let query = spec.query_for(l, prefix);
        let law = law_of(l, query)?;
        for (a, m) in law.iter() {
            if m == 0.0 {
                continue;
            }
            prefix.push(a);
            rec(spec, k, prefix, prob * m, law_of, leaf)?;
            prefix.pop();
        }
        Ok(())
    }
    rec(spec, k, &mut Vec::with_capacity(k), 1.0, law_of, leaf)
}

fn check_prefix_cap(spec: &CompositionSpec, k: usize, cap: u128) -> Result<()> {
    let count = spec.prefix_count(k);
    if count > cap {
        return Err(Error::Capacity {
            what: "answer-prefix enumeration",
            required: count,
            cap,
            hint: "",
        });
    }
    Ok(())
}

/// Adaptive composition over iid entries:
/// `δ = Σ_k (n_k / n) · E_prefix[d_hat(F_k(prefix), size n_k)]`, the prefix
/// drawn from the unconditioned answer laws of blocks `0..k`.
pub fn adaptive_iid(
    scenario: &Scenario,
    spec: &CompositionSpec,
    epsilon: f64,
    options: CompositionOptions,
) -> Result<CompositionReport> {
    check_epsilon(epsilon)?;
    check_feasible(scenario, spec)?;
    let probs = iid_probs(scenario)?;
    let sizes = spec.format().sizes();
    let n = scenario.n() as f64;
    let mut d_hats: HashMap<(QueryDescriptor, usize), f64> = HashMap::new();
    let mut laws: HashMap<(QueryDescriptor, usize), Pmf> = HashMap::new();
    let mut per_block = Vec::with_capacity(spec.blocks());
    for (k, &size) in sizes.iter().enumerate() {
        check_prefix_cap(spec, k, options.prefix_cap)?;
        let mut terms = Vec::new();
        walk_prefixes(
            spec,
            k,
            &mut |l, query| {
                if let Some(law) = laws.get(&(query, sizes[l])) {
                    return Ok(law.clone());
                }
                let law = iid_block_law(query, sizes[l], probs)?;
                laws.insert((query, sizes[l]), law.clone());
                Ok(law)
            },
            &mut |prefix, prob| {
                let query = spec.query_for(k, prefix);
                let d = match d_hats.get(&(query, size)) {
                    Some(d) => *d,
                    None => {
                        let d = iid_block_d_hat(query, size, probs, epsilon)?;
                        d_hats.insert((query, size), d);
                        d
                    }
                };
                terms.push(prob * d);
                Ok(())
            },
        )?;
        per_block.push(BlockTerm { block: k, weight: size as f64 / n, term: compensated_sum(terms), half_width: None });
    }
    Ok(CompositionReport::assemble(epsilon, CompositionMode::AdaptiveIid, per_block))
}

/// Adaptive composition over heterogeneous entries: for each block `k`, an
/// exact average over templates with the critical entry in block `k` and over
/// answer prefixes drawn from the blocks `0..k` of that template.
pub fn adaptive_general(
    scenario: &Scenario,
    spec: &CompositionSpec,
    epsilon: f64,
    options: CompositionOptions,
) -> Result<CompositionReport> {
    check_epsilon(epsilon)?;
    let scenario = scenario.to_explicit()?;
    let law = check_feasible(&scenario, spec)?;
    let j = scenario.critical();
    let n = scenario.n() as f64;
    let mut per_block = Vec::with_capacity(spec.blocks());
    for (k, &size) in spec.format().sizes().iter().enumerate() {
        check_prefix_cap(spec, k, options.prefix_cap)?;
        let templates = law.restricted(j, k)?.enumerate(options.template_cap)?;
        let mut template_terms = Vec::with_capacity(templates.len());
        for (template, weight) in &templates {
            let others: Vec<usize> = template.block(k).iter().copied().filter(|&i| i != j).collect();
            let mut d_hats: HashMap<QueryDescriptor, f64> = HashMap::new();
            let mut terms = Vec::new();
            walk_prefixes(
                spec,
                k,
                &mut |l, query| {
                    let rows: Vec<&[f64]> = template
                        .block(l)
                        .iter()
                        .map(|&i| scenario.entry_probabilities(i).expect("explicit scenario"))
                        .collect();
                    query.answer_law(&rows, None)
                },
                &mut |prefix, prob| {
                    let query = spec.query_for(k, prefix);
                    let d = match d_hats.get(&query) {
                        Some(d) => *d,
                        None => {
                            let d = block_d_hat(&scenario, &others, &query, epsilon)?;
                            d_hats.insert(query, d);
                            d
                        }
                    };
                    terms.push(prob * d);
                    Ok(())
                },
            )?;
            template_terms.push(weight * compensated_sum(terms));
        }
        per_block.push(BlockTerm {
            block: k,
            weight: size as f64 / n,
            term: compensated_sum(template_terms),
            half_width: None,
        });
    }
    Ok(CompositionReport::assemble(epsilon, CompositionMode::AdaptiveGeneral, per_block))
}

/// Runs the bound that fits the scenario and plan: iid or general, adaptive
/// or not.
pub fn compose(
    scenario: &Scenario,
    spec: &CompositionSpec,
    epsilon: f64,
    options: CompositionOptions,
) -> Result<CompositionReport> {
    match (scenario.iid_probabilities().is_some(), spec.is_adaptive()) {
        (true, false) => nonadaptive_iid(scenario, spec, epsilon),
        (true, true) => adaptive_iid(scenario, spec, epsilon, options),
        (false, false) => nonadaptive_general(scenario, spec, epsilon, options),
        (false, true) => adaptive_general(scenario, spec, epsilon, options),
    }
}
