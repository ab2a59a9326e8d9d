//! Templates, template formats and injective random partitions.
//!
//! A template assigns database indices to `m` blocks; block `k` feeds the
//! `k`-th query. Indices are 0-based. Blocks are treated as index sets: every
//! shipped query is symmetric in its inputs, so within-block order is
//! quotiented out and enumerated or sampled blocks are sorted ascending.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on exhaustive template enumeration.
pub const DEFAULT_TEMPLATE_CAP: u128 = 1_000_000;

/// Block sizes `(n_1, ..., n_m)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TemplateFormat {
    sizes: Vec<usize>,
}

impl TemplateFormat {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::domain("a template format needs at least one block"));
        }
        if sizes.contains(&0) {
            return Err(Error::domain("block sizes must be positive"));
        }
        Ok(Self { sizes })
    }

    /// `blocks` blocks of size `n / blocks`; `n` must be divisible.
    pub fn equal(n: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || !n.is_multiple_of(blocks) {
            return Err(Error::domain(format!("{n} entries cannot be split into {blocks} equal blocks")));
        }
        Self::new(vec![n / blocks; blocks])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

impl TryFrom<Vec<usize>> for TemplateFormat {
    type Error = Error;
    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<TemplateFormat> for Vec<usize> {
    fn from(f: TemplateFormat) -> Self {
        f.sizes
    }
}

/// A concrete assignment of database indices to blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Template {
    blocks: Vec<Vec<usize>>,
}

impl Template {
    pub fn new(blocks: Vec<Vec<usize>>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn is_injective(&self) -> bool {
        let mut seen: Vec<usize> = self.blocks.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }

    /// Block holding `index`, if any.
    pub fn block_of(&self, index: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&index))
    }
}

/// Conditioning of a partition law on the critical index landing in a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Restriction {
    pub critical: usize,
    pub block: usize,
}

/// Uniform law over injective templates of a format on `n` entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionLaw {
    n: usize,
    format: TemplateFormat,
    restriction: Option<Restriction>,
}

impl PartitionLaw {
    pub fn new(n: usize, format: TemplateFormat) -> Result<Self> {
        if format.total() > n {
            return Err(Error::domain(format!(
                "format needs {} entries but the database has {n}",
                format.total()
            )));
        }
        Ok(Self { n, format, restriction: None })
    }

    /// The law conditioned on `critical` landing in `block`.
    pub fn restricted(&self, critical: usize, block: usize) -> Result<Self> {
        if critical >= self.n {
            return Err(Error::domain(format!("critical index {critical} is out of range for n = {}", self.n)));
        }
        if block >= self.format.blocks() {
            return Err(Error::domain(format!("block {block} does not exist")));
        }
        Ok(Self { restriction: Some(Restriction { critical, block }), ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn format(&self) -> &TemplateFormat {
        &self.format
    }

    pub fn restriction(&self) -> Option<Restriction> {
        self.restriction
    }

    /// Probability that any fixed index lands in block `k`: `n_k / n`.
    pub fn membership_probability(&self, k: usize) -> Result<f64> {
        if self.restriction.is_some() {
            return Err(Error::domain("membership is fixed by construction for a restricted law"));
        }
        let size = self
            .format
            .sizes()
            .get(k)
            .ok_or_else(|| Error::domain(format!("block {k} does not exist")))?;
        Ok(*size as f64 / self.n as f64)
    }

    /// Number of templates in the support (blocks as sets), saturating.
    pub fn template_count(&self) -> u128 {
        let mut remaining = self.n as u128;
        let mut count: u128 = 1;
        if let Some(r) = self.restriction {
            let size = self.format.sizes()[r.block] as u128;
            count = binomial_u128(remaining - 1, size - 1);
            remaining -= size;
        }
        for (k, &size) in self.format.sizes().iter().enumerate() {
            if self.restriction.map(|r| r.block) == Some(k) {
                continue;
            }
            count = count.saturating_mul(binomial_u128(remaining, size as u128));
            remaining -= size as u128;
        }
        count
    }

    /// Every template of the support with its (uniform) probability.
    pub fn enumerate(&self, cap: u128) -> Result<Vec<(Template, f64)>> {
        let count = self.template_count();
        if count > cap {
            return Err(Error::Capacity {
                what: "template enumeration",
                required: count,
                cap,
                hint: "; use Monte-Carlo mode instead",
            });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut blocks = vec![Vec::new(); self.format.blocks()];
        let mut used = vec![false; self.n];
        if let Some(r) = self.restriction {
            used[r.critical] = true;
        }
        self.fill(0, &mut blocks, &mut used, &mut out);
        let weight = 1.0 / out.len() as f64;
        Ok(out.into_iter().map(|blocks| (Template::new(blocks), weight)).collect())
    }

    fn fill(&self, k: usize, blocks: &mut Vec<Vec<usize>>, used: &mut Vec<bool>, out: &mut Vec<Vec<Vec<usize>>>) {
        if k == self.format.blocks() {
            out.push(blocks.clone());
            return;
        }
        let forced = self.restriction.filter(|r| r.block == k).map(|r| r.critical);
        let need = self.format.sizes()[k] - usize::from(forced.is_some());
        let pool: Vec<usize> = (0..self.n).filter(|i| !used[*i]).collect();
        for_each_combination(&pool, need, &mut |chosen| {
            let mut block: Vec<usize> = chosen.to_vec();
            if let Some(j) = forced {
                block.push(j);
                block.sort_unstable();
            }
            for &i in chosen {
                used[i] = true;
            }
            blocks[k] = block;
            self.fill(k + 1, blocks, used, out);
            for &i in chosen {
                used[i] = false;
            }
        });
    }

    /// Uniform draw: shuffle the free indices and slice them into blocks.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Template {
        let critical = self.restriction.map(|r| r.critical);
        let mut pool: Vec<usize> = (0..self.n).filter(|i| Some(*i) != critical).collect();
        pool.shuffle(rng);
        let mut rest = pool.into_iter();
        let blocks = self
            .format
            .sizes()
            .iter()
            .enumerate()
            .map(|(k, &size)| {
                let mut block: Vec<usize> = match self.restriction {
                    Some(r) if r.block == k => std::iter::once(r.critical).chain(rest.by_ref().take(size - 1)).collect(),
                    _ => rest.by_ref().take(size).collect(),
                };
                block.sort_unstable();
                block
            })
            .collect();
        Template::new(blocks)
    }

    pub fn sample_seeded(&self, seed: u64) -> Template {
        self.sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// `C(n, k)` in `u128`, saturating on overflow.
pub fn binomial_u128(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Calls `f` with every `k`-subset of `pool`, in lexicographic order.
pub(crate) fn for_each_combination<F: FnMut(&[usize])>(pool: &[usize], k: usize, f: &mut F) {
    fn rec<F: FnMut(&[usize])>(pool: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, f: &mut F) {
        if cur.len() == k {
            f(cur);
            return;
        }
        let missing = k - cur.len();
        for i in start..=pool.len().saturating_sub(missing) {
            if i >= pool.len() {
                break;
            }
            cur.push(pool[i]);
            rec(pool, k, i + 1, cur, f);
            cur.pop();
        }
    }
    if k > pool.len() {
        return;
    }
    rec(pool, k, 0, &mut Vec::with_capacity(k), f);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(n: usize, sizes: &[usize]) -> PartitionLaw {
        PartitionLaw::new(n, TemplateFormat::new(sizes.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn membership_probability_is_block_share() {
        assert_eq!(law(10, &[5, 5]).membership_probability(0).unwrap(), 0.5);
        let big = PartitionLaw::new(32768, TemplateFormat::equal(32768, 32).unwrap()).unwrap();
        assert_eq!(big.membership_probability(6).unwrap(), 1.0 / 32.0);
        let l = law(10, &[2, 3, 1]);
        let total: f64 = (0..3).map(|k| l.membership_probability(k).unwrap()).sum();
        assert!((total - 0.6).abs() < 1e-15);
        assert!(l.restricted(0, 1).unwrap().membership_probability(1).is_err());
        assert!(l.membership_probability(3).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let t = law(2, &[1, 1]).enumerate(DEFAULT_TEMPLATE_CAP).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|(_, w)| *w == 0.5));

        let r = law(3, &[1, 1]).restricted(0, 1).unwrap();
        let t = r.enumerate(DEFAULT_TEMPLATE_CAP).unwrap();
        assert_eq!(t.len(), 2);
        let firsts: Vec<usize> = t.iter().map(|(tpl, _)| tpl.block(0)[0]).collect();
        assert_eq!(firsts, vec![1, 2]);
        assert!(t.iter().all(|(tpl, _)| tpl.block(1) == [0]));

        assert_eq!(law(4, &[2, 2]).enumerate(DEFAULT_TEMPLATE_CAP).unwrap().len(), 6);
        assert_eq!(law(6, &[2, 1]).template_count(), 15 * 4);
        assert_eq!(law(6, &[2, 1]).enumerate(DEFAULT_TEMPLATE_CAP).unwrap().len(), 60);
    }

    #[test]
    fn enumeration_respects_cap() {
        let l = PartitionLaw::new(64, TemplateFormat::equal(64, 2).unwrap()).unwrap();
        let err = l.enumerate(DEFAULT_TEMPLATE_CAP).unwrap_err();
        assert!(err.is_capacity());
    }

    #[test]
    fn format_validation() {
        assert!(TemplateFormat::new(vec![]).is_err());
        assert!(TemplateFormat::new(vec![2, 0]).is_err());
        assert!(TemplateFormat::equal(10, 3).is_err());
        assert!(PartitionLaw::new(3, TemplateFormat::new(vec![2, 2]).unwrap()).is_err());
        assert!(law(4, &[2, 2]).restricted(4, 0).is_err());
        assert!(law(4, &[2, 2]).restricted(0, 2).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_injective() {
        let l = law(9, &[3, 2, 2]);
        let a = l.sample_seeded(11);
        assert_eq!(a, l.sample_seeded(11));
        assert!(a.is_injective());
        let r = l.restricted(4, 2).unwrap();
        for seed in 0..50 {
            let t = r.sample_seeded(seed);
            assert!(t.is_injective());
            assert_eq!(t.block_of(4), Some(2));
        }
        let full = law(5, &[5]);
        assert_eq!(full.sample_seeded(3).block(0), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn binomial_u128_values() {
        assert_eq!(binomial_u128(4, 2), 6);
        assert_eq!(binomial_u128(10, 0), 1);
        assert_eq!(binomial_u128(3, 5), 0);
        assert_eq!(binomial_u128(60, 30), 118264581564861424);
    }
}
