//! Query kernels: how a block of entries is turned into an answer.
//!
//! Entry values are bitmasks over binary attributes, so with `A` attributes
//! the value space of an entry is `0 .. 2^A`. A kernel must be able to answer
//! on concrete values (used by the brute-force oracle) and to produce the
//! exact answer law of a block of independent entries (used by the bounds).

use serde::{Deserialize, Serialize};

use crate::distkit::Pmf;
use crate::error::{Error, Result};

/// Largest attribute count accepted anywhere in the crate.
pub const MAX_ATTRIBUTES: usize = 8;

/// Value of one entry: bit `a` is attribute `a`.
pub type EntryValue = u32;

pub trait QueryKernel {
    /// Answer on a block of concrete entry values.
    fn answer(&self, values: &[EntryValue]) -> i64;

    /// Exact answer law of a block whose free entries are independent with
    /// per-attribute success probabilities `free[i][a]`, plus an optional
    /// critical entry pinned to `critical`.
    fn answer_law(&self, free: &[&[f64]], critical: Option<EntryValue>) -> Result<Pmf>;

    /// Inclusive range of possible answers on a block of `size` entries.
    fn answer_range(&self, size: usize) -> (i64, i64);
}

/// The query descriptors that ship with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QueryDescriptor {
    /// Number of entries in the block whose `attribute` bit is set.
    Property { attribute: usize },
    /// Always answers 0; releases nothing.
    Constant,
}

impl QueryDescriptor {
    pub fn property(attribute: usize) -> Self {
        QueryDescriptor::Property { attribute }
    }

    /// Attribute read by the query, if any.
    pub fn attribute(&self) -> Option<usize> {
        match self {
            QueryDescriptor::Property { attribute } => Some(*attribute),
            QueryDescriptor::Constant => None,
        }
    }
}

impl QueryKernel for QueryDescriptor {
    fn answer(&self, values: &[EntryValue]) -> i64 {
        match self {
            QueryDescriptor::Property { attribute } => {
                values.iter().filter(|v| (*v >> attribute) & 1 == 1).count() as i64
            }
            QueryDescriptor::Constant => 0,
        }
    }

    fn answer_law(&self, free: &[&[f64]], critical: Option<EntryValue>) -> Result<Pmf> {
        match self {
            QueryDescriptor::Property { attribute } => {
                let probs = free
                    .iter()
                    .map(|row| {
                        row.get(*attribute).copied().ok_or_else(|| {
                            Error::domain(format!("attribute {attribute} is not defined for this scenario"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let shift = critical.map_or(0, |c| ((c >> attribute) & 1) as i64);
                Ok(Pmf::poisson_binomial(&probs)?.shift(shift))
            }
            QueryDescriptor::Constant => Ok(Pmf::point(0)),
        }
    }

    fn answer_range(&self, size: usize) -> (i64, i64) {
        match self {
            QueryDescriptor::Property { .. } => (0, size as i64),
            QueryDescriptor::Constant => (0, 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_answers_count_bits() {
        let q = QueryDescriptor::property(1);
        assert_eq!(q.answer(&[0b10, 0b11, 0b01, 0b00]), 2);
        assert_eq!(QueryDescriptor::Constant.answer(&[1, 1]), 0);
    }

    #[test]
    fn property_law_pins_critical_bit() {
        let q = QueryDescriptor::property(1);
        let rows: [&[f64]; 2] = [&[0.1, 0.5], &[0.9, 0.5]];
        let law = q.answer_law(&rows, Some(0b10)).unwrap();
        assert_eq!(law.min(), 1);
        assert!((law.mass(2) - 0.5).abs() < 1e-15);
        let law = q.answer_law(&rows, Some(0b01)).unwrap();
        assert_eq!(law.min(), 0);
        assert!(q.answer_law(&[&[0.5]], None).is_err());
    }
}
