//! Finite probability mass functions on contiguous integer supports.
//!
//! [`Pmf`] is the currency of the whole crate: entry counts, query answers,
//! template weights and flattened answer tuples are all represented this way.
//! Constructors build masses in log space through log-factorials so that
//! databases of size `2^15` and beyond neither overflow nor underflow
//! prematurely; the stored masses are plain linear-space `f64`.

use serde::Serialize;
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Tolerance on the total mass of a normalized [`Pmf`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Masses below this floor may be trimmed from either end of a support.
pub const SUPPORT_FLOOR: f64 = 1e-300;

/// Neumaier-compensated summation.
pub fn compensated_sum<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// `ln C(n, k)`, computed so that `ln_choose(n, k)` and `ln_choose(n, n - k)`
/// are bit-identical.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - (ln_factorial(k) + ln_factorial(n - k))
}

/// A probability mass function on the integers `offset .. offset + masses.len()`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pmf {
    offset: i64,
    masses: Vec<f64>,
}

impl Pmf {
    /// Validating constructor. Masses must be finite, nonnegative and sum to
    /// one within [`NORMALIZATION_TOLERANCE`].
    pub fn new(offset: i64, masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::domain("a pmf needs at least one support point"));
        }
        if let Some(bad) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::domain(format!("invalid probability mass {bad}")));
        }
        let total = compensated_sum(masses.iter().copied());
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::domain(format!("masses sum to {total}, not 1")));
        }
        Ok(Self::from_raw(offset, masses))
    }

    /// Trims negligible end masses; callers guarantee normalization.
    pub(crate) fn from_raw(mut offset: i64, mut masses: Vec<f64>) -> Self {
        let lead = masses.iter().take_while(|m| **m < SUPPORT_FLOOR).count();
        if lead == masses.len() {
            // Degenerate input: keep the single largest point.
            let (idx, _) = masses
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, m)| if *m > acc.1 { (i, *m) } else { acc });
            return Self { offset: offset + idx as i64, masses: vec![1.0] };
        }
        let trail = masses.iter().rev().take_while(|m| **m < SUPPORT_FLOOR).count();
        masses.truncate(masses.len() - trail);
        masses.drain(..lead);
        offset += lead as i64;
        Self { offset, masses }
    }

    /// Rescales masses so that their compensated sum is one.
    fn normalized(offset: i64, mut masses: Vec<f64>) -> Self {
        let total = compensated_sum(masses.iter().copied());
        if total > 0.0 && total != 1.0 {
            for m in &mut masses {
                *m /= total;
            }
        }
        Self::from_raw(offset, masses)
    }

    pub fn point(at: i64) -> Self {
        Self { offset: at, masses: vec![1.0] }
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        check_probability(p)?;
        Ok(Self::from_raw(0, vec![1.0 - p, p]))
    }

    /// Binomial law of the number of successes in `trials` independent
    /// Bernoulli(`p`) trials.
    ///
    /// Masses come from `exp(ln C(t, k) + k ln p + (t - k) ln(1 - p))`, then
    /// a single compensated renormalization. For `p = 1/2` the log terms for
    /// `k` and `t - k` are computed from identical operands, so the result is
    /// exactly symmetric.
    pub fn binomial(trials: u64, p: f64) -> Result<Self> {
        check_probability(p)?;
        if p == 0.0 {
            return Ok(Self::point(0));
        }
        if p == 1.0 {
            return Ok(Self::point(trials as i64));
        }
        let ln_p = if p > 0.5 { (p - 1.0).ln_1p() } else { p.ln() };
        let ln_q = if p >= 0.5 { (1.0 - p).ln() } else { (-p).ln_1p() };
        let masses = (0..=trials)
            .map(|k| (ln_choose(trials, k) + (k as f64 * ln_p + (trials - k) as f64 * ln_q)).exp())
            .collect();
        Ok(Self::normalized(0, masses))
    }

    /// Law of the number of marked items among `draws` items taken without
    /// replacement from `population` items of which `successes` are marked.
    pub fn hypergeometric(population: u64, successes: u64, draws: u64) -> Result<Self> {
        if successes > population || draws > population {
            return Err(Error::domain(format!(
                "hypergeometric({population}, {successes}, {draws}) needs successes and draws <= population"
            )));
        }
        let failures = population - successes;
        let lo = draws.saturating_sub(failures);
        let hi = draws.min(successes);
        let ln_total = ln_choose(population, draws);
        let masses = (lo..=hi)
            .map(|z| (ln_choose(successes, z) + ln_choose(failures, draws - z) - ln_total).exp())
            .collect();
        Ok(Self::normalized(lo as i64, masses))
    }

    /// Law of a sum of independent Bernoulli variables with the given success
    /// probabilities, by iterated convolution.
    pub fn poisson_binomial(probs: &[f64]) -> Result<Self> {
        let mut masses = vec![1.0];
        for &p in probs {
            check_probability(p)?;
            let mut next = vec![0.0; masses.len() + 1];
            for (k, &m) in masses.iter().enumerate() {
                next[k] += m * (1.0 - p);
                next[k + 1] += m * p;
            }
            masses = next;
        }
        Ok(Self::normalized(0, masses))
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Smallest support point.
    pub fn min(&self) -> i64 {
        self.offset
    }

    /// Largest support point.
    pub fn max(&self) -> i64 {
        self.offset + self.masses.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn mass(&self, x: i64) -> f64 {
        if x < self.offset {
            return 0.0;
        }
        self.masses.get((x - self.offset) as usize).copied().unwrap_or(0.0)
    }

    /// Iterates `(support point, mass)` pairs in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.masses.iter().enumerate().map(move |(i, m)| (self.offset + i as i64, *m))
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.masses.iter().copied())
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: i64) -> f64 {
        if x < self.offset {
            return 0.0;
        }
        let upto = ((x - self.offset) as usize + 1).min(self.masses.len());
        compensated_sum(self.masses[..upto].iter().copied())
    }

    /// `P(X >= x)`.
    pub fn survival(&self, x: i64) -> f64 {
        if x > self.max() {
            return 0.0;
        }
        let from = (x - self.offset).max(0) as usize;
        compensated_sum(self.masses[from..].iter().copied())
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.iter().map(|(x, m)| x as f64 * m))
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        compensated_sum(self.iter().map(|(x, m)| {
            let d = x as f64 - mean;
            d * d * m
        }))
    }

    /// The same law translated by `k`.
    pub fn shift(&self, k: i64) -> Self {
        Self { offset: self.offset + k, masses: self.masses.clone() }
    }

    /// Law of the sum of two independent variables.
    pub fn convolve(&self, other: &Pmf) -> Self {
        let mut masses = vec![0.0; self.len() + other.len() - 1];
        for (i, a) in self.masses.iter().enumerate() {
            for (j, b) in other.masses.iter().enumerate() {
                masses[i + j] += a * b;
            }
        }
        Self::from_raw(self.offset + other.offset, masses)
    }

    /// Pointwise weighted sum of laws over the union of their supports.
    pub fn mixture<'a, I>(components: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, &'a Pmf)>,
    {
        let components: Vec<(f64, &Pmf)> = components.into_iter().collect();
        if components.is_empty() {
            return Err(Error::domain("a mixture needs at least one component"));
        }
        if let Some((w, _)) = components.iter().find(|(w, _)| !w.is_finite() || *w < 0.0) {
            return Err(Error::domain(format!("invalid mixture weight {w}")));
        }
        let total = compensated_sum(components.iter().map(|(w, _)| *w));
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::domain(format!("mixture weights sum to {total}, not 1")));
        }
        let lo = components.iter().map(|(_, d)| d.min()).min().unwrap_or(0);
        let hi = components.iter().map(|(_, d)| d.max()).max().unwrap_or(0);
        let width = (hi - lo + 1) as usize;
        let masses = (0..width)
            .map(|i| {
                let x = lo + i as i64;
                compensated_sum(components.iter().map(|(w, d)| w * d.mass(x)))
            })
            .collect();
        Ok(Self::from_raw(lo, masses))
    }
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("probability {p} is outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn binomial_small_cases() {
        let d = Pmf::binomial(2, 0.5).unwrap();
        assert_eq!(d.offset(), 0);
        for (got, want) in d.masses().iter().zip([0.25, 0.5, 0.25]) {
            assert!(close(*got, want, 1e-15));
        }
        assert_eq!(Pmf::binomial(0, 0.3).unwrap(), Pmf::point(0));
        assert_eq!(Pmf::binomial(5, 0.0).unwrap(), Pmf::point(0));
        assert_eq!(Pmf::binomial(5, 1.0).unwrap(), Pmf::point(5));
    }

    #[test]
    fn binomial_rejects_bad_probability() {
        assert!(matches!(Pmf::binomial(3, 1.5), Err(Error::Domain(_))));
        assert!(matches!(Pmf::binomial(3, -0.1), Err(Error::Domain(_))));
        assert!(Pmf::binomial(3, f64::NAN).is_err());
    }

    #[test]
    fn binomial_half_is_bit_symmetric() {
        for t in [1u64, 7, 64, 1023, 32767] {
            let d = Pmf::binomial(t, 0.5).unwrap();
            for k in 0..=t as i64 {
                assert_eq!(d.mass(k).to_bits(), d.mass(t as i64 - k).to_bits(), "t={t} k={k}");
            }
        }
    }

    #[test]
    fn binomial_moments() {
        for (t, p) in [(10u64, 0.3), (1023, 0.5), (32767, 0.2), (500, 0.97)] {
            let d = Pmf::binomial(t, p).unwrap();
            assert!(close(d.total(), 1.0, 1e-9));
            assert!(close(d.mean(), t as f64 * p, 1e-9 * t as f64));
            assert!(close(d.variance(), t as f64 * p * (1.0 - p), 1e-6 * t as f64));
        }
    }

    #[test]
    fn hypergeometric_small_cases() {
        let d = Pmf::hypergeometric(4, 2, 2).unwrap();
        assert_eq!(d.offset(), 0);
        for (got, want) in d.masses().iter().zip([1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]) {
            assert!(close(*got, want, 1e-14));
        }
        assert_eq!(Pmf::hypergeometric(9, 0, 4).unwrap(), Pmf::point(0));
        // support starts above zero when draws exceed the failures
        let d = Pmf::hypergeometric(10, 8, 5).unwrap();
        assert_eq!(d.min(), 3);
        assert_eq!(d.max(), 5);
        assert!(Pmf::hypergeometric(4, 5, 2).is_err());
        assert!(Pmf::hypergeometric(4, 2, 5).is_err());
    }

    #[test]
    fn hypergeometric_mean() {
        for (n, k, s) in [(10u64, 4u64, 5u64), (64, 20, 31), (32768, 100, 1023)] {
            let d = Pmf::hypergeometric(n, k, s).unwrap();
            assert!(close(d.mean(), s as f64 * k as f64 / n as f64, 1e-9));
        }
    }

    #[test]
    fn cdf_and_survival() {
        let d = Pmf::binomial(2, 0.5).unwrap();
        assert!(close(d.cdf(1), 0.75, 1e-15));
        assert_eq!(d.cdf(-1), 0.0);
        assert!(close(d.cdf(100), 1.0, 1e-12));
        assert!(close(d.survival(1), 0.75, 1e-15));
        assert_eq!(d.survival(3), 0.0);
        let h = Pmf::hypergeometric(4, 2, 2).unwrap();
        assert!(close(h.cdf(1), 5.0 / 6.0, 1e-14));
    }

    #[test]
    fn shift_moves_offset_only() {
        assert_eq!(Pmf::point(0).shift(3), Pmf::point(3));
        let d = Pmf::binomial(2, 0.5).unwrap();
        let s = d.shift(1);
        assert_eq!(s.offset(), 1);
        assert_eq!(s.masses(), d.masses());
        assert_eq!(s.shift(-1), d);
    }

    #[test]
    fn mixture_cases() {
        let d = Pmf::binomial(4, 0.3).unwrap();
        assert_eq!(Pmf::mixture([(1.0, &d)]).unwrap(), d);

        let (a, b) = (Pmf::point(0), Pmf::point(1));
        let m = Pmf::mixture([(0.5, &a), (0.5, &b)]).unwrap();
        assert_eq!(m, Pmf::bernoulli(0.5).unwrap());

        let (lo, hi) = (Pmf::binomial(3, 0.2).unwrap(), Pmf::binomial(3, 0.8).unwrap());
        let m = Pmf::mixture([(0.3, &lo), (0.7, &hi)]).unwrap();
        assert!(close(m.mass(0), 0.3 * 0.512 + 0.7 * 0.008, 1e-15));

        assert!(Pmf::mixture([(0.4, &a), (0.4, &b)]).is_err());
        assert!(Pmf::mixture(std::iter::empty()).is_err());
    }

    #[test]
    fn poisson_binomial_matches_binomial_for_equal_probabilities() {
        let pb = Pmf::poisson_binomial(&[0.3; 40]).unwrap();
        let b = Pmf::binomial(40, 0.3).unwrap();
        for k in 0..=40 {
            assert!(close(pb.mass(k), b.mass(k), 1e-14));
        }
        let pb = Pmf::poisson_binomial(&[0.2, 0.8]).unwrap();
        assert!(close(pb.mass(0), 0.16, 1e-15));
        assert!(close(pb.mass(1), 0.68, 1e-15));
        assert!(close(pb.mass(2), 0.16, 1e-15));
        assert_eq!(Pmf::poisson_binomial(&[]).unwrap(), Pmf::point(0));
    }

    #[test]
    fn convolve_of_bernoullis() {
        let b = Pmf::bernoulli(0.5).unwrap();
        let c = b.convolve(&b).shift(2);
        assert_eq!(c.offset(), 2);
        assert!(close(c.mass(3), 0.5, 1e-15));
    }

    #[test]
    fn new_validates() {
        assert!(Pmf::new(0, vec![]).is_err());
        assert!(Pmf::new(0, vec![0.5, 0.6]).is_err());
        assert!(Pmf::new(0, vec![1.5, -0.5]).is_err());
        let d = Pmf::new(-3, vec![0.0, 0.25, 0.75, 0.0]).unwrap();
        assert_eq!(d.min(), -2);
        assert_eq!(d.max(), -1);
    }

    #[test]
    fn large_binomial_stays_finite() {
        let d = Pmf::binomial(1 << 16, 0.5).unwrap();
        assert!(d.masses().iter().all(|m| m.is_finite()));
        assert!(close(d.total(), 1.0, 1e-9));
    }
}
