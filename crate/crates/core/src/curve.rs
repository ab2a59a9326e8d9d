//! Privacy curves: the hockey-stick divergence between two answer laws and
//! its maximum over pairs of values of the critical entry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distkit::{check_probability, compensated_sum, Pmf};
use crate::error::{Error, Result};

/// ε grid used when none is given: the union of the two published table grids.
pub const DEFAULT_EPSILON_GRID: [f64; 6] = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2];

/// Answer laws indexed by the value of the critical entry.
pub type CriticalLaws = BTreeMap<i64, Pmf>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub delta: f64,
}

/// Sampled map ε ↦ δ with strictly increasing ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyCurve {
    points: Vec<CurvePoint>,
}

/// Slack allowed on the nonincreasing-δ invariant.
const MONOTONE_SLACK: f64 = 1e-12;

impl PrivacyCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        for pt in &points {
            if !(pt.epsilon >= 0.0) || !pt.epsilon.is_finite() {
                return Err(Error::domain(format!("epsilon {} must be finite and >= 0", pt.epsilon)));
            }
            if !(0.0..=1.0).contains(&pt.delta) {
                return Err(Error::domain(format!("delta {} is outside [0, 1]", pt.delta)));
            }
        }
        for pair in points.windows(2) {
            if pair[1].epsilon <= pair[0].epsilon {
                return Err(Error::domain("curve epsilons must be strictly increasing"));
            }
            if pair[1].delta > pair[0].delta + MONOTONE_SLACK {
                return Err(Error::domain(format!(
                    "delta increases from {} to {} between epsilon {} and {}",
                    pair[0].delta, pair[1].delta, pair[0].epsilon, pair[1].epsilon
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// δ of the sampled point with exactly this ε, if any.
    pub fn delta_at(&self, epsilon: f64) -> Option<f64> {
        self.points.iter().find(|p| p.epsilon == epsilon).map(|p| p.delta)
    }

    /// Smallest δ among points with ε at most `epsilon`; `None` if no such point.
    pub fn best_delta_within(&self, epsilon: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.epsilon <= epsilon)
            .map(|p| p.delta)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
    }
}

/// `Σ_a max(0, p(a) - e^ε q(a))` over the union of the supports.
pub fn hockey_stick(p: &Pmf, q: &Pmf, epsilon: f64) -> f64 {
    let scale = epsilon.exp();
    let lo = p.min().min(q.min());
    let hi = p.max().max(q.max());
    let delta = compensated_sum((lo..=hi).map(|a| {
        let pa = p.mass(a);
        let qa = q.mass(a);
        // q(a) = 0 contributes p(a) even for infinite ε
        if qa == 0.0 {
            pa
        } else {
            (pa - scale * qa).max(0.0)
        }
    }));
    delta.clamp(0.0, 1.0)
}

/// Total-variation distance `Σ |p - q| / 2`.
pub fn total_variation(p: &Pmf, q: &Pmf) -> f64 {
    let lo = p.min().min(q.min());
    let hi = p.max().max(q.max());
    0.5 * compensated_sum((lo..=hi).map(|a| (p.mass(a) - q.mass(a)).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RatioTrend {
    Increasing,
    Decreasing,
}

/// Hockey-stick divergence through the likelihood-ratio threshold.
///
/// When `p(a)/q(a)` is monotone in `a` the set `{a : p(a) > e^ε q(a)}` is a
/// tail, and the divergence is `P(tail) - e^ε Q(tail)`. Fails with a domain
/// error when the ratio is not monotone.
pub fn hockey_stick_threshold(p: &Pmf, q: &Pmf, epsilon: f64) -> Result<f64> {
    let lo = p.min().min(q.min());
    let hi = p.max().max(q.max());
    let ratios: Vec<(i64, f64)> = (lo..=hi)
        .filter_map(|a| {
            let (pa, qa) = (p.mass(a), q.mass(a));
            match (pa > 0.0, qa > 0.0) {
                (false, false) => None,
                (true, false) => Some((a, f64::INFINITY)),
                _ => Some((a, pa / qa)),
            }
        })
        .collect();
    let trend = ratio_trend(&ratios)?;
    let scale = epsilon.exp();
    let above = |r: f64| r > scale;
    let (from, to) = match trend {
        RatioTrend::Increasing => match ratios.iter().find(|(_, r)| above(*r)) {
            Some((t, _)) => (*t, hi),
            None => return Ok(0.0),
        },
        RatioTrend::Decreasing => match ratios.iter().rev().find(|(_, r)| above(*r)) {
            Some((t, _)) => (lo, *t),
            None => return Ok(0.0),
        },
    };
    let p_tail = compensated_sum((from..=to).map(|a| p.mass(a)));
    let q_tail = compensated_sum((from..=to).map(|a| q.mass(a)));
    let delta = if q_tail == 0.0 { p_tail } else { p_tail - scale * q_tail };
    Ok(delta.clamp(0.0, 1.0))
}

fn ratio_trend(ratios: &[(i64, f64)]) -> Result<RatioTrend> {
    const REL: f64 = 1e-9;
    let nondecreasing = ratios.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - REL));
    if nondecreasing {
        return Ok(RatioTrend::Increasing);
    }
    let nonincreasing = ratios.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + REL));
    if nonincreasing {
        return Ok(RatioTrend::Decreasing);
    }
    Err(Error::domain("likelihood ratio is not monotone; use the direct sum"))
}

/// Maximum hockey-stick divergence over ordered pairs of distinct critical
/// values.
pub fn d_hat(laws: &CriticalLaws, epsilon: f64) -> Result<f64> {
    if laws.len() < 2 {
        return Err(Error::domain("d_hat needs laws for at least two critical values"));
    }
    check_epsilon(epsilon)?;
    let mut best = 0.0_f64;
    for (v, p) in laws {
        for (w, q) in laws {
            if v != w {
                best = best.max(hockey_stick(p, q, epsilon));
            }
        }
    }
    Ok(best)
}

/// Law of the count of positive entries among `size` entries, one of which is
/// the critical entry pinned to `critical_value`, the rest Bernoulli(`p`).
pub fn property_query_answer_law(size: u64, p: f64, critical_value: i64) -> Result<Pmf> {
    if size == 0 {
        return Err(Error::domain("a property query needs at least one entry"));
    }
    if !(critical_value == 0 || critical_value == 1) {
        return Err(Error::domain(format!("critical value {critical_value} is not binary")));
    }
    check_probability(p)?;
    Ok(Pmf::binomial(size - 1, p)?.shift(critical_value))
}

/// Both conditional answer laws of a property query over `size` iid entries.
pub fn property_query_laws(size: u64, p: f64) -> Result<CriticalLaws> {
    Ok(CriticalLaws::from([
        (0, property_query_answer_law(size, p, 0)?),
        (1, property_query_answer_law(size, p, 1)?),
    ]))
}

/// Pointwise `d_hat` on a strictly increasing ε grid.
pub fn eval_curve(laws: &CriticalLaws, epsilons: &[f64]) -> Result<PrivacyCurve> {
    check_grid(epsilons)?;
    let points = epsilons
        .iter()
        .map(|&epsilon| Ok(CurvePoint { epsilon, delta: d_hat(laws, epsilon)? }))
        .collect::<Result<Vec<_>>>()?;
    PrivacyCurve::new(points)
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon >= 0.0 && !epsilon.is_nan() {
        Ok(())
    } else {
        Err(Error::domain(format!("epsilon {epsilon} must be >= 0")))
    }
}

pub fn check_grid(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::domain("the epsilon grid is empty"));
    }
    for &e in epsilons {
        if !e.is_finite() {
            return Err(Error::domain(format!("epsilon {e} must be finite")));
        }
        check_epsilon(e)?;
    }
    if epsilons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("the epsilon grid must be strictly increasing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint_laws() {
        let d = Pmf::binomial(7, 0.3).unwrap();
        for eps in [0.0, 0.1, 3.0] {
            assert_eq!(hockey_stick(&d, &d, eps), 0.0);
            assert_eq!(hockey_stick(&Pmf::point(1), &Pmf::point(0), eps), 1.0);
        }
        assert_eq!(hockey_stick(&Pmf::point(1), &Pmf::point(0), f64::INFINITY), 1.0);
    }

    #[test]
    fn shifted_bernoulli_example() {
        let q = Pmf::binomial(1, 0.5).unwrap();
        let p = q.shift(1);
        assert!((hockey_stick(&p, &q, 0.1) - 0.5).abs() < 1e-15);
        assert!((hockey_stick_threshold(&p, &q, 0.1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn d_hat_needs_two_values() {
        let laws = CriticalLaws::from([(0, Pmf::point(0))]);
        assert!(d_hat(&laws, 0.1).is_err());
        let laws = property_query_laws(5, 0.5).unwrap();
        assert!(d_hat(&laws, -1.0).is_err());
        let same = CriticalLaws::from([(0, Pmf::point(2)), (1, Pmf::point(2))]);
        assert_eq!(d_hat(&same, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn answer_law_cases() {
        assert_eq!(property_query_answer_law(1, 0.3, 1).unwrap(), Pmf::point(1));
        let d = property_query_answer_law(2, 0.5, 0).unwrap();
        assert_eq!(d.offset(), 0);
        assert_eq!(d.masses(), &[0.5, 0.5]);
        let d = property_query_answer_law(4, 0.5, 1).unwrap();
        assert!((d.mass(2) - 0.375).abs() < 1e-15);
        assert!(property_query_answer_law(0, 0.5, 1).is_err());
        assert!(property_query_answer_law(3, 0.5, 2).is_err());
    }

    #[test]
    fn eval_curve_checks_grid() {
        let laws = property_query_laws(64, 0.5).unwrap();
        assert!(eval_curve(&laws, &[0.1, 0.05]).is_err());
        assert!(eval_curve(&laws, &[]).is_err());
        assert!(eval_curve(&laws, &[-0.1, 0.2]).is_err());
        let c = eval_curve(&laws, &[0.02]).unwrap();
        assert_eq!(c.points()[0].delta, d_hat(&laws, 0.02).unwrap());
        let c = eval_curve(&laws, &[0.0, 10.0]).unwrap();
        assert!(c.points()[1].delta <= c.points()[0].delta);
    }

    #[test]
    fn threshold_rejects_non_monotone_ratio() {
        let p = Pmf::new(0, vec![0.5, 0.0, 0.5]).unwrap();
        let q = Pmf::new(0, vec![0.2, 0.6, 0.2]).unwrap();
        assert!(hockey_stick_threshold(&p, &q, 0.0).is_err());
    }

    #[test]
    fn curve_validation() {
        let bad = vec![CurvePoint { epsilon: 0.1, delta: 0.2 }, CurvePoint { epsilon: 0.2, delta: 0.3 }];
        assert!(PrivacyCurve::new(bad).is_err());
        let ok = PrivacyCurve::new(vec![
            CurvePoint { epsilon: 0.0, delta: 0.5 },
            CurvePoint { epsilon: 0.3, delta: 0.2 },
        ])
        .unwrap();
        assert_eq!(ok.best_delta_within(0.2), Some(0.5));
        assert_eq!(ok.best_delta_within(0.3), Some(0.2));
        assert_eq!(ok.delta_at(0.3), Some(0.2));
    }
}
