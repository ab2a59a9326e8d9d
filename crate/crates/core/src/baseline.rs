//! Accuracy cost of subsampling and the differential-privacy comparison.
//!
//! A property query answered on a sample of `s` out of `n` iid entries loses
//! accuracy because the sample is smaller. The DP baseline answers on the
//! whole database and adds Gaussian noise instead; the comparison asks how
//! many such noisy queries fit into the same `(ε, δ)` budget when the noise
//! costs exactly the accuracy lost to subsampling.

use serde::{Deserialize, Serialize};

use crate::curve::{CurvePoint, PrivacyCurve};
use crate::distkit::{check_probability, compensated_sum, ln_choose};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyFigure {
    /// Increase of the mean squared error of the estimated fraction.
    pub mse_increase: f64,
    /// `sqrt(mse_increase)`.
    pub sigma_increase: f64,
}

/// MSE increase `p(1-p)/s - p(1-p)/n` of the fraction estimate when a
/// property query runs on a sample of size `s` instead of all `n` entries.
pub fn mse_increase(n: u64, s: u64, p: f64) -> Result<AccuracyFigure> {
    check_probability(p)?;
    if s == 0 || s > n {
        return Err(Error::domain(format!("sample size {s} must lie in 1..={n}")));
    }
    let var = p * (1.0 - p);
    let mse = (var / s as f64 - var / n as f64).max(0.0);
    Ok(AccuracyFigure { mse_increase: mse, sigma_increase: mse.sqrt() })
}

/// Classical Gaussian-mechanism calibration
/// `σ = Δ · sqrt(2 ln(1.25 / δ₀)) / ε₀` for a single query.
pub fn gaussian_sigma_for(epsilon0: f64, delta0: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon0 > 0.0) || !epsilon0.is_finite() {
        return Err(Error::domain(format!("epsilon0 {epsilon0} must be positive")));
    }
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(Error::domain(format!("delta0 {delta0} must lie in (0, 1)")));
    }
    if !(sensitivity > 0.0) || !sensitivity.is_finite() {
        return Err(Error::domain(format!("sensitivity {sensitivity} must be positive")));
    }
    Ok(sensitivity * (2.0 * (1.25 / delta0).ln()).sqrt() / epsilon0)
}

/// Per-query Gaussian noise that makes `k` adaptively composed queries
/// `(ε, δ)`-DP: `σ² = 8 k Δ² ln(e + ε/δ) / ε²`.
pub fn composed_gaussian_sigma(epsilon: f64, delta: f64, k: u64, sensitivity: f64) -> Result<f64> {
    check_budget(epsilon, delta)?;
    if k == 0 {
        return Err(Error::domain("at least one query is needed"));
    }
    let log_term = (std::f64::consts::E + epsilon / delta).ln();
    Ok((8.0 * k as f64 * log_term).sqrt() * sensitivity / epsilon)
}

fn check_budget(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::domain(format!("epsilon {epsilon} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Point `i` of the optimal `k`-fold composition of `(ε₀, δ₀)`-DP
/// mechanisms: `ε_i = (k - 2i) ε₀` and
/// `δ_i = 1 - (1 - δ₀)^k (1 - Σ_{l<i} C(k,l) (e^{(k-l)ε₀} - e^{(k-2i+l)ε₀}) / (1 + e^{ε₀})^k)`.
pub fn kov_point(epsilon0: f64, delta0: f64, k: u64, i: u64) -> CurvePoint {
    debug_assert!(2 * i <= k);
    let ln_norm = k as f64 * epsilon0.exp().ln_1p();
    let inner = compensated_sum((0..i).map(|l| {
        let lead = (ln_choose(k, l) + (k - l) as f64 * epsilon0 - ln_norm).exp();
        // e^{(k-l)ε₀} - e^{(k-2i+l)ε₀} = e^{(k-l)ε₀} (1 - e^{-2(i-l)ε₀})
        lead * -(-2.0 * (i - l) as f64 * epsilon0).exp_m1()
    }));
    let survive = (k as f64 * (-delta0).ln_1p()).exp();
    let delta = (1.0 - survive * (1.0 - inner.min(1.0))).clamp(0.0, 1.0);
    CurvePoint { epsilon: (k - 2 * i) as f64 * epsilon0, delta }
}

/// The achievable `(ε_i, δ_i)` points of the optimal homogeneous `k`-fold
/// composition, in increasing ε.
pub fn kov_compose(epsilon0: f64, delta0: f64, k: u64) -> Result<PrivacyCurve> {
    if k == 0 {
        return Err(Error::domain("at least one query is needed"));
    }
    if !(epsilon0 > 0.0) || !epsilon0.is_finite() {
        return Err(Error::domain(format!("epsilon0 {epsilon0} must be positive")));
    }
    if !(0.0..1.0).contains(&delta0) {
        return Err(Error::domain(format!("delta0 {delta0} must lie in [0, 1)")));
    }
    let points = (0..=k / 2).rev().map(|i| kov_point(epsilon0, delta0, k, i)).collect();
    PrivacyCurve::new(points)
}

/// δ of the advanced composition theorem at total privacy `epsilon`:
/// `k δ₀ + exp(-(ε - k ε₀ (e^{ε₀} - 1))² / (2 k ε₀²))`, capped at 1.
pub fn advanced_composition_delta(epsilon0: f64, delta0: f64, k: u64, epsilon: f64) -> f64 {
    let k_f = k as f64;
    let drift = k_f * epsilon0 * epsilon0.exp_m1();
    if epsilon <= drift {
        return 1.0;
    }
    let slack = (-(epsilon - drift).powi(2) / (2.0 * k_f * epsilon0 * epsilon0)).exp();
    (k_f * delta0 + slack).min(1.0)
}

/// How the number of DP queries is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpCalibrationMethod {
    /// Largest `k` with `composed_gaussian_sigma(ε, δ, k, 1/n) <= σ`.
    #[default]
    NoiseFormula,
    /// Per-query `ε₀` from the single-query Gaussian calibration, with `δ₀`
    /// searched on a log grid and `k` checked against the optimal
    /// composition curve.
    OptimalCompositionGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpCalibration {
    pub method: DpCalibrationMethod,
    pub k_max: u64,
    /// Gaussian noise standard deviation per query (answer units).
    pub gaussian_sigma: f64,
    /// Sensitivity of the fraction query, `1/n`.
    pub sensitivity: f64,
    /// Per-query `ε₀`, when the method works per query.
    pub per_query_epsilon: Option<f64>,
    pub per_query_delta: Option<f64>,
}

/// Points of the `δ₀` search grid: 64 log-spaced values in
/// `[δ · 1e-6, δ · 0.999]`.
pub fn delta0_grid(target_delta: f64) -> Vec<f64> {
    const POINTS: usize = 64;
    let (lo, hi) = ((target_delta * 1e-6).ln(), (target_delta * 0.999).ln());
    (0..POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (POINTS - 1) as f64).exp())
        .collect()
}

/// Upper limit on the number of queries searched for.
const K_LIMIT: u64 = 1 << 24;

/// Largest number of fraction queries on `n` entries that DP with Gaussian
/// noise of standard deviation `sigma_target` can answer under
/// `(target_epsilon, target_delta)`.
pub fn max_dp_queries(target_epsilon: f64, target_delta: f64, sigma_target: f64, n: u64) -> Result<DpCalibration> {
    max_dp_queries_with(target_epsilon, target_delta, sigma_target, n, DpCalibrationMethod::default())
}

pub fn max_dp_queries_with(
    target_epsilon: f64,
    target_delta: f64,
    sigma_target: f64,
    n: u64,
    method: DpCalibrationMethod,
) -> Result<DpCalibration> {
    check_budget(target_epsilon, target_delta)?;
    if !(sigma_target > 0.0) {
        return Err(Error::domain(format!("sigma {sigma_target} must be positive")));
    }
    if n == 0 {
        return Err(Error::domain("the database must have at least one entry"));
    }
    let sensitivity = 1.0 / n as f64;
    match method {
        DpCalibrationMethod::NoiseFormula => {
            let per_query = composed_gaussian_sigma(target_epsilon, target_delta, 1, sensitivity)?;
            // σ grows like sqrt(k), so k_max = floor((σ_target / σ_1)²)
            let ratio = (sigma_target / per_query).powi(2);
            let k_max = if ratio.is_finite() { (ratio + 1e-9).floor().min(K_LIMIT as f64) as u64 } else { K_LIMIT };
            Ok(DpCalibration {
                method,
                k_max,
                gaussian_sigma: sigma_target,
                sensitivity,
                per_query_epsilon: None,
                per_query_delta: None,
            })
        }
        DpCalibrationMethod::OptimalCompositionGrid => {
            let mut best = DpCalibration {
                method,
                k_max: 0,
                gaussian_sigma: sigma_target,
                sensitivity,
                per_query_epsilon: None,
                per_query_delta: None,
            };
            for delta0 in delta0_grid(target_delta) {
                let epsilon0 = sensitivity * (2.0 * (1.25 / delta0).ln()).sqrt() / sigma_target;
                let fits = |k: u64| composition_fits(epsilon0, delta0, k, target_epsilon, target_delta);
                let k = largest_true(fits);
                if k > best.k_max {
                    best.k_max = k;
                    best.per_query_epsilon = Some(epsilon0);
                    best.per_query_delta = Some(delta0);
                }
            }
            Ok(best)
        }
    }
}

/// Whether `k`-fold composition of `(ε₀, δ₀)` reaches a point with
/// `ε <= target_epsilon` and `δ <= target_delta`. δ is nonincreasing along
/// the curve, so only the point with the largest admissible ε matters.
fn composition_fits(epsilon0: f64, delta0: f64, k: u64, target_epsilon: f64, target_delta: f64) -> bool {
    let excess = k as f64 * epsilon0 - target_epsilon;
    let i = if excess <= 0.0 { 0.0 } else { (excess / (2.0 * epsilon0) - 1e-12).ceil() };
    if i > (k / 2) as f64 {
        return false;
    }
    kov_point(epsilon0, delta0, k, i as u64).delta <= target_delta
}

/// Largest `k >= 1` with `fits(k)` for a predicate monotone in `k`; 0 if none.
fn largest_true<F: Fn(u64) -> bool>(fits: F) -> u64 {
    if !fits(1) {
        return 0;
    }
    let (mut lo, mut hi) = (1u64, 2u64);
    while fits(hi) {
        lo = hi;
        if hi >= K_LIMIT {
            return K_LIMIT;
        }
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
