//! Probability laws and divergences against exact rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use statpriv::curve::{hockey_stick, property_query_answer_law, total_variation};
use statpriv::distkit::Pmf;

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn choose(n: u64, k: u64) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

fn binomial_exact(trials: u64, p: &BigRational) -> Vec<BigRational> {
    let q = BigRational::one() - p;
    (0..=trials)
        .map(|k| {
            BigRational::from_integer(choose(trials, k)) * num_traits::pow(p.clone(), k as usize)
                * num_traits::pow(q.clone(), (trials - k) as usize)
        })
        .collect()
}

fn assert_close(pmf: &Pmf, exact: &[BigRational], tol: f64) {
    for (k, e) in exact.iter().enumerate() {
        let e = e.to_f64().unwrap();
        let got = pmf.mass(k as i64);
        assert!((got - e).abs() <= tol * e.max(1e-300) + 1e-300, "k={k}: {got} vs {e}");
    }
}

#[test]
fn hypergeometric_reference_mass() {
    let h = Pmf::hypergeometric(10, 4, 5).unwrap();
    let expected = BigRational::from_integer(choose(4, 2) * choose(6, 3)) / BigRational::from_integer(choose(10, 5));
    assert_eq!(expected, ratio(120, 252));
    assert!((h.mass(2) - expected.to_f64().unwrap()).abs() < 1e-15);
}

#[test]
fn hypergeometric_matches_rationals() {
    for (pop, succ, draws) in [(30u64, 7u64, 12u64), (64, 32, 31), (9, 9, 4), (50, 0, 10)] {
        let h = Pmf::hypergeometric(pop, succ, draws).unwrap();
        let total = BigRational::from_integer(choose(pop, draws));
        let exact: Vec<BigRational> = (0..=draws)
            .map(|k| {
                if k > succ || draws - k > pop - succ {
                    BigRational::zero()
                } else {
                    BigRational::from_integer(choose(succ, k) * choose(pop - succ, draws - k)) / total.clone()
                }
            })
            .collect();
        assert_close(&h, &exact, 1e-12);
    }
}

#[test]
fn binomial_matches_rationals() {
    for (trials, n, d) in [(10u64, 1i64, 2i64), (40, 1, 5), (25, 9, 10), (1, 3, 7)] {
        let p = ratio(n, d);
        let b = Pmf::binomial(trials, n as f64 / d as f64).unwrap();
        assert_close(&b, &binomial_exact(trials, &p), 1e-11);
    }
}

#[test]
fn poisson_binomial_matches_rationals() {
    let ps = [ratio(1, 5), ratio(4, 5), ratio(1, 2), ratio(1, 3)];
    let mut exact = vec![BigRational::one()];
    for p in &ps {
        let mut next = vec![BigRational::zero(); exact.len() + 1];
        for (k, m) in exact.iter().enumerate() {
            next[k] += m * (BigRational::one() - p);
            next[k + 1] += m * p;
        }
        exact = next;
    }
    let pb = Pmf::poisson_binomial(&[0.2, 0.8, 0.5, 1.0 / 3.0]).unwrap();
    assert_close(&pb, &exact, 1e-13);
}

#[test]
fn divergences_of_shifted_binomials_match_rationals() {
    for (size, n, d) in [(4u64, 1i64, 2i64), (9, 1, 5), (20, 7, 10)] {
        let p = ratio(n, d);
        let base = binomial_exact(size - 1, &p);
        let mut p1 = vec![BigRational::zero()];
        p1.extend(base.iter().cloned());
        let mut p0 = base.clone();
        p0.push(BigRational::zero());
        let tv = p0
            .iter()
            .zip(&p1)
            .map(|(a, b)| if a > b { a - b } else { b - a })
            .fold(BigRational::zero(), |acc, x| acc + x)
            / BigRational::from_integer(BigInt::from(2));
        let f1 = property_query_answer_law(size, n as f64 / d as f64, 1).unwrap();
        let f0 = property_query_answer_law(size, n as f64 / d as f64, 0).unwrap();
        let tv = tv.to_f64().unwrap();
        assert!((total_variation(&f1, &f0) - tv).abs() < 1e-13);
        assert!((hockey_stick(&f1, &f0, 0.0) - tv).abs() < 1e-13);
    }
}
