use proptest::prelude::*;
use statpriv::curve::{hockey_stick, hockey_stick_threshold, property_query_answer_law, total_variation};
use statpriv::distkit::Pmf;
use statpriv::partition::{PartitionLaw, TemplateFormat};
use statpriv::seeding::trial_rng;

fn format_and_n() -> impl Strategy<Value = (Vec<usize>, usize)> {
    prop::collection::vec(1usize..4, 1..4).prop_flat_map(|sizes| {
        let total: usize = sizes.iter().sum();
        (Just(sizes), total..total + 3)
    })
}

proptest! {
    #[test]
    fn hockey_stick_is_a_bounded_nonincreasing_curve(size in 1u64..300, p in 0.01f64..0.99, e1 in 0.0f64..2.0, e2 in 0.0f64..2.0) {
        let a = property_query_answer_law(size, p, 1).unwrap();
        let b = property_query_answer_law(size, p, 0).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let d_lo = hockey_stick(&a, &b, lo);
        let d_hi = hockey_stick(&a, &b, hi);
        prop_assert!((0.0..=1.0).contains(&d_lo));
        prop_assert!(d_hi <= d_lo + 1e-15);
        prop_assert!((hockey_stick(&a, &b, 0.0) - total_variation(&a, &b)).abs() < 1e-12);
        prop_assert!((hockey_stick_threshold(&b, &a, hi).unwrap() - hockey_stick(&b, &a, hi)).abs() < 1e-12);
    }

    #[test]
    fn convolution_adds_means_and_variances(n1 in 0u64..40, p1 in 0.0f64..1.0, n2 in 0u64..40, p2 in 0.0f64..1.0, shift in -5i64..5) {
        let a = Pmf::binomial(n1, p1).unwrap().shift(shift);
        let b = Pmf::binomial(n2, p2).unwrap();
        let c = a.convolve(&b);
        prop_assert!((c.total() - 1.0).abs() < 1e-9);
        prop_assert!((c.mean() - a.mean() - b.mean()).abs() < 1e-9);
        prop_assert!((c.variance() - a.variance() - b.variance()).abs() < 1e-8);
    }

    #[test]
    fn mixtures_stay_normalized(w in 0.0f64..1.0, n in 1u64..30, p in 0.0f64..1.0) {
        let a = Pmf::binomial(n, p).unwrap();
        let b = Pmf::point(3);
        let m = Pmf::mixture([(w, &a), (1.0 - w, &b)]).unwrap();
        prop_assert!((m.total() - 1.0).abs() < 1e-9);
        prop_assert!((m.mean() - (w * a.mean() + (1.0 - w) * 3.0)).abs() < 1e-9);
    }

    #[test]
    fn sampled_templates_are_injective((sizes, n) in format_and_n(), seed in any::<u64>()) {
        let format = TemplateFormat::new(sizes.clone()).unwrap();
        let law = PartitionLaw::new(n, format).unwrap();
        let t = law.sample(&mut trial_rng(seed, 0));
        prop_assert!(t.is_injective());
        for (block, &size) in t.blocks().iter().zip(&sizes) {
            prop_assert_eq!(block.len(), size);
            prop_assert!(block.iter().all(|&i| i < n));
        }
        let critical = (seed % n as u64) as usize;
        let block = (seed % sizes.len() as u64) as usize;
        let restricted = law.restricted(critical, block).unwrap();
        let t = restricted.sample(&mut trial_rng(seed, 1));
        prop_assert_eq!(t.block_of(critical), Some(block));
    }

    #[test]
    fn enumeration_matches_template_count((sizes, n) in format_and_n()) {
        let law = PartitionLaw::new(n, TemplateFormat::new(sizes).unwrap()).unwrap();
        let templates = law.enumerate(100_000).unwrap();
        prop_assert_eq!(templates.len() as u128, law.template_count());
        let total: f64 = templates.iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}
