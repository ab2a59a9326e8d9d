use statpriv::compose::{nonadaptive_iid, CompositionSpec};
use statpriv::oracle::*;
use statpriv::partition::TemplateFormat;
use statpriv::query::QueryDescriptor;
use statpriv::spc::Scenario;

fn property() -> QueryDescriptor {
    QueryDescriptor::property(0)
}

#[test]
fn one_of_two_entries_sampled() {
    let sc = Scenario::iid(2, 0.5, 1).unwrap();
    let spec = CompositionSpec::repeated(TemplateFormat::new(vec![1]).unwrap(), property());
    let exact = exact_mechanism_delta(&sc, &spec, 0.0).unwrap();
    let bound = nonadaptive_iid(&sc, &spec, 0.0).unwrap().total_delta;
    assert!((bound - 0.5).abs() < 1e-15);
    assert!(exact <= bound + DOMINATION_TOLERANCE);
}

#[test]
fn deterministic_critical_entry_neighbours_do_not_matter() {
    // other entries fixed to 0 or 1: the answer reveals the critical bit
    let sc = Scenario::explicit(vec![0.0, 1.0, 0.3, 0.0], 2).unwrap();
    let spec = CompositionSpec::repeated(TemplateFormat::new(vec![4]).unwrap(), property());
    assert!((exact_mechanism_delta(&sc, &spec, 0.0).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn two_blocks_of_four_entries_are_dominated_on_the_grid() {
    let sc = Scenario::iid(4, 0.5, 0).unwrap();
    let spec = CompositionSpec::repeated(TemplateFormat::equal(4, 2).unwrap(), property());
    let law = exact_mechanism_law(&sc, &spec).unwrap();
    assert!(normalization_error(&law) < 1e-12);
    assert_eq!(law.values(), 2);
    for eps in statpriv::curve::DEFAULT_EPSILON_GRID {
        let exact = law.delta(eps).unwrap();
        let bound = nonadaptive_iid(&sc, &spec, eps).unwrap().total_delta;
        assert!(exact <= bound + DOMINATION_TOLERANCE, "eps={eps}: {exact} > {bound}");
    }
}

#[test]
fn monte_carlo_matches_exact_and_is_reproducible() {
    let sc = Scenario::explicit(vec![0.3, 0.5, 0.7, 0.2, 0.9], 0).unwrap();
    let spec = two_branch_spec(TemplateFormat::new(vec![2, 2]).unwrap()).unwrap();
    let law = exact_mechanism_law(&sc, &spec).unwrap();
    let hist = mc_histograms(&sc, &spec, 50_000, 99).unwrap();
    for eps in [0.0, 0.1, 1.0] {
        let est = hist.estimate(eps).unwrap();
        assert!(est.covers(law.delta(eps).unwrap(), 3.0), "eps={eps}: {est:?}");
        assert_eq!(est, mc_distinguish(&sc, &spec, eps, 50_000, 99).unwrap());
    }
    let other = mc_distinguish(&sc, &spec, 0.0, 50_000, 100).unwrap();
    assert_ne!(other, hist.estimate(0.0).unwrap());
}

#[test]
fn empirical_law_is_normalized() {
    let sc = Scenario::iid(6, 0.2, 5).unwrap();
    let spec = CompositionSpec::repeated(TemplateFormat::equal(6, 2).unwrap(), property());
    let hist = mc_histograms(&sc, &spec, 5_000, 1).unwrap();
    for v in 0..2 {
        assert!((hist.empirical_law(v).unwrap().total() - 1.0).abs() < 1e-12);
    }
    assert_eq!(hist.space().count(), 16);
}

#[test]
fn matrix_covers_the_required_grid() {
    let cases = verification_matrix().unwrap();
    let iid = cases.iter().filter(|c| c.scenario.iid_probabilities().is_some()).count();
    assert_eq!(iid, 4 * 2 * 2 * 2);
    assert!(cases.iter().any(|c| c.scenario.iid_probabilities().is_none()));
    assert!(cases.iter().all(|c| c.scenario.n() <= 8 && c.spec.blocks() <= 2));
}

#[test]
fn heterogeneous_cases_are_dominated() {
    let cases: Vec<_> = verification_matrix()
        .unwrap()
        .into_iter()
        .filter(|c| c.scenario.iid_probabilities().is_none())
        .collect();
    let report = verify_cases(&cases, &VERIFICATION_EPSILONS, None).unwrap();
    assert!(report.passed());
    assert!(report.consistency.is_empty());
}
