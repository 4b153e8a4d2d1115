use drm_core::design::DesignSystem;
use drm_core::domain::{build_domain, DomainSelection};
use drm_core::ingest::{aggregate, frame_from_data, read_records, write_records};
use drm_core::iteration::{run, update_lambda, CriterionCheck, IterationConfig};
use drm_core::pipeline::{fit, FitConfig};
use drm_core::simulate::{simulate, Scenario};
use drm_core::verify::{oracle_deviation, random_instance, ORACLE_COV_TOLERANCE, ORACLE_Z_TOLERANCE};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_matches_dense_reference(seed in 1000u64..100_000) {
        let inst = random_instance(seed).unwrap();
        let dev = oracle_deviation(&inst, 0.0).unwrap();
        prop_assert!(dev.z <= ORACLE_Z_TOLERANCE, "z deviation {}", dev.z);
        prop_assert!(dev.cov <= ORACLE_COV_TOLERANCE, "cov deviation {}", dev.cov);
    }

    #[test]
    fn update_moves_toward_target(rbar in 0.01f64..0.99, target in 0.05f64..0.95, lambda in 1e-4f64..1e4, damping in 0.1f64..=1.0) {
        let check = CriterionCheck::new(Some(rbar), target, 0.05);
        let next = update_lambda(lambda, &check, damping);
        prop_assert!(next > 0.0);
        if rbar < target {
            prop_assert!(next > lambda);
        } else if rbar > target {
            prop_assert!(next < lambda);
        }
    }

    #[test]
    fn aggregation_ignores_record_order(seed in 0u64..1000) {
        let mut sc = Scenario::preset("linear-age").unwrap();
        sc.n_per_cell = 3;
        let mut records = simulate(&sc).unwrap();
        let frame = frame_from_data(&records).unwrap();
        let a = aggregate(&records, &frame, 1).unwrap();
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = aggregate(&records, &frame, 1).unwrap();
        prop_assert_eq!(a.cells, b.cells);
        prop_assert_eq!(a.excluded, b.excluded);
    }
}

#[test]
fn paper_scenario_converges_for_every_reference_pair() {
    let records = simulate(&Scenario::preset("paper").unwrap()).unwrap();
    for r_u in [0.7, 0.8, 0.9, 0.95] {
        let cfg = FitConfig { iteration: IterationConfig { r_u, r_v: 0.7, ..Default::default() }, ..Default::default() };
        let res = fit(&records, &cfg).unwrap();
        assert!(res.outcome.converged(), "r_u = {r_u}: {:?}", res.outcome.trace.last());
        assert!(res.outcome.iterations <= 50, "r_u = {r_u}: {} iterations", res.outcome.iterations);
        assert!(res.outcome.trace.iter().all(|t| t.lambda1 > 0.0 && t.lambda2 > 0.0));
    }
}

#[test]
fn rough_start_raises_trend_weight() {
    let records = simulate(&Scenario::preset("linear-age").unwrap()).unwrap();
    let frame = frame_from_data(&records).unwrap();
    let agg = aggregate(&records, &frame, 5).unwrap();
    let domain = build_domain(&frame, &agg.cells, DomainSelection::AllCohorts).unwrap();
    let sys = DesignSystem::assemble(&agg.cells, &domain, false).unwrap();
    let cfg = IterationConfig { lambda1_init: 1e-3, max_iter: 2, ..Default::default() };
    let out = run(&sys, &domain, &cfg).unwrap();
    let first = &out.trace[0];
    assert!(first.r_u.unwrap() < cfg.r_u, "start is not rough: {:?}", first.r_u);
    assert!(out.trace[1].lambda1 > first.lambda1);
}

#[test]
fn iteration_trace_is_deterministic() {
    let records = simulate(&Scenario::preset("linear-age").unwrap()).unwrap();
    let a = fit(&records, &FitConfig::default()).unwrap();
    let b = fit(&records, &FitConfig::default()).unwrap();
    assert_eq!(a.outcome.trace, b.outcome.trace);
    assert_eq!(a.outcome.solution.z_hat, b.outcome.solution.z_hat);
}

#[test]
fn multipoint_domain_is_a_subset() {
    let records = simulate(&Scenario::preset("paper").unwrap()).unwrap();
    let frame = frame_from_data(&records).unwrap();
    let agg = aggregate(&records, &frame, 5).unwrap();
    let all = build_domain(&frame, &agg.cells, DomainSelection::AllCohorts).unwrap();
    let multi = build_domain(&frame, &agg.cells, DomainSelection::MultiPoint).unwrap();
    assert!(multi.u_count() <= all.u_count());
    for (m, a) in multi.u_mask().iter().zip(all.u_mask()) {
        assert!(!m || *a);
    }
}

#[test]
fn simulated_file_round_trips() {
    let records = simulate(&Scenario::preset("paper").unwrap()).unwrap();
    let mut buf = Vec::new();
    write_records(&records, &mut buf).unwrap();
    assert_eq!(read_records(buf.as_slice()).unwrap(), records);
}
