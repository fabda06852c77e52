//! The full logistic map, the Chebyshev map and `2 - x^2` are affinely
//! conjugate. After rescaling to `[0, 1]` they are the same map, so every
//! stage of the pipeline must agree across them.

use ytower_core::critical_orbit::{compute_dn_log, critical_tables, GammaStrategy};
use ytower_core::full_return::{
    build_return_map_with_budget, choose_omega0, tail_of_r, verify_markov,
};
use ytower_core::inducing::levels::build_level_sets;
use ytower_core::inducing::{fix_delta, DeltaOptions};
use ytower_core::tower_stats::{invariant_density, tower_tail_identity, DensityMethod};
use ytower_core::{Family, IntervalMap, MapSpec};

fn full_maps() -> Vec<MapSpec> {
    vec![
        MapSpec::new(Family::Logistic, &[4.0]).unwrap(),
        MapSpec::new(Family::Chebyshev, &[]).unwrap(),
        MapSpec::new(Family::QuadraticNormal, &[2.0]).unwrap(),
    ]
}

#[test]
fn critical_orbit_derivatives_agree() {
    for m in full_maps() {
        let c = m.critical_points()[0];
        let dn = compute_dn_log(&m, c, 40);
        for n in 1..=40 {
            let want = n as f64 * 4f64.ln();
            assert!(
                (dn.log_d[n - 1] - want).abs() < 1e-8,
                "{:?} n={n}",
                m.family()
            );
        }
    }
}

#[test]
fn arcsine_density_in_rescaled_coordinates() {
    for m in full_maps() {
        let mu =
            invariant_density(&m, DensityMethod::BirkhoffHistogram, None, 4_000_000, 3).unwrap();
        let l1 = mu.l1_to_cdf(|u| 2.0 / std::f64::consts::PI * u.clamp(0.0, 1.0).sqrt().asin());
        assert!(l1 < 0.05, "{:?}: {l1}", m.family());
    }
}

#[test]
fn same_binding_constants_and_return_map() {
    let mut seen = Vec::new();
    for m in full_maps() {
        let tables = critical_tables(&m, 2000, &GammaStrategy::Equalizing).unwrap();
        let cfg = fix_delta(&m, &tables, &DeltaOptions::default()).unwrap();
        let levels = build_level_sets(&m, &cfg);
        let choice = choose_omega0(&m, 0, &cfg).unwrap();
        let q = build_return_map_with_budget(&m, &cfg, &levels, &choice, 500, 5000).unwrap();

        let markov = verify_markov(&m, &q);
        assert!(markov.flagged.is_empty() && markov.additivity_failures == 0);
        assert!(tower_tail_identity(&q).holds());
        let total = q.resolved_mass() + q.unresolved_mass;
        assert!((total - q.omega0_length()).abs() <= 1e-9 * q.omega0_length());
        assert!((tail_of_r(&q).tail[0] - 1.0).abs() < 1e-12);
        seen.push((
            cfg.delta,
            cfg.p_delta,
            q.t0,
            q.omega0_length(),
            q.pieces.len(),
        ));
    }
    // rounding differs between the three polynomials, so compare loosely
    for s in &seen[1..] {
        assert_eq!((s.0, s.1, s.2), (seen[0].0, seen[0].1, seen[0].2));
        assert!((s.3 - seen[0].3).abs() <= 1e-9 * seen[0].3);
        assert!(s.4.abs_diff(seen[0].4) <= seen[0].4 / 20, "{seen:?}");
    }
}
