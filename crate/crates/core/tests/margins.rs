use std::f64::consts::PI;

use uqmargins::continuation::{
    compute_margins_from, expand_uncertainty, reference_frc, seed_orbits, Family, MarginSettings,
};
use uqmargins::harness::RunConfig;
use uqmargins::models::SystemModel;
use uqmargins::orbits::solve_periodic_orbit;

fn duffing() -> (SystemModel, MarginSettings) {
    let config = RunConfig::preset("duffing_s2").unwrap();
    let model = config.system_model().unwrap();
    let mut settings = config.margins.clone();
    settings.seeds = vec![0.5];
    (model, settings)
}

#[test]
fn marginal_points_are_extremes_over_the_circle() {
    let (model, settings) = duffing();
    let radius = 0.05;
    let reference = reference_frc(&model, &settings).unwrap();
    let seed = seed_orbits(&reference, &settings)[0].clone();
    let e = expand_uncertainty(&model, &seed, radius, &settings).unwrap();
    assert_eq!(e.marginal.len(), 2);

    // Metric of orbits on the circle of radius R, re-solved directly.
    let sampled: Vec<f64> = (0..72)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / 72.0;
            let eps = [radius * theta.cos(), radius * theta.sin()];
            let (p, _) = model.realize(0.5, &eps).unwrap();
            solve_periodic_orbit(&model, &p, &seed.x0, seed.period, &settings.integration, &settings.shooting)
                .unwrap()
                .metric_value
        })
        .collect();
    let hi = sampled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = sampled.iter().copied().fold(f64::INFINITY, f64::min);

    for m in &e.marginal {
        let p = &m.point;
        assert!((p.eps[0].hypot(p.eps[1]) - radius).abs() < 1e-9);
        assert!((p.lambda - 0.5).abs() < 1e-12);
        match m.family {
            Family::Positive => {
                assert!(p.metric > seed.metric);
                assert!(p.metric >= hi - 1e-9, "{} < {hi}", p.metric);
                // A 5-degree grid misses the maximum by O(h^2).
                assert!(p.metric - hi < 1e-3 * hi);
            }
            Family::Negative => {
                assert!(p.metric < seed.metric);
                assert!(p.metric <= lo + 1e-9, "{} > {lo}", p.metric);
                assert!(lo - p.metric < 1e-3 * lo);
            }
        }
    }
}

#[test]
fn zero_radius_margins_are_the_reference() {
    let (model, settings) = duffing();
    let reference = reference_frc(&model, &settings).unwrap();
    let run = compute_margins_from(&model, &reference, 0.0, &settings).unwrap();
    assert_eq!(run.propagation.branches.len(), 2);
    for b in &run.propagation.branches {
        assert_eq!(b.points, reference.points);
    }
}

#[test]
fn margins_enclose_the_reference_off_resonance() {
    let (model, mut settings) = duffing();
    settings.lambda_range = (0.3, 0.9);
    settings.seeds = vec![0.5];
    settings.sample_lambdas = vec![0.4, 0.6, 0.8];
    let reference = reference_frc(&model, &settings).unwrap();
    let run = compute_margins_from(&model, &reference, 0.1, &settings).unwrap();
    assert_eq!(run.propagation.failures, 0);
    let families: Vec<_> = run.propagation.branches.iter().map(|b| b.family).collect();
    assert!(families.contains(&Some(Family::Positive)) && families.contains(&Some(Family::Negative)));
    for lambda in [0.4, 0.6, 0.8] {
        let (lo, hi) = uqmargins::continuation::margin_bounds_at(&run.propagation.branches, lambda).unwrap();
        let (r_lo, r_hi) = uqmargins::continuation::margin_bounds_at(std::slice::from_ref(&reference), lambda).unwrap();
        assert!(lo < r_lo && r_hi < hi, "{lambda}: [{lo}, {hi}] vs [{r_lo}, {r_hi}]");
    }
    for b in &run.propagation.branches {
        for p in &b.points {
            assert!((p.eps[0].hypot(p.eps[1]) - 0.1).abs() < 1e-8);
        }
    }
}
