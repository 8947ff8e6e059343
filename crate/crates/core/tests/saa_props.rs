mod common;

use common::{constant_constraint_problem, linear_1d_problem, two_sigma_probability, TrackingFixture};
use dsml::rollout::{generate_batch, rollout_one, Problem, SampleBatch};
use dsml::saa::{evaluate, estimate_satisfaction, surrogate, SurrogateOptions};
use proptest::prelude::*;

fn batch_for(problem: &Problem, locations: &[f64], seed: u64, m: usize) -> SampleBatch {
    let n = locations.len() / problem.augmented_dim();
    generate_batch(seed, m, &problem.index_map(n), problem.system().state_dim()).unwrap()
}

fn saa_error(m: usize, seed: u64) -> f64 {
    let problem = linear_1d_problem(1.0, 2.0, 1);
    let c = estimate_satisfaction(&problem, &[], &batch_for(&problem, &[], seed, m)).unwrap().value;
    (c - two_sigma_probability()).abs()
}

#[test]
fn one_step_gaussian_fixture_is_calibrated() {
    let p = two_sigma_probability();
    assert!((p - 0.954_499_736).abs() < 1e-9);
    let m = 10_000;
    let tol = 3.0 * (p * (1.0 - p) / m as f64).sqrt();
    let within = (0..20).filter(|&s| saa_error(m, 100 + s) < tol).count();
    assert!(within >= 18, "{within} of 20 seeds within {tol}");
}

#[test]
fn saa_error_shrinks_like_inverse_root_m() {
    let ms = [100usize, 1_000, 10_000];
    let errs: Vec<f64> = ms
        .iter()
        .map(|&m| (0..20).map(|s| saa_error(m, 500 + s)).sum::<f64>() / 20.0)
        .collect();
    let xs: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((-0.7..=-0.3).contains(&slope), "slope {slope}, errors {errs:?}");
}

#[test]
fn constant_constraints_give_extreme_estimates() {
    let ok = constant_constraint_problem(-1.0, 3);
    let locs = [0.2, 0.0];
    let batch = batch_for(&ok, &locs, 1, 40);
    let e = evaluate(&ok, &locs, &batch, 1.0).unwrap();
    assert_eq!(e.estimate.value, 1.0);
    assert_eq!(e.surrogate, 0.0);
    let s = surrogate(&ok, &locs, &batch, SurrogateOptions::default()).unwrap();
    assert!(s.gradient.unwrap().iter().all(|g| *g == 0.0));

    let bad = constant_constraint_problem(1.0, 3);
    let e = evaluate(&bad, &locs, &batch, 1.0).unwrap();
    assert_eq!(e.estimate.value, 0.0);
    assert_eq!(e.surrogate, 3.0);
}

#[test]
fn repeated_evaluation_is_bit_stable() {
    let problem = TrackingFixture::problem();
    let locs = [0.3, 0.0];
    let batch = batch_for(&problem, &locs, 9, 300);
    let a = evaluate(&problem, &locs, &batch, 1.0).unwrap();
    let b = evaluate(&problem, &locs, &batch, 1.0).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.surrogate.to_bits(), b.surrogate.to_bits());
}

#[test]
fn central_gradient_agrees_with_one_sided_difference() {
    // With a negative tube width every sample violates, so the surrogate is
    // the smooth mean of |x₁ - r| + 10.
    let problem = TrackingFixture::problem_with_tolerance(-10.0);
    let locs = [0.9, 0.0];
    let batch = batch_for(&problem, &locs, 3, 200);
    let opts = SurrogateOptions::default();
    let g = surrogate(&problem, &locs, &batch, opts).unwrap().gradient.unwrap();
    let f = |a: f64| evaluate(&problem, &[a, 0.0], &batch, 1.0).unwrap().surrogate;
    let h = 1e-5;
    let one_sided = (f(locs[0] + h) - f(locs[0])) / h;
    assert!(g[0].abs() > 1e-3, "degenerate instance, gradient {}", g[0]);
    assert!((g[0] - one_sided).abs() <= 1e-2 * one_sided.abs(), "{} vs {one_sided}", g[0]);
    // The input coordinate is outside the GP projection and has no effect.
    assert_eq!(g[1], 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn indicators_dominated_by_hinge(a in -1.0f64..2.0, c in 0.2f64..1.5, seed in 0u64..1000) {
        let problem = TrackingFixture::problem_with_tolerance(c);
        let locs = [a, 0.0];
        let batch = batch_for(&problem, &locs, seed, 64);
        let e = evaluate(&problem, &locs, &batch, 1.0).unwrap();
        let mut total = 0.0;
        let mut positive = 0usize;
        for (m, &ind) in e.estimate.indicators.iter().enumerate() {
            let r = rollout_one(&problem, &locs, batch.sample(m)).unwrap();
            let x1 = r.trajectories[0].states[1][0];
            let h = (x1 - TrackingFixture::R).abs() - c;
            prop_assert_eq!(ind, h <= 0.0);
            if h > 0.0 {
                prop_assert!(!ind);
                positive += 1;
            }
            total += h.max(0.0);
        }
        let n = e.estimate.indicators.len() as f64;
        prop_assert!(e.estimate.value >= 1.0 - positive as f64 / n);
        prop_assert_eq!(e.estimate.value, e.estimate.indicators.iter().filter(|b| **b).count() as f64 / n);
        prop_assert!((e.surrogate - total / n).abs() < 1e-12);
        prop_assert_eq!(e.surrogate == 0.0, e.estimate.value == 1.0);
    }
}
