//! Independent oracles and small fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use dsml::gp::{KernelParams, MultiGp};
use dsml::rollout::Problem;
use dsml::tasks::{
    AbsBound, ConstantConstraint, Envelope, FeedbackLinearizing, InitialStatePolicy, Reference, SystemSpec,
    TaskSpec, TrackingTube, ZeroInput,
};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

/// Squared-exponential kernel written out directly from its formula.
pub fn se(sf2: f64, ls: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
    sf2 * (-0.5 * r2).exp()
}

/// Posterior mean (per output) and standard deviation from an explicit
/// inverse of `K + diag(noise)`.
pub fn dense_posterior(
    sf2: f64,
    ls: &[f64],
    points: &[Vec<f64>],
    noise: &[f64],
    targets: &[Vec<f64>],
    query: &[f64],
) -> (Vec<f64>, f64) {
    let n = points.len();
    let outputs = targets.first().map_or(1, Vec::len);
    if n == 0 {
        return (vec![0.0; outputs], sf2.sqrt());
    }
    let k = DMatrix::from_fn(n, n, |i, j| se(sf2, ls, &points[i], &points[j]) + if i == j { noise[i] } else { 0.0 });
    let kinv = k.try_inverse().expect("invertible Gram matrix");
    let kq = DVector::from_fn(n, |i, _| se(sf2, ls, &points[i], query));
    let w = &kinv * &kq;
    let mean = (0..outputs)
        .map(|d| (0..n).map(|i| w[i] * targets[i][d]).sum())
        .collect();
    let var = sf2 - kq.dot(&w);
    (mean, var.max(0.0).sqrt())
}

pub fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// `P(|Z| ≤ 2)` for a standard normal `Z`.
pub fn two_sigma_probability() -> f64 {
    2.0 * phi(2.0) - 1.0
}

/// Scalar system `x⁺ = x + u + g(x̃) + q w` with `u ≡ 0`, an essentially
/// zero unknown part (`σ_f² = 1e-30`), one task starting at 0 with
/// `|x| ≤ bound`.
pub fn linear_1d_problem(q: f64, bound: f64, horizon: usize) -> Problem {
    let system = SystemSpec::new(
        1,
        1,
        Arc::new(|x: &[f64]| vec![x[0] + x[1]]),
        Some(Arc::new(|_: &[f64]| vec![0.0])),
        vec![q],
        vec![0],
    )
    .unwrap();
    let task = TaskSpec::new(
        1,
        Arc::new(ZeroInput { dim: 1 }),
        Arc::new(AbsBound { index: 0, bound }),
        horizon,
        InitialStatePolicy::Fixed { state: vec![0.0] },
    );
    let gp = MultiGp::new(KernelParams::isotropic(1e-30, 1.0, 0.0, vec![0]).unwrap(), 1).unwrap();
    Problem::new(system, vec![task], gp).unwrap()
}

/// Tracking fixture with a closed-form satisfaction probability.
///
/// `x⁺ = u + g(x) + q w`, `g ~ GP(0, k)` with `σ_f² = 1`, `ℓ = 0.5`,
/// `q = 0.5`; the controller `u = r - μ(x)` tracks `r = 0.5` from `x₀ = r`
/// for one step under `|x₁ - r| ≤ 1`.
pub struct TrackingFixture;

impl TrackingFixture {
    pub const R: f64 = 0.5;
    pub const SF2: f64 = 1.0;
    pub const ELL: f64 = 0.5;
    pub const Q: f64 = 0.5;
    pub const C: f64 = 1.0;
    pub const LOWER: f64 = -1.0;
    pub const UPPER: f64 = 2.0;

    pub fn problem() -> Problem {
        Self::problem_with_tolerance(Self::C)
    }

    /// Same system with tube half-width `c`.
    pub fn problem_with_tolerance(c: f64) -> Problem {
        let system = SystemSpec::new(
            1,
            1,
            Arc::new(|x: &[f64]| vec![x[1]]),
            None,
            vec![Self::Q],
            vec![0],
        )
        .unwrap();
        let reference = Reference::Constant(vec![Self::R]);
        let task = TaskSpec::new(
            1,
            Arc::new(FeedbackLinearizing {
                reference: reference.clone(),
                lookahead: 0,
            }),
            Arc::new(TrackingTube {
                reference,
                envelope: Envelope {
                    initial: c,
                    decay: 1.0,
                    floor: c,
                },
            }),
            1,
            InitialStatePolicy::Fixed { state: vec![Self::R] },
        );
        let params = KernelParams::isotropic(Self::SF2, Self::ELL, Self::Q * Self::Q, vec![0]).unwrap();
        Problem::new(system, vec![task], MultiGp::new(params, 1).unwrap()).unwrap()
    }

    /// Exact satisfaction probability with one measurement at state `a`.
    pub fn probability(a: f64) -> f64 {
        let (s2, q2) = (Self::SF2, Self::Q * Self::Q);
        let k = se(s2, &[Self::ELL], &[a], &[Self::R]);
        let var = s2 - k * k / (s2 + q2) + q2;
        2.0 * phi(Self::C / var.sqrt()) - 1.0
    }

    /// Maximizer of [`probability`](Self::probability) on a fine grid.
    pub fn grid_optimum() -> (f64, f64) {
        (0..=30_000)
            .map(|i| Self::LOWER + (Self::UPPER - Self::LOWER) * i as f64 / 30_000.0)
            .map(|a| (a, Self::probability(a)))
            .fold((f64::NAN, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
    }
}

/// Scalar system with one task whose constraint is the constant `value`.
pub fn constant_constraint_problem(value: f64, horizon: usize) -> Problem {
    let system = SystemSpec::new(
        1,
        1,
        Arc::new(|x: &[f64]| vec![x[0] + x[1]]),
        None,
        vec![0.1],
        vec![0],
    )
    .unwrap();
    let task = TaskSpec::new(
        1,
        Arc::new(ZeroInput { dim: 1 }),
        Arc::new(ConstantConstraint(value)),
        horizon,
        InitialStatePolicy::Fixed { state: vec![0.0] },
    );
    let gp = MultiGp::new(KernelParams::isotropic(0.1, 0.5, 0.01, vec![0]).unwrap(), 1).unwrap();
    Problem::new(system, vec![task], gp).unwrap()
}
