//! Sample-average estimates of joint constraint satisfaction and the hinge
//! surrogate used to search over measurement locations.
//!
//! Samples are rolled out in parallel; per-sample results are collected in
//! sample order and reduced sequentially, so every estimate is bit-stable
//! regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rollout::{rollout_one, Problem, RolloutError, SampleBatch};

/// Surrogate contribution of each constraint step that was never evaluated
/// or evaluated to a non-finite value.
pub const DEFAULT_FAILURE_PENALTY: f64 = 1.0;
/// Central finite-difference step for surrogate gradients.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaaEstimate {
    /// Fraction of samples in which every constraint holds.
    pub value: f64,
    pub indicators: Vec<bool>,
    /// Number of samples whose rollout stopped early.
    pub failures: usize,
    /// `[task][t - 1]`: sample mean of `max(0, maxᵢ hᵢ)` for `t = 1..H`.
    pub per_task_violation_profiles: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateValue {
    pub value: f64,
    /// Gradient over the flattened locations, when requested.
    pub gradient: Option<Vec<f64>>,
}

/// Satisfaction estimate and surrogate value from one set of rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub estimate: SaaEstimate,
    pub surrogate: f64,
}

#[derive(Debug, Clone)]
struct SampleOutcome {
    satisfied: bool,
    failed: bool,
    hinge: f64,
    /// `L × H`, row-major.
    profile: Vec<f64>,
}

fn hinge(h: f64, penalty: f64) -> f64 {
    if h.is_nan() {
        penalty
    } else {
        h.max(0.0)
    }
}

fn run_sample(problem: &Problem, locations: &[f64], batch: &SampleBatch, m: usize, penalty: f64) -> Result<SampleOutcome, RolloutError> {
    let r = rollout_one(problem, locations, batch.sample(m))?;
    let h_max = problem.horizon();
    let tasks = problem.tasks();
    let mut out = SampleOutcome {
        satisfied: r.failure.is_none(),
        failed: r.failure.is_some(),
        hinge: 0.0,
        profile: vec![0.0; tasks.len() * h_max],
    };
    for (j, task) in tasks.iter().enumerate() {
        let states = r.trajectories.get(j).map(|tr| tr.states.as_slice()).unwrap_or(&[]);
        for t in 1..=h_max {
            let reached = r.failure.as_ref().is_none_or(|f| !f.unreached(j + 1, t));
            let cell = &mut out.profile[j * h_max + t - 1];
            match states.get(t) {
                Some(aug) if reached => {
                    let mut worst = 0.0f64;
                    for h in task.constraints.eval(aug, t) {
                        if !(h <= 0.0) {
                            out.satisfied = false;
                        }
                        let c = hinge(h, penalty);
                        out.hinge += c;
                        worst = worst.max(c);
                    }
                    *cell = worst;
                }
                _ => {
                    out.hinge += penalty;
                    *cell = penalty;
                }
            }
        }
    }
    Ok(out)
}

fn run_all(problem: &Problem, locations: &[f64], batch: &SampleBatch, penalty: f64) -> Result<Vec<SampleOutcome>, RolloutError> {
    let map = problem.index_map(locations.len() / problem.augmented_dim().max(1));
    if !batch.matches(&map, problem.system().state_dim()) {
        return Err(RolloutError::Config(format!(
            "sample batch of shape {:?} does not fit {} locations",
            batch.shape(),
            map.measurements()
        )));
    }
    (0..batch.samples())
        .into_par_iter()
        .map(|m| run_sample(problem, locations, batch, m, penalty))
        .collect()
}

fn summarize(problem: &Problem, outcomes: &[SampleOutcome]) -> Evaluation {
    let m = outcomes.len() as f64;
    let h = problem.horizon();
    let l = problem.tasks().len();
    let mut profile = vec![0.0; l * h];
    let mut surrogate = 0.0;
    let mut satisfied = 0usize;
    for o in outcomes {
        surrogate += o.hinge;
        satisfied += o.satisfied as usize;
        for (p, v) in profile.iter_mut().zip(&o.profile) {
            *p += v;
        }
    }
    Evaluation {
        estimate: SaaEstimate {
            value: satisfied as f64 / m,
            indicators: outcomes.iter().map(|o| o.satisfied).collect(),
            failures: outcomes.iter().filter(|o| o.failed).count(),
            per_task_violation_profiles: profile.chunks(h).map(|c| c.iter().map(|v| v / m).collect()).collect(),
        },
        surrogate: surrogate / m,
    }
}

/// Satisfaction estimate and surrogate value at `locations`.
pub fn evaluate(problem: &Problem, locations: &[f64], batch: &SampleBatch, penalty: f64) -> Result<Evaluation, RolloutError> {
    let outcomes = run_all(problem, locations, batch, penalty)?;
    Ok(summarize(problem, &outcomes))
}

/// Fraction of samples in `batch` whose rollout satisfies every constraint
/// at `t = 1..H`; failed rollouts count as violations.
pub fn estimate_satisfaction(problem: &Problem, locations: &[f64], batch: &SampleBatch) -> Result<SaaEstimate, RolloutError> {
    evaluate(problem, locations, batch, DEFAULT_FAILURE_PENALTY).map(|e| e.estimate)
}

fn surrogate_value(problem: &Problem, locations: &[f64], batch: &SampleBatch, penalty: f64) -> Result<f64, RolloutError> {
    let outcomes = run_all(problem, locations, batch, penalty)?;
    Ok(outcomes.iter().map(|o| o.hinge).sum::<f64>() / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateOptions {
    pub penalty: f64,
    pub gradient: bool,
    pub fd_step: f64,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self {
            penalty: DEFAULT_FAILURE_PENALTY,
            gradient: true,
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

/// `(1/M) Σₘ Σⱼ Σₜ Σᵢ max(0, [hʲₜ]ᵢ)`, optionally with a central-difference
/// gradient under the same draws.
///
/// Only coordinates the GP reads can influence the rollout; the gradient is
/// exactly zero elsewhere and those coordinates are not perturbed.
pub fn surrogate(problem: &Problem, locations: &[f64], batch: &SampleBatch, opts: SurrogateOptions) -> Result<SurrogateValue, RolloutError> {
    let value = surrogate_value(problem, locations, batch, opts.penalty)?;
    if !opts.gradient {
        return Ok(SurrogateValue { value, gradient: None });
    }
    let gradient = surrogate_gradient(problem, locations, batch, opts)?;
    Ok(SurrogateValue {
        value,
        gradient: Some(gradient),
    })
}

/// Central-difference gradient of the surrogate.
pub fn surrogate_gradient(problem: &Problem, locations: &[f64], batch: &SampleBatch, opts: SurrogateOptions) -> Result<Vec<f64>, RolloutError> {
    let da = problem.augmented_dim();
    let proj = problem.system().gp_input_projection();
    let coords: Vec<usize> = (0..locations.len() / da)
        .flat_map(|n| proj.iter().map(move |&i| n * da + i))
        .collect();
    let partials: Vec<f64> = coords
        .par_iter()
        .map(|&c| {
            let mut x = locations.to_vec();
            x[c] = locations[c] + opts.fd_step;
            let up = surrogate_value(problem, &x, batch, opts.penalty)?;
            x[c] = locations[c] - opts.fd_step;
            let down = surrogate_value(problem, &x, batch, opts.penalty)?;
            Ok((up - down) / (2.0 * opts.fd_step))
        })
        .collect::<Result<_, RolloutError>>()?;
    let mut gradient = vec![0.0; locations.len()];
    for (c, g) in coords.into_iter().zip(partials) {
        gradient[c] = g;
    }
    Ok(gradient)
}
