//! Monte-Carlo validation of planned measurement locations on the true system.

use dsml::rng::{derive_seed, Stream};
use dsml::rollout::{Problem, DIVERGENCE_NORM};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Statistics of `max(0, maxᵢ hᵢ)` at one time step across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub t: usize,
    pub violating_runs: usize,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: usize,
    pub runs: usize,
    /// Runs with at least one violated step.
    pub violating_runs: usize,
    pub run_rate: f64,
    /// Fraction of `(run, t)` evaluations that violate.
    pub evaluation_rate: f64,
    /// Runs that left the finite domain before the horizon.
    pub diverged_runs: usize,
    pub max_mean_violation: f64,
    pub steps: Vec<StepStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub repetition: usize,
    pub seed: u64,
    pub runs: usize,
    pub measurements: usize,
    pub tasks: Vec<TaskReport>,
    /// Run indices `r` in which some task violated some constraint.
    pub joint_violating_runs: usize,
    /// `joint_violating_runs / runs`; the empirical counterpart of `1 - P(all satisfied)`.
    pub overall_violation_rate: f64,
    pub overall_satisfaction_rate: f64,
}

/// Value charged for steps after a run diverged or produced a non-finite
/// constraint value.
const UNREACHED_VIOLATION: f64 = 1.0;

fn sample_state(stream: &mut Stream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| stream.normal()).collect()
}

/// Measures the true system at `locations`, conditions the prior GP on the
/// results, and simulates every task `runs` times in closed loop.
pub fn validate(
    problem: &Problem,
    locations: &[Vec<f64>],
    runs: usize,
    seed: u64,
    repetition: usize,
) -> Result<ValidationReport, CliError> {
    let system = problem.system();
    let unknown = system
        .true_unknown()
        .ok_or_else(|| CliError::Config("validation needs the true unknown dynamics (system.unknown)".into()))?;
    if runs == 0 {
        return Err(CliError::Config("validation needs at least one run".into()));
    }
    let dx = system.state_dim();

    let mut stream = Stream::new(derive_seed(seed, 0));
    let mut model = problem.prior_gp().clone();
    for loc in locations {
        let z = sample_state(&mut stream, dx);
        let y: Vec<f64> = unknown(loc).iter().zip(system.scale_noise(&z)).map(|(g, w)| g + w).collect();
        model.condition_in_place(loc, &y)?;
    }
    let controller = model.freeze();

    let horizon = problem.horizon();
    let mut joint = vec![false; runs];
    let mut reports = Vec::with_capacity(problem.tasks().len());
    for (j, task) in problem.tasks().iter().enumerate() {
        // [run][t - 1]
        let mut magnitudes = vec![vec![0.0; horizon]; runs];
        let mut diverged_runs = 0;
        for (r, mags) in magnitudes.iter_mut().enumerate() {
            let mut s = Stream::new(derive_seed(derive_seed(seed, 1 + j as u64), r as u64));
            let u0: Vec<f64> = (0..dx).map(|_| s.uniform()).collect();
            let mut x = task.initial_state.initial_state(&u0);
            for t in 0..=horizon {
                let u = task.control_law.input(&x, &controller, t)?;
                let mut aug = x;
                aug.extend(u);
                if t >= 1 {
                    let h = task.constraints.eval(&aug, t);
                    mags[t - 1] = if h.iter().any(|v| v.is_nan()) {
                        UNREACHED_VIOLATION
                    } else {
                        h.into_iter().fold(0.0, f64::max)
                    };
                }
                if t == horizon {
                    break;
                }
                let z = sample_state(&mut s, dx);
                let f = system.known(&aug);
                let g = unknown(&aug);
                let w = system.scale_noise(&z);
                x = (0..dx).map(|i| f[i] + g[i] + w[i]).collect();
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm <= DIVERGENCE_NORM) {
                    diverged_runs += 1;
                    mags[t..].iter_mut().for_each(|m| *m = UNREACHED_VIOLATION);
                    break;
                }
            }
        }
        let mut violating_runs = 0;
        let mut violating_evals = 0;
        for (r, mags) in magnitudes.iter().enumerate() {
            let bad = mags.iter().filter(|&&m| m > 0.0).count();
            violating_evals += bad;
            if bad > 0 {
                violating_runs += 1;
                joint[r] = true;
            }
        }
        let steps: Vec<StepStats> = (0..horizon)
            .map(|k| {
                let col: Vec<f64> = magnitudes.iter().map(|m| m[k]).collect();
                let (mean, std) = mean_std(&col);
                StepStats {
                    t: k + 1,
                    violating_runs: col.iter().filter(|&&m| m > 0.0).count(),
                    mean,
                    std,
                    max: col.iter().copied().fold(0.0, f64::max),
                }
            })
            .collect();
        reports.push(TaskReport {
            task: task.id,
            runs,
            violating_runs,
            run_rate: violating_runs as f64 / runs as f64,
            evaluation_rate: violating_evals as f64 / (runs * horizon) as f64,
            diverged_runs,
            max_mean_violation: steps.iter().map(|s| s.mean).fold(0.0, f64::max),
            steps,
        });
    }
    let joint_violating_runs = joint.iter().filter(|&&b| b).count();
    let overall_violation_rate = joint_violating_runs as f64 / runs as f64;
    Ok(ValidationReport {
        repetition,
        seed,
        runs,
        measurements: locations.len(),
        tasks: reports,
        joint_violating_runs,
        overall_violation_rate,
        overall_satisfaction_rate: 1.0 - overall_violation_rate,
    })
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_small_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }
}
