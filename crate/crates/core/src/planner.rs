//! Outer loop: grow the number of measurement locations until the sampled
//! satisfaction estimate clears `1 - δ`, optimizing the locations for each
//! count by multi-start projected gradient descent on the hinge surrogate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, Stream};
use crate::rollout::{generate_batch, Problem, RolloutError, SampleBatch};
use crate::saa::{evaluate, surrogate_gradient, SaaEstimate, SurrogateOptions, DEFAULT_FAILURE_PENALTY, DEFAULT_FD_STEP};
use crate::tasks::ExplorationRegion;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error("every optimizer start failed for N = {n}: {}", diagnostics.join("; "))]
    AllStartsFailed { n: usize, diagnostics: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Largest coordinate move of a step: the update is `-step · g / ‖g‖∞`.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the surrogate improved by less than this over `window` iterations.
    pub tolerance: f64,
    pub window: usize,
    pub fd_step: f64,
    /// Surrogate charge per constraint step that a failed rollout never reached.
    pub failure_penalty: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            max_iters: 200,
            tolerance: 1e-6,
            window: 10,
            fd_step: DEFAULT_FD_STEP,
            failure_penalty: DEFAULT_FAILURE_PENALTY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub delta: f64,
    pub samples: usize,
    pub max_n: usize,
    pub restarts: usize,
    /// Starts run concurrently in groups of this size; the planner stops
    /// launching groups once a start reaches full satisfaction.
    pub parallel_starts: usize,
    /// Seed start 0 of each `N > 1` with the previous count's locations plus
    /// one new uniform location; the other starts stay uniform.
    pub warm_start: bool,
    /// With a warm start, the new location is the best (by satisfaction,
    /// then surrogate) of this many uniform candidates.
    pub warm_candidates: usize,
    pub optimizer: OptimizerConfig,
    pub region: ExplorationRegion,
    pub seed: u64,
}

impl PlannerConfig {
    pub fn new(region: ExplorationRegion) -> Self {
        Self {
            delta: 0.01,
            samples: 100,
            max_n: 20,
            restarts: 4,
            parallel_starts: 4,
            warm_start: false,
            warm_candidates: 1,
            optimizer: OptimizerConfig::default(),
            region,
            seed: 0,
        }
    }

    pub fn validate(&self, augmented_dim: usize) -> Result<(), PlannerError> {
        let err = |m: String| Err(PlannerError::Config(m));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return err(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.samples == 0 || self.max_n == 0 || self.restarts == 0 || self.parallel_starts == 0 || self.warm_candidates == 0 {
            return err("samples, max_n, restarts, parallel_starts and warm_candidates must all be ≥ 1".into());
        }
        let o = &self.optimizer;
        if !(o.step_size > 0.0 && o.step_size.is_finite()) {
            return err(format!("step size must be positive, got {}", o.step_size));
        }
        if !(o.fd_step > 0.0 && o.fd_step.is_finite()) {
            return err(format!("finite-difference step must be positive, got {}", o.fd_step));
        }
        if !(o.tolerance >= 0.0) || o.window == 0 {
            return err("tolerance must be ≥ 0 and window ≥ 1".into());
        }
        if !(o.failure_penalty >= 0.0 && o.failure_penalty.is_finite()) {
            return err(format!("failure penalty must be non-negative, got {}", o.failure_penalty));
        }
        if self.region.dim() != augmented_dim {
            return err(format!(
                "region has {} dimensions but augmented states have {augmented_dim}",
                self.region.dim()
            ));
        }
        Ok(())
    }

    fn surrogate_options(&self) -> SurrogateOptions {
        SurrogateOptions {
            penalty: self.optimizer.failure_penalty,
            gradient: true,
            fd_step: self.optimizer.fd_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub surrogate: f64,
    pub satisfaction: f64,
    pub step_size: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: usize,
    pub initial: Vec<f64>,
    pub steps: Vec<TracePoint>,
    pub satisfaction: f64,
    pub surrogate: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub n: usize,
    pub batch_seed: u64,
    pub selected_start: Option<usize>,
    pub starts: Vec<StartTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    /// Row-major `N × (dₓ + dᵤ)`.
    pub locations: Vec<f64>,
    pub estimate: SaaEstimate,
    pub surrogate: f64,
    pub start: usize,
    pub traces: Vec<StartTrace>,
}

struct StartResult {
    locations: Vec<f64>,
    estimate: SaaEstimate,
    surrogate: f64,
    trace: StartTrace,
}

/// `a` ranks above `b`: higher satisfaction, then lower surrogate.
fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn run_start(problem: &Problem, batch: &SampleBatch, cfg: &PlannerConfig, start: usize, init: Vec<f64>) -> Result<StartResult, RolloutError> {
    let o = &cfg.optimizer;
    let opts = cfg.surrogate_options();
    let da = problem.augmented_dim();
    let mut x = init.clone();
    let eval = evaluate(problem, &x, batch, o.failure_penalty)?;
    let mut sur = eval.surrogate;
    let mut best = (x.clone(), eval.estimate, eval.surrogate);
    let mut step = o.step_size;
    let mut steps = Vec::new();
    let mut history = vec![sur];

    for iter in 0..o.max_iters {
        if sur == 0.0 {
            break;
        }
        let g = surrogate_gradient(problem, &x, batch, opts)?;
        if g.iter().all(|v| *v == 0.0) || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let scale = step / g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut cand: Vec<f64> = x.iter().zip(&g).map(|(x, g)| x - scale * g).collect();
        for loc in cand.chunks_exact_mut(da) {
            cfg.region.clamp(loc);
        }
        let e = evaluate(problem, &cand, batch, o.failure_penalty)?;
        let accepted = e.surrogate <= sur;
        steps.push(TracePoint {
            iter,
            surrogate: e.surrogate,
            satisfaction: e.estimate.value,
            step_size: step,
            accepted,
        });
        if accepted {
            if better((e.estimate.value, e.surrogate), (best.1.value, best.2)) {
                best = (cand.clone(), e.estimate, e.surrogate);
            }
            x = cand;
            sur = e.surrogate;
        } else {
            step *= 0.5;
        }
        history.push(sur);
        if best.1.value == 1.0 {
            break;
        }
        if history.len() > o.window && history[history.len() - 1 - o.window] - sur < o.tolerance {
            break;
        }
    }

    let (locations, estimate, surrogate) = best;
    Ok(StartResult {
        trace: StartTrace {
            start,
            initial: init,
            steps,
            satisfaction: estimate.value,
            surrogate,
            failures: estimate.failures,
        },
        locations,
        estimate,
        surrogate,
    })
}

/// Initial locations for start `s`, uniform in the region.
pub fn initial_locations(region: &ExplorationRegion, n: usize, seed: u64, start: usize) -> Vec<f64> {
    let mut stream = Stream::new(derive_seed(seed, start as u64));
    (0..n)
        .flat_map(|_| {
            let u: Vec<f64> = (0..region.dim()).map(|_| stream.uniform()).collect();
            region.from_unit(&u)
        })
        .collect()
}

/// Multi-start projected gradient descent over `n` locations with a fixed
/// batch. Starts are initialized from `init_seed`; `warm`, if given, replaces
/// the first `warm.len()` coordinates of start 0.
pub fn optimize_locations(
    problem: &Problem,
    n: usize,
    batch: &SampleBatch,
    cfg: &PlannerConfig,
    init_seed: u64,
    warm: Option<&[f64]>,
) -> Result<Optimized, PlannerError> {
    cfg.validate(problem.augmented_dim())?;
    let warm_init = match warm {
        Some(w) => Some(screen_warm_start(problem, n, batch, cfg, init_seed, w)?),
        None => None,
    };
    let init = |s: usize| match (s, &warm_init) {
        (0, Some(x)) => x.clone(),
        _ => initial_locations(&cfg.region, n, init_seed, s),
    };
    let mut results: Vec<StartResult> = Vec::with_capacity(cfg.restarts);
    let starts: Vec<usize> = (0..cfg.restarts).collect();
    for group in starts.chunks(cfg.parallel_starts) {
        let batch_results: Vec<StartResult> = group
            .par_iter()
            .map(|&s| run_start(problem, batch, cfg, s, init(s)))
            .collect::<Result<_, _>>()?;
        let done = batch_results.iter().any(|r| r.estimate.value == 1.0);
        results.extend(batch_results);
        if done {
            break;
        }
    }

    let usable: Vec<&StartResult> = results
        .iter()
        .filter(|r| r.estimate.failures < r.estimate.indicators.len())
        .collect();
    if usable.is_empty() {
        return Err(PlannerError::AllStartsFailed {
            n,
            diagnostics: results
                .iter()
                .map(|r| format!("start {}: all {} rollouts failed", r.trace.start, r.estimate.failures))
                .collect(),
        });
    }
    let mut pick = usable[0];
    for r in &usable[1..] {
        if better((r.estimate.value, r.surrogate), (pick.estimate.value, pick.surrogate)) {
            pick = r;
        }
    }
    let start = pick.trace.start;
    let locations = pick.locations.clone();
    let estimate = pick.estimate.clone();
    let surrogate = pick.surrogate;
    Ok(Optimized {
        locations,
        estimate,
        surrogate,
        start,
        traces: results.into_iter().map(|r| r.trace).collect(),
    })
}

/// Previous locations followed by the best of `warm_candidates` uniform
/// draws for the remaining slots.
fn screen_warm_start(
    problem: &Problem,
    n: usize,
    batch: &SampleBatch,
    cfg: &PlannerConfig,
    init_seed: u64,
    warm: &[f64],
) -> Result<Vec<f64>, RolloutError> {
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for k in 0..cfg.warm_candidates {
        let mut x = initial_locations(&cfg.region, n, derive_seed(init_seed, u64::MAX), k);
        let keep = warm.len().min(x.len());
        x[..keep].copy_from_slice(&warm[..keep]);
        if cfg.warm_candidates == 1 {
            return Ok(x);
        }
        let e = evaluate(problem, &x, batch, cfg.optimizer.failure_penalty)?;
        if best.as_ref().is_none_or(|b| better((e.estimate.value, e.surrogate), (b.1, b.2))) {
            best = Some((x, e.estimate.value, e.surrogate));
        }
    }
    Ok(best.expect("at least one candidate").0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Satisfied,
    Cap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub n: usize,
    pub satisfaction: f64,
    pub surrogate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub locations: Vec<Vec<f64>>,
    pub n_final: usize,
    pub satisfaction_history: Vec<HistoryEntry>,
    pub traces: Vec<IterationTrace>,
    pub terminated_by: Termination,
}

/// Seed of the sample batch used for count `n`.
pub fn batch_seed(seed: u64, n: usize) -> u64 {
    derive_seed(seed, 2 * n as u64)
}

fn init_seed(seed: u64, n: usize) -> u64 {
    derive_seed(seed, 2 * n as u64 + 1)
}

/// Runs the outer loop from `N = 0` up to `max_n`, drawing a fresh batch for
/// every `N`.
pub fn plan(problem: &Problem, cfg: &PlannerConfig) -> Result<PlanResult, PlannerError> {
    cfg.validate(problem.augmented_dim())?;
    let dx = problem.system().state_dim();
    let da = problem.augmented_dim();
    let mut history = Vec::new();
    let mut traces = Vec::new();
    let mut previous: Vec<f64> = Vec::new();
    for n in 0..=cfg.max_n {
        let bseed = batch_seed(cfg.seed, n);
        let batch = generate_batch(bseed, cfg.samples, &problem.index_map(n), dx)?;
        let (locations, value, surrogate, trace) = if n == 0 {
            let e = evaluate(problem, &[], &batch, cfg.optimizer.failure_penalty)?;
            let trace = IterationTrace {
                n,
                batch_seed: bseed,
                selected_start: None,
                starts: Vec::new(),
            };
            (Vec::new(), e.estimate.value, e.surrogate, trace)
        } else {
            let warm = (cfg.warm_start && n > 1).then_some(previous.as_slice());
            let o = optimize_locations(problem, n, &batch, cfg, init_seed(cfg.seed, n), warm)?;
            let trace = IterationTrace {
                n,
                batch_seed: bseed,
                selected_start: Some(o.start),
                starts: o.traces,
            };
            (o.locations, o.estimate.value, o.surrogate, trace)
        };
        history.push(HistoryEntry {
            n,
            satisfaction: value,
            surrogate,
        });
        traces.push(trace);
        previous.clone_from(&locations);
        let satisfied = value > 1.0 - cfg.delta;
        if satisfied || n == cfg.max_n {
            return Ok(PlanResult {
                locations: locations.chunks_exact(da).map(<[f64]>::to_vec).collect(),
                n_final: n,
                satisfaction_history: history,
                traces,
                terminated_by: if satisfied { Termination::Satisfied } else { Termination::Cap },
            });
        }
    }
    unreachable!("the loop returns at n = max_n")
}
