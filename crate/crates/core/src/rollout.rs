//! Joint sampling of hypothetical measurements and closed-loop trajectories.
//!
//! A rollout walks the index map: first the `N` candidate measurement
//! locations, then every `(task, t)` pair in task order. Each step evaluates
//! one function draw of the unknown dynamics through a *sampler* GP that is
//! conditioned on everything sampled so far. Control inputs come from a
//! separate *controller* GP conditioned on the prior data plus the sampled
//! measurements only, frozen once the measurement phase ends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{FrozenGp, GpError, MultiGp};
use crate::rng::Stream;
use crate::tasks::{SystemSpec, TaskError, TaskSpec};

/// States with a larger Euclidean norm count as diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// What a global index `n` refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexEntry {
    /// The `d`-th measurement location, `d ≥ 1`.
    Measurement(usize),
    /// Time step `t` of task `task`, `task ≥ 1`, `0 ≤ t ≤ H`.
    Trajectory { task: usize, t: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    measurements: usize,
    tasks: usize,
    horizon: usize,
    entries: Vec<IndexEntry>,
}

impl IndexMap {
    pub fn measurements(&self) -> usize {
        self.measurements
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `N + L (H + 1)`.
    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, n: usize) -> IndexEntry {
        self.entries[n]
    }

    /// Global index of `(task, t)`.
    pub fn trajectory_index(&self, task: usize, t: usize) -> usize {
        debug_assert!((1..=self.tasks).contains(&task) && t <= self.horizon);
        self.measurements + (task - 1) * (self.horizon + 1) + t
    }
}

/// Enumerates measurements first, then each task's `H + 1` time steps.
pub fn build_index_map(n: usize, l: usize, h: usize) -> Result<IndexMap, RolloutError> {
    if l == 0 || h == 0 {
        return Err(RolloutError::Config(format!(
            "index map needs at least one task and a horizon ≥ 1 (got L = {l}, H = {h})"
        )));
    }
    let total = n + l * (h + 1);
    let entries = (0..total)
        .map(|i| {
            if i < n {
                IndexEntry::Measurement(i + 1)
            } else {
                let j = (i - n) / (h + 1) + 1;
                IndexEntry::Trajectory {
                    task: j,
                    t: i - n - (j - 1) * (h + 1),
                }
            }
        })
        .collect();
    Ok(IndexMap {
        measurements: n,
        tasks: l,
        horizon: h,
        entries,
    })
}

/// Common random numbers for one SAA problem.
///
/// `normals` holds `M × Ñ × 2dₓ` standard normals: the first `dₓ` of each
/// index drive the function draw, the last `dₓ` the process noise.
/// `uniforms` holds `M × L × dₓ` values in `(0, 1)` for random initial states.
/// Both come from one [`Stream`], all normals first.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    seed: u64,
    samples: usize,
    points: usize,
    tasks: usize,
    state_dim: usize,
    normals: Vec<f64>,
    uniforms: Vec<f64>,
}

/// Draws for one sample `m`.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    normals: &'a [f64],
    uniforms: &'a [f64],
    state_dim: usize,
}

impl<'a> SampleView<'a> {
    /// `(function-draw part, noise part)` of `ζₙ`.
    pub fn zeta(&self, n: usize) -> (&'a [f64], &'a [f64]) {
        let w = 2 * self.state_dim;
        self.normals[n * w..(n + 1) * w].split_at(self.state_dim)
    }

    /// Initial-state uniforms of task `task` (1-based).
    pub fn initial_uniforms(&self, task: usize) -> &'a [f64] {
        &self.uniforms[(task - 1) * self.state_dim..task * self.state_dim]
    }

    pub fn points(&self) -> usize {
        self.normals.len() / (2 * self.state_dim)
    }
}

impl SampleBatch {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `(M, Ñ, 2dₓ)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.samples, self.points, 2 * self.state_dim)
    }

    pub fn normals(&self) -> &[f64] {
        &self.normals
    }

    pub fn uniforms(&self) -> &[f64] {
        &self.uniforms
    }

    pub fn sample(&self, m: usize) -> SampleView<'_> {
        let w = self.points * 2 * self.state_dim;
        let u = self.tasks * self.state_dim;
        SampleView {
            normals: &self.normals[m * w..(m + 1) * w],
            uniforms: &self.uniforms[m * u..(m + 1) * u],
            state_dim: self.state_dim,
        }
    }

    /// Whether this batch was drawn for `map` and state dimension `dx`.
    pub fn matches(&self, map: &IndexMap, dx: usize) -> bool {
        self.points == map.total() && self.tasks == map.tasks() && self.state_dim == dx
    }
}

pub fn generate_batch(seed: u64, m: usize, map: &IndexMap, dx: usize) -> Result<SampleBatch, RolloutError> {
    if m == 0 || dx == 0 {
        return Err(RolloutError::Config(format!(
            "sample batch needs M ≥ 1 and dₓ ≥ 1 (got M = {m}, dₓ = {dx})"
        )));
    }
    let mut stream = Stream::new(seed);
    let normals = (0..m * map.total() * 2 * dx).map(|_| stream.normal()).collect();
    let uniforms = (0..m * map.tasks() * dx).map(|_| stream.uniform()).collect();
    Ok(SampleBatch {
        seed,
        samples: m,
        points: map.total(),
        tasks: map.tasks(),
        state_dim: dx,
        normals,
        uniforms,
    })
}

/// Everything a rollout needs besides the candidate locations and draws.
#[derive(Debug, Clone)]
pub struct Problem {
    system: SystemSpec,
    tasks: Vec<TaskSpec>,
    prior_gp: MultiGp,
    sampler_prior: MultiGp,
}

impl Problem {
    /// Controller and sampler start from `prior_gp`. The controller adds
    /// sampled measurements with `prior_gp`'s noise variance; the sampler adds
    /// its own draws noise-free.
    pub fn new(system: SystemSpec, tasks: Vec<TaskSpec>, prior_gp: MultiGp) -> Result<Self, RolloutError> {
        if tasks.is_empty() {
            return Err(RolloutError::Config("at least one task is required".into()));
        }
        let h = tasks[0].horizon;
        for task in &tasks {
            task.check(&system)?;
            if task.horizon != h {
                return Err(RolloutError::Config(format!(
                    "task {} has horizon {} but task {} has {h}; all tasks must share one horizon",
                    task.id, task.horizon, tasks[0].id
                )));
            }
        }
        if prior_gp.outputs() != system.state_dim() {
            return Err(RolloutError::Config(format!(
                "prior GP has {} outputs for a {}-dimensional state",
                prior_gp.outputs(),
                system.state_dim()
            )));
        }
        if prior_gp.params().input_projection() != system.gp_input_projection() {
            return Err(RolloutError::Config(format!(
                "GP input projection {:?} differs from the system's {:?}",
                prior_gp.params().input_projection(),
                system.gp_input_projection()
            )));
        }
        let sampler_prior = prior_gp.with_noise_variance(0.0)?;
        Ok(Self {
            system,
            tasks,
            prior_gp,
            sampler_prior,
        })
    }

    /// Noise variance the sampler adds with each of its own draws (default 0,
    /// which makes repeated evaluations exactly consistent).
    pub fn with_sampler_noise(mut self, noise_variance: f64) -> Result<Self, RolloutError> {
        self.sampler_prior = self.prior_gp.with_noise_variance(noise_variance)?;
        Ok(self)
    }

    pub fn system(&self) -> &SystemSpec {
        &self.system
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn prior_gp(&self) -> &MultiGp {
        &self.prior_gp
    }

    pub fn horizon(&self) -> usize {
        self.tasks[0].horizon
    }

    pub fn index_map(&self, n: usize) -> IndexMap {
        build_index_map(n, self.tasks.len(), self.horizon()).expect("problem has tasks and a positive horizon")
    }

    pub fn augmented_dim(&self) -> usize {
        self.system.augmented_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub location: Vec<f64>,
    pub next_state: Vec<f64>,
}

/// Augmented states `x̃₀ … x̃_H` of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: usize,
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FailureKind {
    Diverged { norm: f64 },
    NonFinite,
    Gp(GpError),
}

/// Where and why a rollout stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutFailure {
    /// Global index being processed when the failure happened.
    pub index: usize,
    pub entry: IndexEntry,
    pub kind: FailureKind,
}

impl RolloutFailure {
    /// Whether the constraints at `(task, t)` were never evaluated.
    pub fn unreached(&self, task: usize, t: usize) -> bool {
        match self.entry {
            IndexEntry::Measurement(_) => true,
            IndexEntry::Trajectory { task: jf, t: tf } => (task, t) >= (jf, tf),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub dataset: Vec<Measurement>,
    /// Complete trajectories for every task up to a failure; the failing
    /// task's trajectory is truncated and later tasks are absent.
    pub trajectories: Vec<Trajectory>,
    pub controller: Option<FrozenGp>,
    pub failure: Option<RolloutFailure>,
}

fn check_state(x: &[f64]) -> Result<(), FailureKind> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FailureKind::NonFinite);
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > DIVERGENCE_NORM {
        return Err(FailureKind::Diverged { norm });
    }
    Ok(())
}

fn step(system: &SystemSpec, sampler: &mut MultiGp, aug: &[f64], zg: &[f64], zw: &[f64]) -> Result<Vec<f64>, FailureKind> {
    let g = sampler.sample_eval_in_place(aug, zg).map_err(FailureKind::Gp)?;
    let f = system.known(aug);
    let w = system.scale_noise(zw);
    let next: Vec<f64> = f.iter().zip(&g).zip(&w).map(|((f, g), w)| f + g + w).collect();
    check_state(&next)?;
    Ok(next)
}

/// Runs the measurement phase and every task's closed loop for one sample.
///
/// `locations` is row-major `N × (dₓ + dᵤ)`. Failures (GP breakdown,
/// non-finite or diverging states) end the rollout and are reported in the
/// result rather than as an error.
pub fn rollout_one(problem: &Problem, locations: &[f64], draws: SampleView<'_>) -> Result<RolloutResult, RolloutError> {
    let sys = &problem.system;
    let da = sys.augmented_dim();
    if !locations.len().is_multiple_of(da) {
        return Err(RolloutError::Config(format!(
            "{} location coordinates is not a multiple of the augmented dimension {da}",
            locations.len()
        )));
    }
    let n_loc = locations.len() / da;
    let map = problem.index_map(n_loc);
    if draws.points() != map.total() {
        return Err(RolloutError::Config(format!(
            "sample has draws for {} indices but {n_loc} locations need {}",
            draws.points(),
            map.total()
        )));
    }

    let mut sampler = problem.sampler_prior.clone();
    let mut controller = problem.prior_gp.clone();
    let mut result = RolloutResult {
        dataset: Vec::with_capacity(n_loc),
        trajectories: Vec::with_capacity(problem.tasks.len()),
        controller: None,
        failure: None,
    };
    let fail = |index: usize, kind: FailureKind| RolloutFailure {
        index,
        entry: map.entry(index),
        kind,
    };

    for (n, loc) in locations.chunks_exact(da).enumerate() {
        let (zg, zw) = draws.zeta(n);
        let next = match step(sys, &mut sampler, loc, zg, zw) {
            Ok(v) => v,
            Err(kind) => {
                result.failure = Some(fail(n, kind));
                return Ok(result);
            }
        };
        let residual: Vec<f64> = next.iter().zip(sys.known(loc)).map(|(x, f)| x - f).collect();
        if let Err(e) = controller.condition_in_place(loc, &residual) {
            result.failure = Some(fail(n, FailureKind::Gp(e)));
            return Ok(result);
        }
        result.dataset.push(Measurement {
            location: loc.to_vec(),
            next_state: next,
        });
    }
    let controller = controller.freeze();

    let h = problem.horizon();
    for task in &problem.tasks {
        let j = result.trajectories.len() + 1;
        let mut x = task.initial_state.initial_state(draws.initial_uniforms(j));
        let mut states = Vec::with_capacity(h + 1);
        for t in 0..=h {
            let n = map.trajectory_index(j, t);
            let u = match task.control_law.input(&x, &controller, t) {
                Ok(u) => u,
                Err(e) => {
                    result.failure = Some(fail(n, FailureKind::Gp(e)));
                    break;
                }
            };
            let mut aug = std::mem::take(&mut x);
            aug.extend_from_slice(&u);
            if let Err(kind) = check_state(&aug) {
                result.failure = Some(fail(n, kind));
                break;
            }
            let (zg, zw) = draws.zeta(n);
            if t < h {
                match step(sys, &mut sampler, &aug, zg, zw) {
                    Ok(next) => x = next,
                    Err(kind) => {
                        states.push(aug);
                        result.failure = Some(fail(n + 1, kind));
                        break;
                    }
                }
            } else if let Err(e) = sampler.sample_eval_in_place(&aug, zg) {
                // The terminal draw only feeds later tasks' function values.
                states.push(aug);
                result.failure = Some(fail(n, FailureKind::Gp(e)));
                break;
            }
            states.push(aug);
        }
        result.trajectories.push(Trajectory { task: task.id, states });
        if result.failure.is_some() {
            break;
        }
    }
    result.controller = Some(controller);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelParams;
    use crate::tasks::{ConstantConstraint, InitialStatePolicy, ZeroInput};
    use std::sync::Arc;

    #[test]
    fn index_map_examples() {
        let m = build_index_map(0, 1, 2).unwrap();
        assert_eq!(m.total(), 3);
        assert_eq!(
            m.entries(),
            &[
                IndexEntry::Trajectory { task: 1, t: 0 },
                IndexEntry::Trajectory { task: 1, t: 1 },
                IndexEntry::Trajectory { task: 1, t: 2 },
            ]
        );

        let m = build_index_map(2, 3, 100).unwrap();
        assert_eq!(m.total(), 305);
        assert_eq!(m.entry(2), IndexEntry::Trajectory { task: 1, t: 0 });

        let m = build_index_map(1, 2, 1).unwrap();
        assert_eq!(
            m.entries(),
            &[
                IndexEntry::Measurement(1),
                IndexEntry::Trajectory { task: 1, t: 0 },
                IndexEntry::Trajectory { task: 1, t: 1 },
                IndexEntry::Trajectory { task: 2, t: 0 },
                IndexEntry::Trajectory { task: 2, t: 1 },
            ]
        );
        assert_eq!(m.trajectory_index(2, 0), 3);
    }

    #[test]
    fn index_map_rejects_empty() {
        assert!(build_index_map(3, 0, 5).is_err());
        assert!(build_index_map(3, 2, 0).is_err());
    }

    #[test]
    fn batch_shape_and_determinism() {
        let map = build_index_map(2, 3, 100).unwrap();
        let a = generate_batch(11, 100, &map, 2).unwrap();
        assert_eq!(a.shape(), (100, 305, 4));
        assert_eq!(a.normals().len(), 100 * 305 * 4);
        assert_eq!(a.uniforms().len(), 100 * 3 * 2);
        let b = generate_batch(11, 100, &map, 2).unwrap();
        assert_eq!(a, b);
        assert!(generate_batch(11, 0, &map, 2).is_err());
    }

    #[test]
    fn failure_reach() {
        let f = RolloutFailure {
            index: 0,
            entry: IndexEntry::Trajectory { task: 2, t: 3 },
            kind: FailureKind::NonFinite,
        };
        assert!(!f.unreached(1, 10));
        assert!(!f.unreached(2, 2));
        assert!(f.unreached(2, 3));
        assert!(f.unreached(3, 0));
    }

    fn scalar_problem(sf2: f64, x0: f64) -> Problem {
        let system = SystemSpec::new(
            1,
            1,
            Arc::new(|x: &[f64]| vec![x[0] + x[1]]),
            None,
            vec![0.0],
            vec![0],
        )
        .unwrap();
        let task = TaskSpec::new(
            1,
            Arc::new(ZeroInput { dim: 1 }),
            Arc::new(ConstantConstraint(-1.0)),
            3,
            InitialStatePolicy::Fixed { state: vec![x0] },
        );
        let gp = MultiGp::new(KernelParams::isotropic(sf2, 1.0, 0.0, vec![0]).unwrap(), 1).unwrap();
        Problem::new(system, vec![task], gp).unwrap()
    }

    #[test]
    fn zero_draws_keep_state_fixed() {
        let p = scalar_problem(1.0, 0.7);
        let map = p.index_map(0);
        let batch = SampleBatch {
            seed: 0,
            samples: 1,
            points: map.total(),
            tasks: 1,
            state_dim: 1,
            normals: vec![0.0; map.total() * 2],
            uniforms: vec![0.5],
        };
        let r = rollout_one(&p, &[], batch.sample(0)).unwrap();
        assert!(r.failure.is_none());
        let xs: Vec<f64> = r.trajectories[0].states.iter().map(|s| s[0]).collect();
        assert_eq!(xs, vec![0.7; 4]);
    }

    #[test]
    fn divergence_is_reported() {
        let p = scalar_problem(1.0, 2e6);
        let map = p.index_map(0);
        let batch = generate_batch(3, 1, &map, 1).unwrap();
        let r = rollout_one(&p, &[], batch.sample(0)).unwrap();
        let f = r.failure.unwrap();
        assert!(matches!(f.kind, FailureKind::Diverged { .. }));
        assert_eq!(f.entry, IndexEntry::Trajectory { task: 1, t: 0 });
    }

    #[test]
    fn location_shape_checked() {
        let p = scalar_problem(1.0, 0.0);
        let map = p.index_map(1);
        let batch = generate_batch(3, 1, &map, 1).unwrap();
        assert!(rollout_one(&p, &[0.0, 0.0, 1.0], batch.sample(0)).is_err());
        assert!(rollout_one(&p, &[], batch.sample(0)).is_err());
    }
}
