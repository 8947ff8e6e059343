//! Systems, control tasks, and the built-in two-dimensional demo.
//!
//! A system evolves as `x⁺ = f(x̃) + g(x̃) + Q w` with `x̃ = (x, u)`, where `f`
//! is known and `g` is modelled by a GP. A task pairs a control law with a
//! set of constraints `h_t(x̃) ≤ 0` over a horizon.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{FrozenGp, GpError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("demo dynamics singular at x = ({x1}, {x2}): denominator {denominator:e}")]
    Singularity { x1: f64, x2: f64, denominator: f64 },
}

/// Vector-valued map of the augmented state.
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Dynamics, noise scaling, and which augmented-state entries the unknown
/// component depends on.
#[derive(Clone)]
pub struct SystemSpec {
    state_dim: usize,
    input_dim: usize,
    known: VectorField,
    true_unknown: Option<VectorField>,
    noise_scale: Vec<f64>,
    gp_input_projection: Vec<usize>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("has_true_unknown", &self.true_unknown.is_some())
            .field("noise_scale", &self.noise_scale)
            .field("gp_input_projection", &self.gp_input_projection)
            .finish()
    }
}

impl SystemSpec {
    /// `noise_scale` is the row-major `state_dim × state_dim` matrix `Q`;
    /// process noise is `Q w` with `w ~ N(0, I)`, i.e. covariance `Q Qᵀ`.
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        known: VectorField,
        true_unknown: Option<VectorField>,
        noise_scale: Vec<f64>,
        gp_input_projection: Vec<usize>,
    ) -> Result<Self, TaskError> {
        if state_dim == 0 {
            return Err(TaskError::Config("state dimension must be positive".into()));
        }
        if noise_scale.len() != state_dim * state_dim {
            return Err(TaskError::Config(format!(
                "noise scale needs {} entries, got {}",
                state_dim * state_dim,
                noise_scale.len()
            )));
        }
        if noise_scale.iter().any(|q| !q.is_finite()) {
            return Err(TaskError::Config("noise scale must be finite".into()));
        }
        let aug = state_dim + input_dim;
        if gp_input_projection.is_empty() || gp_input_projection.iter().any(|&i| i >= aug) {
            return Err(TaskError::Config(format!(
                "GP input projection {gp_input_projection:?} must be non-empty and within 0..{aug}"
            )));
        }
        Ok(Self {
            state_dim,
            input_dim,
            known,
            true_unknown,
            noise_scale,
            gp_input_projection,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn augmented_dim(&self) -> usize {
        self.state_dim + self.input_dim
    }

    pub fn noise_scale(&self) -> &[f64] {
        &self.noise_scale
    }

    pub fn gp_input_projection(&self) -> &[usize] {
        &self.gp_input_projection
    }

    pub fn known(&self, aug: &[f64]) -> Vec<f64> {
        (self.known)(aug)
    }

    pub fn true_unknown(&self) -> Option<&VectorField> {
        self.true_unknown.as_ref()
    }

    /// `Q z` for a standard-normal vector `z`.
    pub fn scale_noise(&self, z: &[f64]) -> Vec<f64> {
        self.noise_scale
            .chunks_exact(self.state_dim)
            .map(|row| row.iter().zip(z).map(|(q, w)| q * w).sum())
            .collect()
    }

    /// Mean of the diagonal of `Q Qᵀ`.
    pub fn process_noise_variance(&self) -> f64 {
        let total: f64 = self
            .noise_scale
            .chunks_exact(self.state_dim)
            .map(|row| row.iter().map(|q| q * q).sum::<f64>())
            .sum();
        total / self.state_dim as f64
    }
}

/// Axis-aligned box over augmented-state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ExplorationRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, TaskError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(TaskError::Config(format!(
                "region bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(TaskError::Config(format!(
                    "region dimension {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, lo), hi)| lo <= v && v <= hi)
    }

    /// Maps a vector of `(0, 1)` uniforms into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((u, lo), hi)| lo + (hi - lo) * u)
            .collect()
    }
}

/// How a task's trajectory starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialStatePolicy {
    Fixed { state: Vec<f64> },
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

impl InitialStatePolicy {
    /// Initial state given one `(0, 1)` uniform per state dimension (ignored
    /// by the fixed policy).
    pub fn initial_state(&self, uniforms: &[f64]) -> Vec<f64> {
        match self {
            Self::Fixed { state } => state.clone(),
            Self::Uniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .zip(uniforms)
                .map(|((lo, hi), u)| lo + (hi - lo) * u)
                .collect(),
        }
    }

    fn check(&self, state_dim: usize) -> Result<(), TaskError> {
        let ok = match self {
            Self::Fixed { state } => state.len() == state_dim && state.iter().all(|x| x.is_finite()),
            Self::Uniform { lower, upper } => {
                lower.len() == state_dim
                    && upper.len() == state_dim
                    && lower.iter().zip(upper).all(|(l, u)| l.is_finite() && u.is_finite() && l <= u)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(TaskError::Config(format!(
                "initial-state policy {self:?} does not match state dimension {state_dim}"
            )))
        }
    }
}

/// A data-driven control law `u = π(x, model, t)`.
pub trait ControlLaw: Send + Sync {
    fn input(&self, state: &[f64], model: &FrozenGp, t: usize) -> Result<Vec<f64>, GpError>;
}

impl<F> ControlLaw for F
where
    F: Fn(&[f64], &FrozenGp, usize) -> Result<Vec<f64>, GpError> + Send + Sync,
{
    fn input(&self, state: &[f64], model: &FrozenGp, t: usize) -> Result<Vec<f64>, GpError> {
        self(state, model, t)
    }
}

/// Constraint functions `h_t(x̃)`; the task is satisfied at `t` when every
/// entry is `≤ 0`.
pub trait ConstraintSet: Send + Sync {
    fn eval(&self, aug: &[f64], t: usize) -> Vec<f64>;
}

impl<F> ConstraintSet for F
where
    F: Fn(&[f64], usize) -> Vec<f64> + Send + Sync,
{
    fn eval(&self, aug: &[f64], t: usize) -> Vec<f64> {
        self(aug, t)
    }
}

#[derive(Clone)]
pub struct TaskSpec {
    pub id: usize,
    pub control_law: Arc<dyn ControlLaw>,
    pub constraints: Arc<dyn ConstraintSet>,
    pub horizon: usize,
    pub initial_state: InitialStatePolicy,
}

impl fmt::Debug for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskSpec")
            .field("id", &self.id)
            .field("horizon", &self.horizon)
            .field("initial_state", &self.initial_state)
            .finish_non_exhaustive()
    }
}

impl TaskSpec {
    pub fn new(
        id: usize,
        control_law: Arc<dyn ControlLaw>,
        constraints: Arc<dyn ConstraintSet>,
        horizon: usize,
        initial_state: InitialStatePolicy,
    ) -> Self {
        Self {
            id,
            control_law,
            constraints,
            horizon,
            initial_state,
        }
    }

    pub fn check(&self, system: &SystemSpec) -> Result<(), TaskError> {
        if self.horizon == 0 {
            return Err(TaskError::Config(format!("task {}: horizon must be ≥ 1", self.id)));
        }
        self.initial_state.check(system.state_dim())
    }
}

// ---------------------------------------------------------------------------
// Reusable building blocks

/// Time-indexed reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// One of the three demo references (`1`, `2`, `3`).
    Demo(usize),
    Constant(Vec<f64>),
}

impl Reference {
    pub fn at(&self, t: usize) -> Vec<f64> {
        match self {
            Self::Demo(j) => reference_trajectory(*j, t)
                .map(|r| r.to_vec())
                .unwrap_or_else(|_| vec![f64::NAN; 2]),
            Self::Constant(v) => v.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Demo(_) => 2,
            Self::Constant(v) => v.len(),
        }
    }

    pub fn check(&self) -> Result<(), TaskError> {
        match self {
            Self::Demo(j) => reference_trajectory(*j, 0).map(|_| ()),
            Self::Constant(v) if v.is_empty() => Err(TaskError::Config("empty constant reference".into())),
            Self::Constant(_) => Ok(()),
        }
    }
}

/// `u = -μ(x) + r(t + lookahead)`: cancels the learned dynamics and injects
/// the reference. Requires the known dynamics to pass the input straight to
/// the next state and the GP to read only state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLinearizing {
    pub reference: Reference,
    pub lookahead: usize,
}

impl ControlLaw for FeedbackLinearizing {
    fn input(&self, state: &[f64], model: &FrozenGp, t: usize) -> Result<Vec<f64>, GpError> {
        let mean = model.mean(state)?;
        let r = self.reference.at(t + self.lookahead);
        Ok(mean.iter().zip(&r).map(|(m, r)| r - m).collect())
    }
}

/// Always applies the zero input.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroInput {
    pub dim: usize,
}

impl ControlLaw for ZeroInput {
    fn input(&self, _state: &[f64], _model: &FrozenGp, _t: usize) -> Result<Vec<f64>, GpError> {
        Ok(vec![0.0; self.dim])
    }
}

/// Tolerance `φ(t) = max(initial · e^{-t/decay}, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Envelope {
    /// The demo envelope `max(3 e^{-t/5}, 0.1)`.
    pub const DEMO: Self = Self {
        initial: 3.0,
        decay: 5.0,
        floor: 0.1,
    };

    pub fn at(&self, t: usize) -> f64 {
        (self.initial * (-(t as f64) / self.decay).exp()).max(self.floor)
    }
}

/// `‖x - r(t)‖₂ - φ(t)` on the state part of the augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTube {
    pub reference: Reference,
    pub envelope: Envelope,
}

impl ConstraintSet for TrackingTube {
    fn eval(&self, aug: &[f64], t: usize) -> Vec<f64> {
        let r = self.reference.at(t);
        let dist = aug
            .iter()
            .zip(&r)
            .map(|(x, r)| (x - r) * (x - r))
            .sum::<f64>()
            .sqrt();
        vec![dist - self.envelope.at(t)]
    }
}

/// `|x_index| - bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsBound {
    pub index: usize,
    pub bound: f64,
}

impl ConstraintSet for AbsBound {
    fn eval(&self, aug: &[f64], _t: usize) -> Vec<f64> {
        vec![aug.get(self.index).copied().unwrap_or(f64::NAN).abs() - self.bound]
    }
}

/// Constraint with a fixed value, for fixtures that are trivially satisfied
/// (`< 0`) or impossible (`> 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantConstraint(pub f64);

impl ConstraintSet for ConstantConstraint {
    fn eval(&self, _aug: &[f64], _t: usize) -> Vec<f64> {
        vec![self.0]
    }
}

// ---------------------------------------------------------------------------
// Demo system

/// Which reading of the demo's second dynamics component to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DemoVariant {
    /// `1 / (1 + e^{-5x₁} - ½ + cos πx₂)`; has poles inside `[-3, 3]²`.
    Literal,
    /// `1 / (1 + e^{-5x₁}) - ½ + cos πx₂`; smooth and bounded.
    #[default]
    Logistic,
}

/// Denominator magnitude below which [`demo_dynamics`] reports a singularity.
pub const SINGULARITY_TOL: f64 = 1e-9;
/// Denominator magnitude below which a state is outside the supported demo
/// region for the literal reading.
pub const SUPPORTED_DENOMINATOR: f64 = 1e-3;

fn first_component(x1: f64, x2: f64) -> f64 {
    x1 + ((TAU * x1).cos() - 1.0) * x2
}

/// Denominator of the literal second component.
pub fn demo_denominator(x: &[f64]) -> f64 {
    1.0 + (-5.0 * x[0]).exp() - 0.5 + (PI * x[1]).cos()
}

/// Literal demo map `(x₁ + (cos 2πx₁ - 1) x₂, 1 / (1 + e^{-5x₁} - ½ + cos πx₂))`.
pub fn demo_dynamics(x: &[f64]) -> Result<[f64; 2], TaskError> {
    let (x1, x2) = (x[0], x[1]);
    let denominator = demo_denominator(x);
    if denominator.abs() < SINGULARITY_TOL || !denominator.is_finite() {
        return Err(TaskError::Singularity { x1, x2, denominator });
    }
    Ok([first_component(x1, x2), 1.0 / denominator])
}

/// Demo map with a logistic second component,
/// `(x₁ + (cos 2πx₁ - 1) x₂, 1 / (1 + e^{-5x₁}) - ½ + cos πx₂)`.
pub fn demo_dynamics_logistic(x: &[f64]) -> [f64; 2] {
    let (x1, x2) = (x[0], x[1]);
    [
        first_component(x1, x2),
        1.0 / (1.0 + (-5.0 * x1).exp()) - 0.5 + (PI * x2).cos(),
    ]
}

/// Demo dynamics as a total vector field: singular points map to NaN so the
/// rollout divergence guard catches them.
pub fn demo_unknown(variant: DemoVariant) -> VectorField {
    match variant {
        DemoVariant::Literal => Arc::new(|x: &[f64]| match demo_dynamics(x) {
            Ok(v) => v.to_vec(),
            Err(_) => vec![f64::NAN; 2],
        }),
        DemoVariant::Logistic => Arc::new(|x: &[f64]| demo_dynamics_logistic(x).to_vec()),
    }
}

/// Demo references: the origin, the unit circle (period 50), and a
/// Lissajous-like curve.
pub fn reference_trajectory(j: usize, t: usize) -> Result<[f64; 2], TaskError> {
    let t = t as f64;
    match j {
        1 => Ok([0.0, 0.0]),
        2 => Ok([(TAU * t / 50.0).sin(), (TAU * t / 50.0).cos()]),
        3 => Ok([2.0 * (TAU * t / 25.0).sin(), (TAU * t / 100.0).cos()]),
        _ => Err(TaskError::Config(format!("no demo reference {j}; expected 1, 2 or 3"))),
    }
}

/// `u = -μ(x) + x_ref^j(t)`.
pub fn feedback_linearizing_control(
    x: &[f64],
    controller: &FrozenGp,
    t: usize,
    j: usize,
) -> Result<Vec<f64>, TaskError> {
    let r = reference_trajectory(j, t)?;
    let mean = controller
        .mean(x)
        .map_err(|e| TaskError::Config(format!("controller query failed: {e}")))?;
    Ok(mean.iter().zip(r).map(|(m, r)| r - m).collect())
}

/// Demo tracking tolerance `max(3 e^{-t/5}, 0.1)`.
pub fn tracking_envelope(t: usize) -> f64 {
    Envelope::DEMO.at(t)
}

/// Demo constraints: tracking tubes for tasks 1 and 2, `|x₁| ≤ 5/2` for task 3.
pub fn demo_constraints(j: usize, aug: &[f64], t: usize) -> Result<Vec<f64>, TaskError> {
    match j {
        1 | 2 => Ok(TrackingTube {
            reference: Reference::Demo(j),
            envelope: Envelope::DEMO,
        }
        .eval(aug, t)),
        3 => Ok(AbsBound { index: 0, bound: 2.5 }.eval(aug, t)),
        _ => Err(TaskError::Config(format!("no demo task {j}"))),
    }
}

/// Demo system: `f(x̃) = u`, unknown part is the demo map of the state only.
pub fn demo_system(variant: DemoVariant, noise_scale: Vec<f64>) -> Result<SystemSpec, TaskError> {
    SystemSpec::new(
        2,
        2,
        Arc::new(|x: &[f64]| vec![x[2], x[3]]),
        Some(demo_unknown(variant)),
        noise_scale,
        vec![0, 1],
    )
}

/// The three demo tasks with feedback-linearizing controllers.
pub fn demo_tasks(horizon: usize, initial_state: InitialStatePolicy, lookahead: usize) -> Vec<TaskSpec> {
    (1..=3)
        .map(|j| {
            let constraints: Arc<dyn ConstraintSet> = if j == 3 {
                Arc::new(AbsBound { index: 0, bound: 2.5 })
            } else {
                Arc::new(TrackingTube {
                    reference: Reference::Demo(j),
                    envelope: Envelope::DEMO,
                })
            };
            TaskSpec::new(
                j,
                Arc::new(FeedbackLinearizing {
                    reference: Reference::Demo(j),
                    lookahead,
                }),
                constraints,
                horizon,
                initial_state.clone(),
            )
        })
        .collect()
}

/// Prior measurements of a system at uniformly drawn states with zero input:
/// returns augmented inputs and residual targets `x⁺ - f(x̃) = g(x̃) + Q w`.
pub fn random_prior_data(
    system: &SystemSpec,
    lower: &[f64],
    upper: &[f64],
    count: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), TaskError> {
    let unknown = system
        .true_unknown()
        .ok_or_else(|| TaskError::Config("prior data needs the true unknown dynamics".into()))?;
    let dx = system.state_dim();
    if lower.len() != dx || upper.len() != dx {
        return Err(TaskError::Config(format!("prior-data bounds must have {dx} entries")));
    }
    let mut stream = crate::rng::Stream::new(seed);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let mut aug: Vec<f64> = lower.iter().zip(upper).map(|(lo, hi)| stream.uniform_in(*lo, *hi)).collect();
        aug.resize(system.augmented_dim(), 0.0);
        let z: Vec<f64> = (0..dx).map(|_| stream.normal()).collect();
        let g = unknown(&aug);
        let y: Vec<f64> = g.iter().zip(system.scale_noise(&z)).map(|(g, w)| g + w).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(TaskError::Config(format!("true dynamics not finite at prior point {aug:?}")));
        }
        inputs.push(aug);
        targets.push(y);
    }
    Ok((inputs, targets))
}
