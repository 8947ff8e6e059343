//! Run configuration: TOML schema, validation, and construction of the
//! planning problem.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dsml::gp::{KernelParams, MultiGp};
use dsml::planner::{OptimizerConfig, PlannerConfig};
use dsml::rng::{derive_seed, Stream};
use dsml::rollout::Problem;
use dsml::tasks::{
    demo_unknown, random_prior_data, AbsBound, ConstantConstraint, ConstraintSet, ControlLaw, DemoVariant, Envelope,
    ExplorationRegion, FeedbackLinearizing, InitialStatePolicy, Reference, SystemSpec, TaskSpec, TrackingTube,
    VectorField, ZeroInput,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Built-in configuration reproducing the two-dimensional three-task demo.
pub const PAPER_DEMO: &str = include_str!("../presets/paper-demo.toml");

macro_rules! checked_float {
    ($name:ident, $check:expr, $what:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
        #[serde(try_from = "f64", into = "f64")]
        pub struct $name(f64);

        impl TryFrom<f64> for $name {
            type Error = String;
            fn try_from(v: f64) -> Result<Self, String> {
                if $check(v) {
                    Ok(Self(v))
                } else {
                    Err(format!(concat!("expected ", $what, ", got {}"), v))
                }
            }
        }

        impl From<$name> for f64 {
            fn from(v: $name) -> f64 {
                v.0
            }
        }

        impl $name {
            pub fn get(self) -> f64 {
                self.0
            }
        }
    };
}

checked_float!(Probability, |v: f64| v > 0.0 && v < 1.0, "a number strictly between 0 and 1");
checked_float!(Positive, |v: f64| v.is_finite() && v > 0.0, "a positive finite number");
checked_float!(NonNegative, |v: f64| v.is_finite() && v >= 0.0, "a non-negative finite number");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Count(usize);

impl TryFrom<usize> for Count {
    type Error = String;
    fn try_from(v: usize) -> Result<Self, String> {
        if v >= 1 {
            Ok(Self(v))
        } else {
            Err("expected a count of at least 1, got 0".into())
        }
    }
}

impl From<Count> for usize {
    fn from(v: Count) -> usize {
        v.0
    }
}

impl Count {
    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub gp: GpConfig,
    pub tasks: Vec<TaskConfig>,
    pub planner: PlannerBlock,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub state_dim: Count,
    pub input_dim: usize,
    pub known: KnownDynamics,
    pub unknown: UnknownDynamics,
    /// Rows of the noise scaling matrix `Q`; process noise covariance is `Q Qᵀ`.
    pub noise_scale: Vec<Vec<f64>>,
    pub gp_input_projection: Vec<usize>,
    pub region: RegionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KnownDynamics {
    /// `f(x, u) = u`; requires equal state and input dimensions.
    Input,
    /// `f(x, u) = A x + B u`.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UnknownDynamics {
    Demo { variant: DemoVariant },
    Zero,
    /// No ground truth; planning works but validation and random prior data do not.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub signal_variance: Positive,
    pub lengthscales: Vec<Positive>,
    /// Defaults to the mean diagonal entry of `Q Qᵀ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<NonNegative>,
    /// Nugget added to each point the path sampler conditions on.
    #[serde(default = "default_sampler_noise")]
    pub sampler_noise_variance: NonNegative,
    pub prior_data: PriorData,
}

fn default_sampler_noise() -> NonNegative {
    NonNegative(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorData {
    None,
    /// States drawn uniformly from a box, zero input, measured on the true system.
    Random {
        count: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        seed: u64,
    },
    /// Augmented inputs and residual targets `x⁺ - f(x̃)`.
    Inline {
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub controller: ControllerConfig,
    pub constraint: ConstraintConfig,
    pub horizon: Count,
    pub initial_state: StartConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StartConfig {
    Fixed { state: Vec<f64> },
    /// A fresh state for every sample and validation run.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    /// One state per repetition, drawn from the repetition seed and shared by
    /// all samples and validation runs of that repetition.
    UniformPerRepetition { lower: Vec<f64>, upper: Vec<f64> },
}

impl StartConfig {
    fn resolve(&self, uniforms: &[f64]) -> InitialStatePolicy {
        match self {
            Self::Fixed { state } => InitialStatePolicy::Fixed { state: state.clone() },
            Self::Uniform { lower, upper } => InitialStatePolicy::Uniform {
                lower: lower.clone(),
                upper: upper.clone(),
            },
            Self::UniformPerRepetition { lower, upper } => InitialStatePolicy::Fixed {
                state: InitialStatePolicy::Uniform {
                    lower: lower.clone(),
                    upper: upper.clone(),
                }
                .initial_state(uniforms),
            },
        }
    }
}

/// Stream tag for the per-repetition start draw.
const START_TAG: u64 = 0x53_5441_5254;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerConfig {
    /// `u = -μ(x) + r(t + lookahead)`.
    FeedbackLinearizing {
        reference: Reference,
        #[serde(default)]
        lookahead: usize,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintConfig {
    /// `‖x - r(t)‖ ≤ φ(t)`.
    TrackingTube { reference: Reference, envelope: Envelope },
    /// `|x̃[index]| ≤ bound`.
    AbsBound { index: usize, bound: f64 },
    /// Constant constraint value (`< 0` always satisfied, `> 0` never).
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerBlock {
    pub delta: Probability,
    pub samples: Count,
    pub max_n: Count,
    pub restarts: Count,
    #[serde(default = "one")]
    pub parallel_starts: Count,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "one")]
    pub warm_candidates: Count,
    #[serde(default = "one")]
    pub repetitions: Count,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn one() -> Count {
    Count(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub runs: Count,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { runs: Count(100), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("dsml-out"),
        }
    }
}

/// Where a configuration came from, for error messages.
#[derive(Debug, Clone)]
pub struct Source(pub String);

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(format!("{source}: {e}")))?;
        cfg.check().map_err(|m| CliError::Config(format!("{source}: {m}")))?;
        Ok(cfg)
    }

    /// Loads a file, or the built-in preset when `name` is `paper-demo`.
    pub fn load(name: &Path) -> Result<Self, CliError> {
        if name.as_os_str() == "paper-demo" && !name.exists() {
            return Self::paper_demo();
        }
        let text = std::fs::read_to_string(name)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", name.display())))?;
        Self::from_toml(&text, &name.display().to_string())
    }

    pub fn paper_demo() -> Result<Self, CliError> {
        Self::from_toml(PAPER_DEMO, "paper-demo preset")
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize configuration: {e}")))
    }

    /// Switches to the full-scale demo settings: horizon 100, 100 samples,
    /// 10 repetitions.
    pub fn apply_full_scale(&mut self) {
        for t in &mut self.tasks {
            t.horizon = Count(100);
        }
        self.planner.samples = Count(100);
        self.planner.repetitions = Count(10);
    }

    fn check(&self) -> Result<(), String> {
        let s = &self.system;
        let dx = s.state_dim.get();
        let da = dx + s.input_dim;
        if s.noise_scale.len() != dx || s.noise_scale.iter().any(|r| r.len() != dx) {
            return Err(format!("system.noise_scale must be a {dx}×{dx} matrix"));
        }
        if let KnownDynamics::Input = s.known {
            if s.input_dim != dx {
                return Err("system.known = input needs input_dim equal to state_dim".into());
            }
        }
        if let KnownDynamics::Linear { a, b } = &s.known {
            if a.len() != dx || a.iter().any(|r| r.len() != dx) {
                return Err(format!("system.known.a must be {dx}×{dx}"));
            }
            if b.len() != dx || b.iter().any(|r| r.len() != s.input_dim) {
                return Err(format!("system.known.b must be {dx}×{}", s.input_dim));
            }
        }
        if let UnknownDynamics::Demo { .. } = s.unknown {
            if dx != 2 || s.gp_input_projection.iter().any(|&i| i >= 2) {
                return Err("the demo dynamics need a 2-dimensional state and a state-only GP projection".into());
            }
        }
        if s.region.lower.len() != da || s.region.upper.len() != da {
            return Err(format!("system.region bounds need {da} entries (state then input)"));
        }
        if self.gp.lengthscales.len() != s.gp_input_projection.len() {
            return Err(format!(
                "gp.lengthscales has {} entries for {} projected inputs",
                self.gp.lengthscales.len(),
                s.gp_input_projection.len()
            ));
        }
        if self.tasks.is_empty() {
            return Err("at least one [[tasks]] entry is required".into());
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if let ControllerConfig::FeedbackLinearizing { reference, .. } = &t.controller {
                if s.input_dim != dx || reference.dim() != dx {
                    return Err(format!(
                        "tasks[{i}]: feedback linearization needs input_dim = state_dim = reference length"
                    ));
                }
                if s.gp_input_projection.iter().any(|&p| p >= dx) {
                    return Err(format!("tasks[{i}]: feedback linearization needs a state-only GP projection"));
                }
                reference.check().map_err(|e| format!("tasks[{i}]: {e}"))?;
            }
            if let ConstraintConfig::TrackingTube { reference, envelope } = &t.constraint {
                reference.check().map_err(|e| format!("tasks[{i}]: {e}"))?;
                if reference.dim() > dx {
                    return Err(format!("tasks[{i}]: tracking reference longer than the state"));
                }
                if !(envelope.decay > 0.0 && envelope.floor.is_finite() && envelope.initial.is_finite()) {
                    return Err(format!("tasks[{i}]: envelope needs a positive decay and finite values"));
                }
            }
            if let ConstraintConfig::AbsBound { index, .. } = &t.constraint {
                if *index >= da {
                    return Err(format!("tasks[{i}]: abs-bound index {index} outside the augmented state"));
                }
            }
        }
        Ok(())
    }

    fn system_spec(&self) -> Result<SystemSpec, CliError> {
        let s = &self.system;
        let dx = s.state_dim.get();
        let known: VectorField = match &s.known {
            KnownDynamics::Input => Arc::new(move |x: &[f64]| x[dx..2 * dx].to_vec()),
            KnownDynamics::Linear { a, b } => {
                let (a, b) = (a.clone(), b.clone());
                Arc::new(move |x: &[f64]| {
                    let (state, input) = x.split_at(dx);
                    a.iter()
                        .zip(&b)
                        .map(|(ar, br)| {
                            ar.iter().zip(state).map(|(a, x)| a * x).sum::<f64>()
                                + br.iter().zip(input).map(|(b, u)| b * u).sum::<f64>()
                        })
                        .collect()
                })
            }
        };
        let unknown: Option<VectorField> = match s.unknown {
            UnknownDynamics::Demo { variant } => Some(demo_unknown(variant)),
            UnknownDynamics::Zero => Some(Arc::new(move |_: &[f64]| vec![0.0; dx])),
            UnknownDynamics::None => None,
        };
        Ok(SystemSpec::new(
            dx,
            s.input_dim,
            known,
            unknown,
            s.noise_scale.concat(),
            s.gp_input_projection.clone(),
        )?)
    }

    /// Initial-state policies for a repetition; every task with a
    /// per-repetition policy maps the same uniforms through its own bounds.
    pub fn initial_states(&self, repetition_seed: u64) -> Vec<InitialStatePolicy> {
        let mut stream = Stream::new(derive_seed(repetition_seed, START_TAG));
        let uniforms: Vec<f64> = (0..self.system.state_dim.get()).map(|_| stream.uniform()).collect();
        self.tasks.iter().map(|t| t.initial_state.resolve(&uniforms)).collect()
    }

    fn task_specs(&self, repetition_seed: u64) -> Vec<TaskSpec> {
        let starts = self.initial_states(repetition_seed);
        self.tasks
            .iter()
            .zip(starts)
            .enumerate()
            .map(|(i, (t, start))| {
                let control: Arc<dyn ControlLaw> = match &t.controller {
                    ControllerConfig::FeedbackLinearizing { reference, lookahead } => Arc::new(FeedbackLinearizing {
                        reference: reference.clone(),
                        lookahead: *lookahead,
                    }),
                    ControllerConfig::Zero => Arc::new(ZeroInput {
                        dim: self.system.input_dim,
                    }),
                };
                let constraints: Arc<dyn ConstraintSet> = match &t.constraint {
                    ConstraintConfig::TrackingTube { reference, envelope } => Arc::new(TrackingTube {
                        reference: reference.clone(),
                        envelope: *envelope,
                    }),
                    ConstraintConfig::AbsBound { index, bound } => Arc::new(AbsBound {
                        index: *index,
                        bound: *bound,
                    }),
                    ConstraintConfig::Constant { value } => Arc::new(ConstantConstraint(*value)),
                };
                TaskSpec::new(i + 1, control, constraints, t.horizon.get(), start)
            })
            .collect()
    }

    /// Builds the planning problem of one repetition, including the prior GP.
    pub fn build_problem(&self, repetition_seed: u64) -> Result<Problem, CliError> {
        let system = self.system_spec()?;
        let noise = match self.gp.noise_variance {
            Some(v) => v.get(),
            None => system.process_noise_variance(),
        };
        let params = KernelParams::new(
            self.gp.signal_variance.get(),
            self.gp.lengthscales.iter().map(|l| l.get()).collect(),
            noise,
            self.system.gp_input_projection.clone(),
        )?;
        let dx = system.state_dim();
        let gp = match &self.gp.prior_data {
            PriorData::None => MultiGp::new(params, dx)?,
            PriorData::Random {
                count,
                lower,
                upper,
                seed,
            } => {
                let (inputs, targets) = random_prior_data(&system, lower, upper, *count, *seed)?;
                MultiGp::from_data(params, dx, &inputs, &targets)?
            }
            PriorData::Inline { inputs, targets } => MultiGp::from_data(params, dx, inputs, targets)?,
        };
        let problem = Problem::new(system, self.task_specs(repetition_seed), gp)?;
        Ok(problem.with_sampler_noise(self.gp.sampler_noise_variance.get())?)
    }

    /// Planner settings for one repetition.
    pub fn planner_config(&self, seed: u64) -> Result<PlannerConfig, CliError> {
        let p = &self.planner;
        let region = ExplorationRegion::new(self.system.region.lower.clone(), self.system.region.upper.clone())?;
        let mut cfg = PlannerConfig::new(region);
        cfg.delta = p.delta.get();
        cfg.samples = p.samples.get();
        cfg.max_n = p.max_n.get();
        cfg.restarts = p.restarts.get();
        cfg.parallel_starts = p.parallel_starts.get();
        cfg.warm_start = p.warm_start;
        cfg.warm_candidates = p.warm_candidates.get();
        cfg.optimizer = p.optimizer.clone();
        cfg.seed = seed;
        Ok(cfg)
    }
}
