//! Measurement-location selection for multi-task learning-based control.
//!
//! Given a Gaussian-process model of the unknown part of a system's dynamics
//! and several tasks, each with a GP-based controller and constraints, the
//! planner searches for the smallest set of measurement locations such that,
//! once measured, all controllers jointly satisfy their constraints with
//! estimated probability above `1 - δ`.
//!
//! - [`gp`]: GP posterior with incremental conditioning and path sampling.
//! - [`tasks`]: systems, control laws, constraints, and the built-in demo.
//! - [`rollout`]: joint sampling of hypothetical data and closed-loop trajectories.
//! - [`saa`]: sample-average satisfaction estimates and the hinge surrogate.
//! - [`planner`]: the outer loop and multi-start optimizer.
//! - [`rng`]: the portable random stream behind every sample.

pub mod gp;
pub mod planner;
pub mod rng;
pub mod rollout;
pub mod saa;
pub mod tasks;

pub use gp::{kernel_eval, FrozenGp, GpError, KernelParams, MultiGp, Posterior};
pub use planner::{optimize_locations, plan, OptimizerConfig, PlanResult, PlannerConfig, PlannerError, Termination};
pub use rollout::{build_index_map, generate_batch, rollout_one, IndexEntry, IndexMap, Problem, RolloutResult, SampleBatch};
pub use saa::{estimate_satisfaction, surrogate, SaaEstimate, SurrogateValue};
pub use tasks::{ExplorationRegion, InitialStatePolicy, SystemSpec, TaskSpec};
