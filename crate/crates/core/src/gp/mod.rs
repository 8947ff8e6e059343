//! Gaussian-process model of the unknown dynamics component.
//!
//! One GP per output dimension, all sharing hyperparameters and conditioning
//! inputs. Because the inputs and kernel are shared, so is the Cholesky
//! factor of the Gram matrix; only the targets differ per output. The factor
//! is grown one row at a time, which makes each conditioning step `O(n²)`.
//!
//! The same type serves two roles during a rollout: the *controller* model
//! (conditioned on noisy measurements, frozen afterwards) and the *sampler*
//! model, which is conditioned on its own draws so that every evaluation is
//! consistent with a single sampled function.

mod cholesky;
mod kernel;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cholesky::{dot, PackedCholesky};
pub use kernel::{kernel_eval, KernelParams};

/// Relative pivot below which a new Cholesky row counts as broken down.
const PIVOT_FLOOR: f64 = 1e-12;
/// Jitter ladder, relative to the signal variance.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
/// Posterior variances in `[-VARIANCE_SLACK, 0)` are round-off and clamp to 0.
const VARIANCE_SLACK: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("input has {len} entries but the kernel reads index {index}")]
    InputShape { index: usize, len: usize },
    #[error("inputs have different lengths ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("input entry {index} is not finite ({value})")]
    NonFiniteInput { index: usize, value: f64 },
    #[error("expected {expected} target values, got {found}")]
    TargetShape { expected: usize, found: usize },
    #[error("target values must be finite")]
    NonFiniteTarget,
    #[error("conditioning failed at {point:?}: {reason}")]
    ConditioningFailure { point: Vec<f64>, reason: String },
    #[error("posterior variance {variance} is negative beyond round-off")]
    NegativeVariance { variance: f64 },
}

/// Per-output posterior mean and standard deviation at one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Independent GPs for each of `outputs` dimensions over shared inputs.
#[derive(Debug, Clone)]
pub struct MultiGp {
    params: KernelParams,
    outputs: usize,
    /// Projected conditioning inputs, `n × input_dim`.
    points: Vec<f64>,
    /// Diagonal term added for each point (observation noise plus any jitter).
    diag_noise: Vec<f64>,
    chol: PackedCholesky,
    /// `n × outputs`.
    targets: Vec<f64>,
    /// `L⁻¹ y`, `n × outputs`.
    whitened: Vec<f64>,
}

/// Result of solving against the current factor for one query.
struct Solved {
    proj: Vec<f64>,
    v: Vec<f64>,
    raw_variance: f64,
}

impl MultiGp {
    /// Prior GP with no conditioning data.
    pub fn new(params: KernelParams, outputs: usize) -> Result<Self, GpError> {
        if outputs == 0 {
            return Err(GpError::InvalidParams("a GP needs at least one output".into()));
        }
        Ok(Self {
            params,
            outputs,
            points: Vec::new(),
            diag_noise: Vec::new(),
            chol: PackedCholesky::default(),
            targets: Vec::new(),
            whitened: Vec::new(),
        })
    }

    /// Builds a posterior by conditioning on each `(input, target)` pair in order.
    pub fn from_data(
        params: KernelParams,
        outputs: usize,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::TargetShape {
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        let mut gp = Self::new(params, outputs)?;
        gp.chol = PackedCholesky::with_capacity(inputs.len());
        for (x, y) in inputs.iter().zip(targets) {
            gp.condition_in_place(x, y)?;
        }
        Ok(gp)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Number of conditioning points.
    pub fn len(&self) -> usize {
        self.chol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Projected conditioning inputs in insertion order.
    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.params.input_dim())
    }

    /// Targets of the `i`-th conditioning point.
    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.outputs..(i + 1) * self.outputs]
    }

    /// Diagonal Gram entry added for the `i`-th point (noise plus jitter).
    pub fn point_noise(&self, i: usize) -> f64 {
        self.diag_noise[i]
    }

    /// `(i, j)` entry of the lower Cholesky factor of `K + diag(noise)`.
    pub fn cholesky_entry(&self, i: usize, j: usize) -> f64 {
        self.chol.get(i, j)
    }

    /// Copy whose *future* conditionings use `noise_variance`; existing points
    /// keep the noise they were added with.
    pub fn with_noise_variance(&self, noise_variance: f64) -> Result<Self, GpError> {
        let mut gp = self.clone();
        gp.params = self.params.with_noise_variance(noise_variance)?;
        Ok(gp)
    }

    fn solve(&self, proj: Vec<f64>) -> Solved {
        let p = self.params.input_dim();
        let mut v: Vec<f64> = self
            .points
            .chunks_exact(p)
            .map(|s| self.params.eval_projected(&proj, s))
            .collect();
        self.chol.forward_solve_in_place(&mut v);
        let prior = self.params.signal_variance();
        let raw_variance = prior - dot(&v, &v);
        Solved {
            proj,
            v,
            raw_variance,
        }
    }

    fn mean_from(&self, v: &[f64]) -> Vec<f64> {
        let mut mean = vec![0.0; self.outputs];
        for (vi, w) in v.iter().zip(self.whitened.chunks_exact(self.outputs)) {
            for (m, wc) in mean.iter_mut().zip(w) {
                *m += vi * wc;
            }
        }
        mean
    }

    fn clamp_variance(&self, raw: f64) -> Result<f64, GpError> {
        if raw >= 0.0 {
            Ok(raw)
        } else if raw >= -VARIANCE_SLACK * self.params.signal_variance() {
            Ok(0.0)
        } else {
            Err(GpError::NegativeVariance { variance: raw })
        }
    }

    /// Posterior mean and standard deviation of every output at `query`.
    pub fn posterior(&self, query: &[f64]) -> Result<Posterior, GpError> {
        let proj = self.params.project(query)?;
        let s = self.solve(proj);
        let std = self.clamp_variance(s.raw_variance)?.sqrt();
        Ok(Posterior {
            mean: self.mean_from(&s.v),
            std: vec![std; self.outputs],
        })
    }

    fn check_target(&self, target: &[f64]) -> Result<(), GpError> {
        if target.len() != self.outputs {
            return Err(GpError::TargetShape {
                expected: self.outputs,
                found: target.len(),
            });
        }
        if target.iter().any(|y| !y.is_finite()) {
            return Err(GpError::NonFiniteTarget);
        }
        Ok(())
    }

    fn push_solved(&mut self, s: Solved, target: &[f64], noise: f64) -> Result<(), GpError> {
        let sf2 = self.params.signal_variance();
        let floor = PIVOT_FLOOR * sf2;
        let mut jitter = 0.0;
        if !(s.raw_variance + noise > floor) {
            jitter = JITTER_START * sf2;
            while !(s.raw_variance + noise + jitter > floor) {
                jitter *= 10.0;
                if jitter > JITTER_MAX * sf2 * (1.0 + 1e-9) {
                    return Err(GpError::ConditioningFailure {
                        point: s.proj,
                        reason: format!(
                            "Gram matrix not positive definite (pivot {:e}) after jitter up to {:e}",
                            s.raw_variance + noise,
                            JITTER_MAX * sf2
                        ),
                    });
                }
            }
        }
        let d = (s.raw_variance + noise + jitter).sqrt();
        let mut w_new = target.to_vec();
        for (vi, w) in s.v.iter().zip(self.whitened.chunks_exact(self.outputs)) {
            for (nw, wc) in w_new.iter_mut().zip(w) {
                *nw -= vi * wc;
            }
        }
        w_new.iter_mut().for_each(|w| *w /= d);

        self.chol.push_row(&s.v, d);
        self.points.extend_from_slice(&s.proj);
        self.diag_noise.push(noise + jitter);
        self.targets.extend_from_slice(target);
        self.whitened.extend_from_slice(&w_new);
        Ok(())
    }

    fn find_exact_duplicate(&self, proj: &[f64]) -> Option<usize> {
        self.points()
            .zip(&self.diag_noise)
            .position(|(p, &n)| n == 0.0 && p == proj)
    }

    /// Adds one observation with this GP's noise variance.
    pub fn condition_in_place(&mut self, point: &[f64], target: &[f64]) -> Result<(), GpError> {
        let noise = self.params.noise_variance();
        self.condition_with_noise_in_place(point, target, noise)
    }

    /// Adds one observation with an explicit noise variance for that point.
    ///
    /// An exact repeat of a noise-free point with zero noise makes the Gram
    /// matrix exactly singular; no jitter is applied in that case and the
    /// call fails.
    pub fn condition_with_noise_in_place(
        &mut self,
        point: &[f64],
        target: &[f64],
        noise: f64,
    ) -> Result<(), GpError> {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(GpError::InvalidParams(format!("noise variance {noise}")));
        }
        self.check_target(target)?;
        let proj = self.params.project(point)?;
        if noise == 0.0 {
            if let Some(i) = self.find_exact_duplicate(&proj) {
                return Err(GpError::ConditioningFailure {
                    point: proj,
                    reason: format!(
                        "duplicate of noise-free conditioning point {i}; Gram matrix is singular at every jitter level"
                    ),
                });
            }
        }
        let s = self.solve(proj);
        self.push_solved(s, target, noise)
    }

    /// Value-semantics variant of [`condition_in_place`](Self::condition_in_place).
    pub fn condition(&self, point: &[f64], target: &[f64]) -> Result<Self, GpError> {
        let mut gp = self.clone();
        gp.condition_in_place(point, target)?;
        Ok(gp)
    }

    /// Draws `μ(point) + σ(point) ζ` per output and conditions on the draw.
    ///
    /// When the posterior variance at `point` is already zero to working
    /// precision in a noise-free model, the value is fully determined by the
    /// existing conditioning set: the draw is the posterior mean and no new
    /// row is added.
    pub fn sample_eval_in_place(&mut self, point: &[f64], zeta: &[f64]) -> Result<Vec<f64>, GpError> {
        if zeta.len() != self.outputs {
            return Err(GpError::TargetShape {
                expected: self.outputs,
                found: zeta.len(),
            });
        }
        let proj = self.params.project(point)?;
        let s = self.solve(proj);
        let noise = self.params.noise_variance();
        let determined = noise == 0.0 && s.raw_variance <= PIVOT_FLOOR * self.params.signal_variance();
        let std = if determined {
            0.0
        } else {
            self.clamp_variance(s.raw_variance)?.sqrt()
        };
        let mut value = self.mean_from(&s.v);
        for (v, z) in value.iter_mut().zip(zeta) {
            *v += std * z;
        }
        if !determined {
            self.check_target(&value)?;
            self.push_solved(s, &value, noise)?;
        }
        Ok(value)
    }

    /// Value-semantics variant of [`sample_eval_in_place`](Self::sample_eval_in_place).
    pub fn sample_eval(&self, point: &[f64], zeta: &[f64]) -> Result<(Vec<f64>, Self), GpError> {
        let mut gp = self.clone();
        let value = gp.sample_eval_in_place(point, zeta)?;
        Ok((value, gp))
    }

    /// Precomputes `(K + Σ)⁻¹ y` so that mean queries cost `O(n)`.
    pub fn freeze(self) -> FrozenGp {
        let mut alpha = self.whitened.clone();
        self.chol.backward_solve_rows(&mut alpha, self.outputs);
        FrozenGp { gp: self, alpha }
    }
}

/// A GP that will not be conditioned further, with cached weights for fast
/// mean evaluation.
#[derive(Debug, Clone)]
pub struct FrozenGp {
    gp: MultiGp,
    alpha: Vec<f64>,
}

impl FrozenGp {
    pub fn gp(&self) -> &MultiGp {
        &self.gp
    }

    pub fn into_inner(self) -> MultiGp {
        self.gp
    }

    /// Posterior mean at `query`.
    pub fn mean(&self, query: &[f64]) -> Result<Vec<f64>, GpError> {
        let params = &self.gp.params;
        let proj = params.project(query)?;
        let outputs = self.gp.outputs;
        let mut mean = vec![0.0; outputs];
        for (s, a) in self
            .gp
            .points
            .chunks_exact(params.input_dim())
            .zip(self.alpha.chunks_exact(outputs))
        {
            let k = params.eval_projected(&proj, s);
            for (m, ac) in mean.iter_mut().zip(a) {
                *m += k * ac;
            }
        }
        Ok(mean)
    }

    pub fn posterior(&self, query: &[f64]) -> Result<Posterior, GpError> {
        self.gp.posterior(query)
    }
}
