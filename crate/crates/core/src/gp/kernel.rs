//! Squared-exponential kernel with per-dimension lengthscales and an input
//! projection onto a subset of the augmented state.

use serde::{Deserialize, Serialize};

use super::GpError;

/// Hyperparameters shared by every output dimension of a [`MultiGp`](super::MultiGp).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    signal_variance: f64,
    lengthscales: Vec<f64>,
    noise_variance: f64,
    input_projection: Vec<usize>,
}

impl KernelParams {
    /// Validates and builds a parameter set.
    ///
    /// `input_projection` lists the augmented-state indices the kernel reads;
    /// `lengthscales` must have one entry per projected index.
    pub fn new(
        signal_variance: f64,
        lengthscales: Vec<f64>,
        noise_variance: f64,
        input_projection: Vec<usize>,
    ) -> Result<Self, GpError> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(GpError::InvalidParams(format!(
                "signal variance must be positive and finite, got {signal_variance}"
            )));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(GpError::InvalidParams(format!(
                "noise variance must be non-negative and finite, got {noise_variance}"
            )));
        }
        if input_projection.is_empty() {
            return Err(GpError::InvalidParams("input projection is empty".into()));
        }
        let mut seen = input_projection.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(GpError::InvalidParams(format!(
                "input projection {input_projection:?} has duplicate indices"
            )));
        }
        if lengthscales.len() != input_projection.len() {
            return Err(GpError::InvalidParams(format!(
                "{} lengthscales for {} projected inputs",
                lengthscales.len(),
                input_projection.len()
            )));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(GpError::InvalidParams(format!(
                "lengthscales must be positive and finite, got {l}"
            )));
        }
        Ok(Self {
            signal_variance,
            lengthscales,
            noise_variance,
            input_projection,
        })
    }

    /// Same lengthscale on every projected input.
    pub fn isotropic(
        signal_variance: f64,
        lengthscale: f64,
        noise_variance: f64,
        input_projection: Vec<usize>,
    ) -> Result<Self, GpError> {
        let lengthscales = vec![lengthscale; input_projection.len()];
        Self::new(signal_variance, lengthscales, noise_variance, input_projection)
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn input_projection(&self) -> &[usize] {
        &self.input_projection
    }

    /// Number of inputs the kernel actually reads.
    pub fn input_dim(&self) -> usize {
        self.input_projection.len()
    }

    /// Copy of these parameters with a different observation-noise variance.
    pub fn with_noise_variance(&self, noise_variance: f64) -> Result<Self, GpError> {
        Self::new(
            self.signal_variance,
            self.lengthscales.clone(),
            noise_variance,
            self.input_projection.clone(),
        )
    }

    /// Extracts the projected coordinates of an augmented state.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, GpError> {
        let mut out = Vec::with_capacity(self.input_dim());
        for &i in &self.input_projection {
            match x.get(i) {
                Some(v) if v.is_finite() => out.push(*v),
                Some(v) => return Err(GpError::NonFiniteInput { index: i, value: *v }),
                None => {
                    return Err(GpError::InputShape {
                        index: i,
                        len: x.len(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Kernel between two already-projected inputs.
    #[inline]
    pub(crate) fn eval_projected(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let d = (x - y) / l;
            r2 += d * d;
        }
        self.signal_variance * (-0.5 * r2).exp()
    }
}

/// `σ_f² exp(-½ Σ ((aᵢ - bᵢ)/ℓᵢ)²)` over the projected indices of two
/// augmented states.
pub fn kernel_eval(params: &KernelParams, a: &[f64], b: &[f64]) -> Result<f64, GpError> {
    if a.len() != b.len() {
        return Err(GpError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let pa = params.project(a)?;
    let pb = params.project(b)?;
    Ok(params.eval_projected(&pa, &pb))
}
