//! The per-step private update: clip, aggregate, add Gaussian noise, apply Adam.

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::norm2;
use crate::privacy::NoiseScaleMode;
use crate::rng::StreamId;

#[derive(Debug, Error, PartialEq)]
pub enum MechanismError {
    #[error("noise multiplier must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
}

/// Scales `g` by `min(1, C/‖g‖₂)`.
pub fn clip(g: &[f64], clip_norm: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, clip_norm);
    out
}

/// In-place [`clip`]; returns the norm before clipping.
///
/// The computed norm of the result never exceeds `clip_norm`, which also makes clipping
/// idempotent bit for bit.
pub fn clip_in_place(g: &mut [f64], clip_norm: f64) -> f64 {
    let n = norm2(g);
    if n > clip_norm {
        let s = clip_norm / n;
        g.iter_mut().for_each(|v| *v *= s);
        while norm2(g) > clip_norm {
            g.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
        }
    }
    n
}

/// Index-ordered sum of `clipped` divided by `divisor`. An empty batch yields zeros.
pub fn aggregate<V: AsRef<[f64]>>(clipped: &[V], dim: usize, divisor: usize) -> Result<Vec<f64>, MechanismError> {
    let mut sum = vec![0.0; dim];
    for v in clipped {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(MechanismError::Length { expected: dim, got: v.len() });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    if divisor > 0 {
        let inv = divisor as f64;
        sum.iter_mut().for_each(|s| *s /= inv);
    }
    Ok(sum)
}

/// Standard-normal draws from a named stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub stream: StreamId,
    pub values: Vec<f64>,
}

impl NoiseDraw {
    pub fn standard_normal(stream: StreamId, dim: usize) -> Self {
        let mut rng = stream.rng();
        let values = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { stream, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Noise standard deviation per coordinate for a given mode.
pub fn noise_std(sigma: f64, clip_norm: f64, divisor: usize, mode: NoiseScaleMode) -> f64 {
    match mode {
        NoiseScaleMode::UndividedMean => sigma * clip_norm,
        NoiseScaleMode::StandardMean => sigma * clip_norm / divisor.max(1) as f64,
    }
}

/// `g + σC z` (undivided mean) or `g + (σC/divisor) z` (standard mean).
pub fn add_noise(
    g: &[f64],
    sigma: f64,
    clip_norm: f64,
    divisor: usize,
    mode: NoiseScaleMode,
    draw: &NoiseDraw,
) -> Result<Vec<f64>, MechanismError> {
    if sigma < 0.0 {
        return Err(MechanismError::NegativeSigma(sigma));
    }
    if draw.dim() != g.len() {
        return Err(MechanismError::Length { expected: g.len(), got: draw.dim() });
    }
    if sigma == 0.0 {
        return Ok(g.to_vec());
    }
    let std = noise_std(sigma, clip_norm, divisor, mode);
    Ok(g.iter().zip(&draw.values).map(|(x, z)| x + std * z).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps_hat: 1e-8 }
    }
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self { first_moment: vec![0.0; dim], second_moment: vec![0.0; dim], step_count: 0, config }
    }

    /// One bias-corrected Adam update of `params` along `g`.
    pub fn step(&mut self, params: &mut [f64], g: &[f64], lr: f64) -> Result<(), MechanismError> {
        let d = self.first_moment.len();
        for len in [params.len(), g.len()] {
            if len != d {
                return Err(MechanismError::Length { expected: d, got: len });
            }
        }
        let AdamConfig { beta1, beta2, eps_hat } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..d {
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g[i];
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g[i] * g[i];
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps_hat);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &[f64], g: &[f64], lr: f64) -> Result<(Vec<f64>, AdamState), MechanismError> {
    let mut state = state.clone();
    let mut params = params.to_vec();
    state.step(&mut params, g, lr)?;
    Ok((params, state))
}
