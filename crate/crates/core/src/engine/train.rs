use rand::Rng;

use super::config::Sampling;
use super::report::{EvalRecord, StepRecord};
use super::EngineError;
use crate::linalg::norm2;
use crate::mechanism::{add_noise, aggregate, clip_in_place, AdamConfig, AdamState, NoiseDraw};
use crate::models::{per_example_losses_and_grads, predict_accuracy, Example, ModelSpec, ParameterVector};
use crate::privacy::{Conversion, NoiseScaleMode, RdpCurve};
use crate::rng::{Phase, Purpose, StreamId};
use crate::subspace::{ProjectionMatrix, TrajectoryRecorder};

/// Gaussian noise added to the aggregated (clipped) gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub mode: NoiseScaleMode,
}

/// How ε spent is reported per step.
#[derive(Debug, Clone, PartialEq)]
pub enum Accounting {
    /// No finite guarantee (e.g. zero noise on private data).
    Unbounded,
    /// A fixed amount, e.g. an earlier stage's spend or zero for public data.
    Constant(f64),
    /// `offset` plus the RDP bound after `t` steps.
    Rdp { curve: RdpCurve, delta: f64, offset: f64 },
}

impl Accounting {
    pub fn at(&self, t: usize) -> Option<f64> {
        match self {
            Accounting::Unbounded => None,
            Accounting::Constant(e) => Some(*e),
            Accounting::Rdp { curve, delta, offset } => {
                Some(offset + curve.epsilon(t as u64, *delta, Conversion::default()).0)
            }
        }
    }
}

/// One training loop: full-space when `projection` is `None`, otherwise in its span.
#[derive(Debug, Clone)]
pub struct LoopSpec<'a> {
    pub phase: Phase,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub sampling: Sampling,
    pub lr: f64,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub noise: Option<NoiseSpec>,
    pub projection: Option<&'a ProjectionMatrix>,
    /// Evaluate every this many steps (and after the last one); `None` only at the end.
    pub eval_every: Option<usize>,
    pub accounting: Accounting,
    /// Added to local step numbers in the records.
    pub step_offset: usize,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub params: ParameterVector,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

/// Indices of the examples used at one step, in increasing order.
pub fn sample_batch(sampling: Sampling, n: usize, batch_size: usize, stream: StreamId) -> Vec<usize> {
    let mut rng = stream.rng();
    match sampling {
        Sampling::Poisson => {
            let q = (batch_size as f64 / n.max(1) as f64).min(1.0);
            (0..n).filter(|_| rng.random::<f64>() < q).collect()
        }
        Sampling::Fixed => {
            let mut idx = rand::seq::index::sample(&mut rng, n, batch_size.min(n)).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

/// Runs `spec.steps` optimiser steps from `start`, optionally recording the post-update
/// trajectory.
pub fn run_loop(
    model: &ModelSpec,
    start: ParameterVector,
    train: &[Example],
    val: &[Example],
    spec: &LoopSpec<'_>,
    mut recorder: Option<&mut TrajectoryRecorder>,
) -> Result<LoopOutcome, EngineError> {
    if train.is_empty() {
        return Err(EngineError::Data(format!("{}: empty training set", spec.label)));
    }
    if spec.noise.is_some_and(|n| n.sigma > 0.0) && spec.clip_norm.is_none() {
        return Err(EngineError::Data("noise requires clipping".into()));
    }
    let d = start.len();
    if let Some(p) = spec.projection {
        if p.d() != d {
            return Err(EngineError::LayoutMismatch(format!("projection has d = {}, model has {d}", p.d())));
        }
    }
    let dim = spec.projection.map_or(d, ProjectionMatrix::k);
    let mut params = start;
    let mut adam = AdamState::new(d, spec.adam);
    let mut steps = Vec::with_capacity(spec.steps);
    let mut evals = Vec::new();

    for t in 1..=spec.steps {
        let idx = sample_batch(spec.sampling, train.len(), spec.batch_size, stream(spec, Purpose::Sampling, t));
        let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
        let per = if batch.is_empty() { Vec::new() } else { per_example_losses_and_grads(model, &params, &batch)? };

        let mut losses = 0.0;
        let mut norm_sum = 0.0;
        let mut norm_max: f64 = 0.0;
        let mut clipped = 0usize;
        let mut contributions = Vec::with_capacity(per.len());
        for (loss, g) in per {
            losses += loss;
            let mut g = match spec.projection {
                Some(p) => p.project_down(&g)?,
                None => g,
            };
            let norm = match spec.clip_norm {
                Some(c) => {
                    let norm = clip_in_place(&mut g, c);
                    if norm > c {
                        clipped += 1;
                    }
                    norm
                }
                None => norm2(&g),
            };
            norm_sum += norm;
            norm_max = norm_max.max(norm);
            contributions.push(g);
        }

        let divisor = match spec.sampling {
            Sampling::Poisson => spec.batch_size,
            Sampling::Fixed => batch.len(),
        };
        let mut update = aggregate(&contributions, dim, divisor.max(1))?;
        if let (Some(noise), Some(c)) = (spec.noise, spec.clip_norm) {
            if noise.sigma > 0.0 {
                let draw = NoiseDraw::standard_normal(stream(spec, Purpose::Noise, t), dim);
                update = add_noise(&update, noise.sigma, c, divisor, noise.mode, &draw)?;
            }
        }
        if let Some(p) = spec.projection {
            update = p.project_up(&update)?;
        }
        adam.step(params.values_mut(), &update, spec.lr)?;
        if let Some(rec) = recorder.as_deref_mut() {
            rec.maybe_record(t, &params)?;
        }

        let b = batch.len();
        let epsilon_spent = spec.accounting.at(t);
        steps.push(StepRecord {
            step: spec.step_offset + t,
            phase: spec.label.clone(),
            loss: (b > 0).then(|| losses / b as f64),
            batch_size: b,
            grad_norm_mean: if b > 0 { norm_sum / b as f64 } else { 0.0 },
            grad_norm_max: norm_max,
            clipped_fraction: if b > 0 { clipped as f64 / b as f64 } else { 0.0 },
            epsilon_spent,
        });
        let due = spec.eval_every.is_some_and(|e| e > 0 && t % e == 0) || t == spec.steps;
        if due && !val.is_empty() {
            evals.push(EvalRecord {
                step: spec.step_offset + t,
                phase: spec.label.clone(),
                accuracy: predict_accuracy(model, &params, val)?,
                epsilon_spent,
            });
        }
        if t % 50 == 0 {
            log::debug!("{} step {t}/{}: loss {:?}", spec.label, spec.steps, steps.last().and_then(|s| s.loss));
        }
    }
    Ok(LoopOutcome { params, steps, evals })
}

fn stream(spec: &LoopSpec<'_>, purpose: Purpose, t: usize) -> StreamId {
    StreamId::new(spec.seed, spec.phase, purpose, t as u64)
}
