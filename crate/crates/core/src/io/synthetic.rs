//! Synthetic classification tasks whose signal lives in a low-dimensional frame.
//!
//! A random orthonormal frame `F` (`d_x x k*`) and class weights `W` (`classes x k*`) are
//! drawn from `frame_seed`. Each example draws latent `z ~ N(0, s² I)`, noise
//! `n ~ N(0, τ² I)` projected off the frame, and sets `x = F z + (I − F Fᵀ) n`,
//! `label = argmax W z`, flipped to a uniformly random other class at the label-noise rate.
//! Tasks sharing `frame_seed` share the informative frame.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, IoError};
use crate::linalg::{dot, modified_gram_schmidt};
use crate::models::{argmax, Example};
use crate::rng::{Phase, Purpose, StreamId};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub n_train: usize,
    pub n_val: usize,
    /// Size of an extra public split from the same distribution; 0 for none.
    pub n_public: usize,
    pub input_dim: usize,
    pub informative_dim: usize,
    pub num_classes: usize,
    pub label_noise: f64,
    /// Standard deviation of the latent signal coordinates.
    pub signal_scale: f64,
    /// Standard deviation of the off-frame noise coordinates.
    pub noise_scale: f64,
    pub frame_seed: u64,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_val: 1000,
            n_public: 0,
            input_dim: 512,
            informative_dim: 8,
            num_classes: 2,
            label_noise: 0.0,
            signal_scale: 1.0,
            noise_scale: 1.0,
            frame_seed: 0,
            seed: 0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), IoError> {
        let mut problems = Vec::new();
        if self.input_dim == 0 {
            problems.push("input_dim must be at least 1".to_string());
        }
        if self.informative_dim == 0 || self.informative_dim > self.input_dim {
            problems.push(format!("informative_dim must lie in [1, {}]", self.input_dim));
        }
        if self.num_classes < 2 {
            problems.push("num_classes must be at least 2".into());
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            problems.push(format!("label_noise must lie in [0, 0.5), got {}", self.label_noise));
        }
        if !(self.signal_scale > 0.0) || !(self.noise_scale >= 0.0) {
            problems.push("signal_scale must be positive and noise_scale nonnegative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(IoError::Dataset(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub train: Dataset,
    pub val: Dataset,
    pub public: Dataset,
}

struct Generator {
    frame: Vec<Vec<f64>>,
    class_weights: Vec<Vec<f64>>,
}

impl Generator {
    fn new(spec: &SyntheticTaskSpec) -> Self {
        let mut rng = StreamId::new(spec.frame_seed, Phase::Data, Purpose::Frame, 0).rng();
        let mut frame: Vec<Vec<f64>> = (0..spec.informative_dim)
            .map(|_| (0..spec.input_dim).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
            .collect();
        modified_gram_schmidt(&mut frame);
        modified_gram_schmidt(&mut frame);
        let class_weights = (0..spec.num_classes)
            .map(|_| (0..spec.informative_dim).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
            .collect();
        Self { frame, class_weights }
    }

    fn split(&self, spec: &SyntheticTaskSpec, counter: u64, n: usize) -> Dataset {
        let mut rng = StreamId::new(spec.seed, Phase::Data, Purpose::Examples, counter).rng();
        let d = spec.input_dim;
        let examples = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..spec.informative_dim)
                    .map(|_| spec.signal_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect();
                let mut noise: Vec<f64> =
                    (0..d).map(|_| spec.noise_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
                for f in &self.frame {
                    let c = dot(f, &noise);
                    noise.iter_mut().zip(f).for_each(|(n, fi)| *n -= c * fi);
                }
                let mut x = noise;
                for (f, zi) in self.frame.iter().zip(&z) {
                    x.iter_mut().zip(f).for_each(|(xi, fi)| *xi += zi * fi);
                }
                let scores: Vec<f64> = self.class_weights.iter().map(|w| dot(w, &z)).collect();
                let mut label = argmax(&scores);
                if rng.random::<f64>() < spec.label_noise {
                    let shift = rng.random_range(1..spec.num_classes);
                    label = (label + shift) % spec.num_classes;
                }
                Example::new(x, label)
            })
            .collect();
        Dataset::with_default_names(d, examples)
    }
}

/// Generates train, validation and (optionally empty) public splits; a pure function of `spec`.
pub fn gen_synthetic(spec: &SyntheticTaskSpec) -> Result<SyntheticTask, IoError> {
    spec.validate()?;
    let g = Generator::new(spec);
    Ok(SyntheticTask {
        train: g.split(spec, 0, spec.n_train),
        val: g.split(spec, 1, spec.n_val),
        public: g.split(spec, 2, spec.n_public),
    })
}
