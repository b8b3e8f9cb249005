//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use dpsft_core::models::{ModelSpec, ParameterVector};
use dpsft_core::{DenseMatrix, Example};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// An `m x d` random-walk trajectory, shaped like recorded parameter offsets.
pub fn trajectory(m: usize, d: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut cur = vec![0.0; d];
    for _ in 0..m {
        cur.iter_mut().zip(uniform(&mut rng, d)).for_each(|(x, s)| *x += s);
        rows.push(cur.clone());
    }
    DenseMatrix::from_rows(&rows).expect("rectangular")
}

/// Random parameters for `spec` and a batch of `n` labelled examples.
pub fn batch(spec: &ModelSpec, n: usize, seed: u64) -> (ParameterVector, Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ParameterVector::new(Arc::new(spec.layout()), uniform(&mut rng, spec.param_count()))
        .expect("length matches layout");
    let examples = (0..n)
        .map(|_| Example::new(uniform(&mut rng, spec.input_dim), rng.random_range(0..spec.num_classes)))
        .collect();
    (params, examples)
}

pub fn vector(d: usize, seed: u64) -> Vec<f64> {
    uniform(&mut ChaCha8Rng::seed_from_u64(seed), d)
}
