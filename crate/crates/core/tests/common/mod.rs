//! Independent reference implementations used as test oracles, plus the shared
//! synthetic experiment setup.
#![allow(dead_code, clippy::needless_range_loop)]

use dpsft_core::engine::{RunConfig, TaskData};
use dpsft_core::io::{gen_synthetic, SyntheticTaskSpec};
use dpsft_core::models::{Activation, ModelKind, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenvalues of a small symmetric matrix by classical (largest off-diagonal) Jacobi.
pub fn sym_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 * n * n + 100 {
        let (mut p, mut q, mut big) = (0, 0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if a[i][j].abs() > big {
                    big = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        let scale: f64 = (0..n).map(|i| a[i][i].abs()).fold(1e-300, f64::max);
        if big <= 1e-15 * scale {
            break;
        }
        let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
        let (s, c) = theta.sin_cos();
        for k in 0..n {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = c * akp - s * akq;
            a[k][q] = s * akp + c * akq;
        }
        for k in 0..n {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

/// Thin SVD of the `m x d` matrix with the given rows via one-sided (Hestenes) Jacobi on
/// its transpose. Returns singular values (descending) and unit right singular vectors.
pub fn one_sided_jacobi_svd(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    // Columns of Aᵀ are the rows of A; orthogonalising them by right rotations gives
    // Aᵀ J = U Σ, so the right singular vectors of A are the normalised columns.
    let mut cols: Vec<Vec<f64>> = rows.to_vec();
    let m = cols.len();
    for _sweep in 0..200 {
        let mut rotated = false;
        for i in 0..m {
            for j in i + 1..m {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (ci, cj) = (cols[i].clone(), cols[j].clone());
                for k in 0..ci.len() {
                    cols[i][k] = c * ci[k] - s * cj[k];
                    cols[j][k] = s * ci[k] + c * cj[k];
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = cols
        .into_iter()
        .map(|c| {
            let s = norm(&c);
            let v = if s > 0.0 { c.iter().map(|x| x / s).collect() } else { c };
            (s, v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    pairs.into_iter().unzip()
}

/// `sin θ_max` between `span(a)` and `span(b)` (columns given as vectors, each
/// orthonormal): the largest singular value of `a − b bᵀ a`.
pub fn sin_max_principal_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let residual: Vec<Vec<f64>> = a
        .iter()
        .map(|ai| {
            let mut r = ai.clone();
            for bj in b {
                let c = dot(bj, ai);
                r.iter_mut().zip(bj).for_each(|(x, y)| *x -= c * y);
            }
            r
        })
        .collect();
    let gram: Vec<Vec<f64>> = residual.iter().map(|ri| residual.iter().map(|rj| dot(ri, rj)).collect()).collect();
    sym_eigenvalues(gram)[0].max(0.0).sqrt()
}

/// Orthonormal basis of the orthogonal complement of `span(cols)` in ℝᵈ.
pub fn complement_basis(cols: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = cols.to_vec();
    let mut out = Vec::new();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &e);
                e.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm(&e);
        if n > 1e-6 {
            e.iter_mut().for_each(|x| *x /= n);
            basis.push(e.clone());
            out.push(e);
        }
    }
    out
}

/// Forward pass over the canonical flat layout (per layer: weight `[out, in]` row-major,
/// then bias). Returns logits and every hidden pre-activation.
pub fn forward(spec: &ModelSpec, values: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dims = vec![spec.input_dim];
    if spec.kind == ModelKind::Mlp {
        dims.extend(&spec.hidden_dims);
    }
    dims.push(spec.num_classes);
    let mut offset = 0;
    let mut h = x.to_vec();
    let mut pre = Vec::new();
    for l in 0..dims.len() - 1 {
        let (din, dout) = (dims[l], dims[l + 1]);
        let w = &values[offset..offset + din * dout];
        let b = &values[offset + din * dout..offset + din * dout + dout];
        offset += din * dout + dout;
        let z: Vec<f64> = (0..dout).map(|o| dot(&w[o * din..(o + 1) * din], &h) + b[o]).collect();
        if l + 2 < dims.len() {
            pre.extend(&z);
            h = z
                .iter()
                .map(|&v| match spec.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                })
                .collect();
        } else {
            h = z;
        }
    }
    (h, pre)
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, 1e-4)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// One bias-corrected Adam step on a single coordinate.
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: i32,
}

impl ScalarAdam {
    pub fn step(&mut self, x: f64, g: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let mhat = self.m / (1.0 - b1.powi(self.t));
        let vhat = self.v / (1.0 - b2.powi(self.t));
        x - lr * mhat / (vhat.sqrt() + eps)
    }
}

/// The low-rank synthetic task used by the utility experiments: 512 features, 8 of
/// them informative, 5000 training examples and a 1000-example public split.
pub fn utility_task_spec(seed: u64) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        n_train: 5000,
        n_val: 1000,
        n_public: 1000,
        input_dim: 512,
        informative_dim: 8,
        num_classes: 2,
        label_noise: 0.0,
        signal_scale: 1.0,
        noise_scale: 0.3,
        frame_seed: 0,
        seed,
    }
}

pub fn utility_task(seed: u64) -> TaskData {
    TaskData::from_synthetic("synthetic", gen_synthetic(&utility_task_spec(seed)).unwrap())
}

/// Logistic regression with B = 32, C = 10, η = 5e-4, δ = 1e-5, k = 32.
pub fn utility_config(seed: u64, epsilon: f64) -> RunConfig {
    let mut cfg = RunConfig::new(ModelSpec::logistic_regression(512, 2));
    cfg.seed = seed;
    cfg.privacy.epsilon = Some(epsilon);
    cfg.privacy.delta = 1e-5;
    cfg.privacy.clip_norm = 10.0;
    cfg.train.batch_size = 32;
    cfg.train.lr = 5e-4;
    cfg.train.epochs = 3;
    cfg.train.warmup_steps = 50;
    cfg.subspace.k = 32;
    cfg.subspace.stage1_epochs = 1;
    cfg
}

/// A tiny labelled dataset for exact-equality checks.
pub fn tiny_task(seed: u64, n: usize, input_dim: usize, classes: usize) -> TaskData {
    let mut r = rng(seed);
    let mk = |r: &mut ChaCha8Rng, n: usize| {
        (0..n)
            .map(|_| dpsft_core::Example::new(gaussian_vec(r, input_dim), r.random_range(0..classes)))
            .collect::<Vec<_>>()
    };
    let train = mk(&mut r, n);
    let val = mk(&mut r, n / 2 + 1);
    TaskData { name: "tiny".into(), train, val, public: None }
}
