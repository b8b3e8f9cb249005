//! Acceptance suite: ten criteria, one PASS/FAIL line each. Exits non-zero on any failure.

mod common;

use std::time::{Duration, Instant};

use common::*;
use dpsft_core::engine::{
    dpsgd_train, initial_params, nondp_train, pipeline, run_noisy_trajectory_ablation, run_transfer, stage2_train,
    TaskData,
};
use dpsft_core::io::{self, gen_synthetic, SyntheticTaskSpec};
use dpsft_core::linalg::{orthonormality_defect, DenseMatrix};
use dpsft_core::models::{init_params, per_example_losses_and_grads, Activation, ModelSpec, ParameterVector};
use dpsft_core::privacy::{calibrate_sigma, epsilon_spent, Conversion};
use dpsft_core::rng::{Phase, Purpose, StreamId};
use dpsft_core::subspace::{extract_subspace, random_orthonormal_basis, ProjectionMatrix};
use rand::Rng;

const SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Name, time limit in seconds, check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("projection algebra", 10, projection_algebra),
        ("svd oracle equivalence", 30, svd_oracle),
        ("gradient correctness", 10, gradient_correctness),
        ("accountant round trip", 60, accountant_round_trip),
        ("reduction to dp-sgd", 5, reduction_to_dpsgd),
        ("utility ordering", 300, utility_ordering),
        ("short trajectory", 300, short_trajectory),
        ("noisy trajectory ordering", 600, noisy_trajectory_ordering),
        ("transfer ordering", 600, transfer_ordering),
        ("determinism", 60, determinism),
    ];
    let mut failures = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        let in_time = elapsed < Duration::from_secs(*limit);
        let pass = out.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {:<26} {}  {} [{:.1}s / {}s]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            limit
        );
    }
    if failures > 0 {
        eprintln!("{failures} criteria failed");
        std::process::exit(1);
    }
}

fn cols(p: &ProjectionMatrix) -> Vec<Vec<f64>> {
    (0..p.k()).map(|j| p.columns().column(j)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn projection_algebra() -> Outcome {
    let mut r = rng(1);
    let mut worst = [0.0f64; 4];
    for case in 0..1000u64 {
        let d = r.random_range(2..=48);
        let k = r.random_range(1..=d);
        let p = if case % 2 == 0 {
            random_orthonormal_basis(d, k, StreamId::new(case, Phase::Init, Purpose::Frame, 0)).unwrap()
        } else {
            let m = r.random_range(k..=k + 4);
            let rows: Vec<Vec<f64>> = (0..m).map(|_| gaussian_vec(&mut r, d)).collect();
            extract_subspace(&DenseMatrix::from_rows(&rows).unwrap(), k, 1e-10, "t").unwrap().projection
        };
        let k = p.k();
        worst[0] = worst[0].max(p.orthonormality_defect());

        let s = gaussian_vec(&mut r, k);
        worst[1] = worst[1].max(max_abs_diff(&p.project_down(&p.project_up(&s).unwrap()).unwrap(), &s));

        let g = gaussian_vec(&mut r, d);
        let once = p.project_up(&p.project_down(&g).unwrap()).unwrap();
        let twice = p.project_up(&p.project_down(&once).unwrap()).unwrap();
        worst[2] = worst[2].max(max_abs_diff(&once, &twice));

        let mut noisy = p.project_down(&g).unwrap();
        noisy.iter_mut().for_each(|x| *x += 3.0 * r.random::<f64>() - 1.5);
        let back = p.project_up(&noisy).unwrap();
        let scale = back.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        for c in complement_basis(&cols(&p), d) {
            let leak: f64 = c.iter().zip(&back).map(|(a, b)| a * b).sum();
            worst[3] = worst[3].max(leak.abs() / scale);
        }
    }
    let pass = worst[0] < 1e-8 && worst[1] < 1e-10 && worst[2] < 1e-10 && worst[3] < 1e-9;
    check(
        pass,
        format!(
            "defect {:.1e}, down.up {:.1e}, idempotence {:.1e}, span leak {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn svd_oracle() -> Outcome {
    let mut r = rng(2);
    let (mut worst_angle, mut worst_recon) = (0.0f64, 0.0f64);
    for case in 0..100 {
        // d >= m keeps the trajectory full row rank, so the discarded tail is non-zero.
        let d = r.random_range(16..=200);
        let m = r.random_range(2..=16);
        let k = r.random_range(1..m);
        // Alternate i.i.d. rows with random-walk trajectories.
        let mut rows: Vec<Vec<f64>> = (0..m).map(|_| gaussian_vec(&mut r, d)).collect();
        if case % 2 == 1 {
            for i in 1..m {
                let prev = rows[i - 1].clone();
                rows[i].iter_mut().zip(prev).for_each(|(x, p)| *x += p);
            }
        }
        let a = DenseMatrix::from_rows(&rows).unwrap();
        let ex = extract_subspace(&a, k, 1e-10, "t").unwrap();
        let (sv, vecs) = one_sided_jacobi_svd(&rows);
        let angle = sin_max_principal_angle(&cols(&ex.projection), &vecs[..k]);
        worst_angle = worst_angle.max(angle);

        let p = &ex.projection;
        let residual: f64 = rows
            .iter()
            .map(|row| {
                let back = p.project_up(&p.project_down(row).unwrap()).unwrap();
                row.iter().zip(&back).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum();
        let tail: f64 = sv[k..].iter().map(|s| s * s).sum();
        worst_recon = worst_recon.max((residual - tail).abs() / tail);
    }
    check(
        worst_angle < 1e-6 && worst_recon < 1e-6,
        format!("max sin(angle) {worst_angle:.1e}, reconstruction rel err {worst_recon:.1e}"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut triples = 0;
    while triples < 20 {
        let input_dim = r.random_range(1..=6);
        let classes = r.random_range(2..=4);
        let spec = match triples % 3 {
            0 => ModelSpec::logistic_regression(input_dim, classes),
            1 => ModelSpec::mlp(input_dim, vec![r.random_range(1..=5)], classes, Activation::Tanh),
            _ => ModelSpec::mlp(input_dim, vec![r.random_range(2..=5), r.random_range(2..=4)], classes, Activation::Relu),
        };
        let layout = std::sync::Arc::new(spec.layout());
        let theta = uniform_vec(&mut r, spec.param_count(), 1.0);
        let x = gaussian_vec(&mut r, input_dim);
        let label = r.random_range(0..classes);
        // Keep ReLU pre-activations away from the kink so differences are smooth.
        let (_, pre) = forward(&spec, &theta, &x);
        if spec.activation == Activation::Relu && pre.iter().any(|z| z.abs() < 1e-3) {
            continue;
        }
        let params = ParameterVector::new(layout, theta.clone()).unwrap();
        let ex = dpsft_core::Example::new(x.clone(), label);
        let (_, grad) = per_example_losses_and_grads(&spec, &params, &[&ex]).unwrap().remove(0);
        let fd = central_fd(|t| cross_entropy(&forward(&spec, t, &x).0, label), &theta, 1e-6);
        for (a, b) in grad.iter().zip(&fd) {
            worst = worst.max(rel_err(*a, *b));
        }
        triples += 1;
    }
    check(worst < 1e-5, format!("max rel err {worst:.1e} over 20 triples"))
}

fn accountant_round_trip() -> Outcome {
    let epsilons = [0.5, 1.0, 4.0, 8.0];
    let deltas = [1e-5, 1e-6];
    let qs = [0.005, 0.01, 0.05];
    let ts = [100u64, 1000, 5000];
    let mut bad = Vec::new();
    let mut worst_ratio = f64::INFINITY;
    let mut sigma = std::collections::HashMap::new();
    for &eps in &epsilons {
        for &delta in &deltas {
            for &q in &qs {
                for &t in &ts {
                    let cal = calibrate_sigma(eps, delta, q, t).unwrap();
                    let (spent, _) = epsilon_spent(q, cal.sigma, t, delta, Conversion::Improved).unwrap();
                    worst_ratio = worst_ratio.min(spent / eps);
                    if !(spent <= eps && spent >= 0.98 * eps) {
                        bad.push(format!("eps'={spent} at ({eps},{delta},{q},{t})"));
                    }
                    sigma.insert((eps.to_bits(), delta.to_bits(), q.to_bits(), t), cal.sigma);
                }
            }
        }
    }
    for &delta in &deltas {
        for &q in &qs {
            for w in ts.windows(2) {
                for &eps in &epsilons {
                    let key = |t| (eps.to_bits(), delta.to_bits(), q.to_bits(), t);
                    if sigma[&key(w[0])] > sigma[&key(w[1])] {
                        bad.push(format!("sigma not monotone in T at ({eps},{delta},{q})"));
                    }
                }
            }
            for &t in &ts {
                for w in epsilons.windows(2) {
                    let key = |e: f64| (e.to_bits(), delta.to_bits(), q.to_bits(), t);
                    if sigma[&key(w[0])] < sigma[&key(w[1])] {
                        bad.push(format!("sigma not monotone in 1/eps at ({delta},{q},{t})"));
                    }
                }
            }
        }
    }
    let single = calibrate_sigma(1.0, 1e-5, 1.0, 1).unwrap().sigma;
    if single > 4.845 {
        bad.push(format!("sigma(q=1,T=1) = {single}"));
    }
    check(
        bad.is_empty(),
        format!("72 calibrations, min eps'/eps {worst_ratio:.4}, sigma(q=1,T=1) {single:.4}{}", summarize(&bad)),
    )
}

fn summarize(bad: &[String]) -> String {
    if bad.is_empty() {
        String::new()
    } else {
        format!("; {} violations, first: {}", bad.len(), bad[0])
    }
}

fn reduction_to_dpsgd() -> Outcome {
    let data = tiny_task(5, 40, 3, 3);
    let mut cfg = dpsft_core::RunConfig::new(ModelSpec::mlp(3, vec![4], 3, Activation::Tanh));
    cfg.privacy.epsilon = None;
    cfg.privacy.clip_norm = 0.5;
    cfg.train.steps = Some(3);
    cfg.train.batch_size = 8;
    cfg.train.sampling = dpsft_core::engine::Sampling::Fixed;
    cfg.train.lr = 0.05;
    cfg.subspace.k = cfg.model.param_count();
    cfg.seed = 11;
    let d = cfg.model.param_count();
    let full = dpsgd_train(&cfg, &data).unwrap();
    let theta0 = initial_params(&cfg, &data).unwrap();
    let mut worst = 0.0f64;
    for basis in [ProjectionMatrix::identity(d), random_orthonormal_basis(d, d, StreamId::new(9, Phase::Init, Purpose::Frame, 0)).unwrap()] {
        let sub = stage2_train(&cfg, &data, theta0.clone(), &basis).unwrap();
        worst = worst.max(max_abs_diff(sub.params.values(), full.params.values()));
    }
    let moved = max_abs_diff(full.params.values(), theta0.values());
    check(worst < 1e-9 && moved > 1e-3, format!("max coordinate diff {worst:.1e} (d = {d}, moved {moved:.2e})"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn utility_ordering() -> Outcome {
    let (mut nondp, mut full, mut sft) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let data = utility_task(seed);
        let cfg = utility_config(seed, 1.0);
        nondp.push(nondp_train(&cfg, &data).unwrap().report.final_accuracy);
        full.push(dpsgd_train(&cfg, &data).unwrap().report.final_accuracy);
        sft.push(pipeline(&cfg, &data).unwrap().report.final_accuracy);
    }
    let (n, f, s) = (mean(&nondp), mean(&full), mean(&sft));
    check(
        s - f >= 0.05 && n > s && n > f,
        format!("eps=1, 5 seeds: non-private {n:.4}, DP-SFT {s:.4}, Full-DP {f:.4} (gap {:+.2} pts)", 100.0 * (s - f)),
    )
}

fn short_trajectory() -> Outcome {
    let (mut one, mut four) = (Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let data = utility_task(seed);
        let mut cfg = utility_config(seed, 1.0);
        one.push(pipeline(&cfg, &data).unwrap().report.final_accuracy);
        cfg.subspace.stage1_epochs = 4;
        four.push(pipeline(&cfg, &data).unwrap().report.final_accuracy);
    }
    let (a, b) = (mean(&one), mean(&four));
    check((a - b).abs() <= 0.02, format!("1-epoch {a:.4} vs 4-epoch {b:.4} ({:+.2} pts)", 100.0 * (a - b)))
}

fn noisy_trajectory_ordering() -> Outcome {
    let (mut full, mut noisy, mut public) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let data = utility_task(seed);
        let mut cfg = utility_config(seed, 4.0);
        cfg.privacy.p1 = 0.75;
        let report = run_noisy_trajectory_ablation(&cfg, &data).unwrap().report;
        noisy.push(report.final_accuracy);
        full.push(report.extra("fulldp_accuracy").unwrap());
        public.push(report.extra("public_accuracy").unwrap());
    }
    let (f, n, p) = (mean(&full), mean(&noisy), mean(&public));
    check(
        f <= n && n <= p && p - f >= 0.03,
        format!("eps=4, p1=0.75: Full-DP {f:.4} <= noisy {n:.4} <= public {p:.4}"),
    )
}

/// A related public task: same informative frame and labelling rule, different noise
/// features, noise level and label noise.
fn transfer_source(seed: u64) -> TaskData {
    let spec = SyntheticTaskSpec { seed: 1000 + seed, noise_scale: 0.5, label_noise: 0.1, ..utility_task_spec(seed) };
    TaskData::from_synthetic("synthetic-source", gen_synthetic(&spec).unwrap())
}

fn transfer_ordering() -> Outcome {
    let (mut transfer, mut ideal, mut full) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let target = utility_task(seed);
        let source = transfer_source(seed);
        let cfg = utility_config(seed, 4.0);
        let report = run_transfer(&cfg, &source, &cfg, &target).unwrap().report;
        transfer.push(report.final_accuracy);
        ideal.push(report.extra("ideal_accuracy").unwrap());
        full.push(report.extra("fulldp_accuracy").unwrap());
    }
    let (t, i, f) = (mean(&transfer), mean(&ideal), mean(&full));
    check(
        t - f >= 0.05 && i - t <= 0.05,
        format!("eps=4: transfer {t:.4}, same-task {i:.4}, Full-DP {f:.4}"),
    )
}

fn determinism() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut problems = Vec::new();
    pool.install(|| {
        let data = utility_task(7);
        let mut cfg = utility_config(7, 1.0);
        cfg.train.epochs = 1;
        cfg.privacy.p1 = 0.5;
        let runs = [
            ("nondp", nondp_train as fn(&_, &_) -> _),
            ("dpsgd", dpsgd_train),
            ("pipeline", pipeline),
        ];
        for (name, f) in runs {
            let a = f(&cfg, &data).unwrap();
            let b = f(&cfg, &data).unwrap();
            let lines = |o: &dpsft_core::engine::TrainOutput| {
                let mut r = o.report.records();
                r.pop(); // timing
                r.into_iter().map(|r| r.to_line()).collect::<Vec<_>>()
            };
            if lines(&a) != lines(&b) || a.params != b.params {
                problems.push(format!("{name} differs between reruns"));
            }
            let pv = io::decode_pvec(&io::encode_pvec(&a.params)).unwrap();
            if pv.values().iter().zip(a.params.values()).any(|(x, y)| x.to_bits() != y.to_bits()) || pv.layout() != a.params.layout() {
                problems.push(format!("{name}: parameter vector round trip not bitwise"));
            }
            if let Some(p) = &a.projection {
                let back = io::decode_pmat(&io::encode_pmat(p)).unwrap();
                let same = back.columns().data().iter().zip(p.columns().data()).all(|(x, y)| x.to_bits() == y.to_bits());
                if !same || back.fingerprint() != p.fingerprint() || orthonormality_defect(back.columns()) >= 1e-8 {
                    problems.push(format!("{name}: projection round trip not bitwise"));
                }
            }
        }
        let spec = ModelSpec::mlp(5, vec![3], 2, Activation::Relu);
        if init_params(&spec, 3).unwrap() != init_params(&spec, 3).unwrap() {
            problems.push("init not deterministic".into());
        }
    });
    check(problems.is_empty(), format!("3 workflows rerun single-threaded, binary round trips{}", summarize(&problems)))
}
