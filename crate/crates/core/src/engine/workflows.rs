use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use super::config::RunConfig;
use super::report::{EvalRecord, RunReport, StageSummary, StepRecord};
use super::train::{run_loop, Accounting, LoopSpec, NoiseSpec};
use super::EngineError;
use crate::io::{self, Dataset, MetricsWriter, SyntheticTask};
use crate::models::{init_params, predict_accuracy, Example, ParameterVector};
use crate::privacy::{calibrate_sigma, check_delta, split_budget, RdpCurve};
use crate::rng::Phase;
use crate::subspace::{extract_subspace, recording_period, Extraction, ProjectionMatrix, TrajectoryRecorder};

/// Splits of one task. `public` is data assumed to carry no privacy cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub public: Option<Vec<Example>>,
}

impl TaskData {
    pub fn from_synthetic(name: impl Into<String>, task: SyntheticTask) -> Self {
        let public = (!task.public.is_empty()).then_some(task.public.examples);
        Self { name: name.into(), train: task.train.examples, val: task.val.examples, public }
    }

    /// Loads the splits named in `cfg.data`; train and val are required.
    pub fn load(cfg: &RunConfig) -> Result<Self, EngineError> {
        let load = |p: &Option<std::path::PathBuf>, what: &str| -> Result<Option<Dataset>, EngineError> {
            match p {
                Some(path) => Ok(Some(io::load_dataset(path)?)),
                None if what == "public" => Ok(None),
                None => Err(EngineError::Config(vec![format!("data.{what} is required")])),
            }
        };
        let train = load(&cfg.data.train, "train")?.unwrap_or_default();
        let val = load(&cfg.data.val, "val")?.unwrap_or_default();
        let public = load(&cfg.data.public, "public")?;
        // Unnamed data is called after its directory (`data/sst/train.csv` -> `sst`).
        let name = cfg.data.name.clone().unwrap_or_else(|| {
            let train = cfg.data.train.as_deref();
            let dir = train.and_then(|p| p.parent()).and_then(|d| d.file_name());
            dir.or_else(|| train.and_then(|p| p.file_stem()))
                .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned())
        });
        Ok(Self { name, train: train.examples, val: val.examples, public: public.map(|d| d.examples) })
    }

    fn check(&self, cfg: &RunConfig) -> Result<(), EngineError> {
        if self.train.is_empty() || self.val.is_empty() {
            return Err(EngineError::Data(format!("{}: train and val splits must be non-empty", self.name)));
        }
        let splits = [("train", Some(&self.train)), ("val", Some(&self.val)), ("public", self.public.as_ref())];
        for (split, examples) in splits {
            for (i, ex) in examples.into_iter().flatten().enumerate() {
                if ex.features.len() != cfg.model.input_dim {
                    return Err(EngineError::Data(format!(
                        "{split}[{i}] has {} features, model expects {}",
                        ex.features.len(),
                        cfg.model.input_dim
                    )));
                }
                if ex.label >= cfg.model.num_classes {
                    return Err(EngineError::Data(format!(
                        "{split}[{i}] has label {} but the model has {} classes",
                        ex.label, cfg.model.num_classes
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Final parameters, the subspace used (if any), and the run's report.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ParameterVector,
    pub projection: Option<ProjectionMatrix>,
    pub report: RunReport,
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub theta0: ParameterVector,
    pub theta_star: ParameterVector,
    pub extraction: Extraction,
    pub recorded_steps: Vec<usize>,
    /// Recorded rows `flat(Θ_t) − flat(Θ₀)`.
    pub trajectory: Vec<Vec<f64>>,
    pub report: RunReport,
}

/// Stage-1 data regime.
enum Stage1Source<'a> {
    /// Private training data under an `(ε₁, δ₁)` budget.
    Private { budget: (f64, f64) },
    /// Private training data with no noise (unbounded budget).
    Unbounded,
    /// Data that carries no privacy cost.
    Public(&'a [Example]),
}

/// Initialisation followed by the non-private warmup on the public split, when present.
pub fn initial_params(cfg: &RunConfig, data: &TaskData) -> Result<ParameterVector, EngineError> {
    let theta = init_params(&cfg.model, cfg.seed)?;
    match &data.public {
        Some(public) if cfg.train.warmup_steps > 0 && !public.is_empty() => {
            let mut spec = base_spec(cfg, Phase::Warmup, cfg.train.warmup_steps, "warmup");
            spec.eval_every = None;
            spec.clip_norm = None;
            spec.accounting = Accounting::Constant(0.0);
            Ok(run_loop(&cfg.model, theta, public, &[], &spec, None)?.params)
        }
        _ => Ok(theta),
    }
}

/// Non-private mini-batch Adam: no clipping, no noise.
pub fn nondp_train(cfg: &RunConfig, data: &TaskData) -> Result<TrainOutput, EngineError> {
    prepare(cfg, data)?;
    let clock = Instant::now();
    let theta0 = initial_params(cfg, data)?;
    let n = data.train.len();
    let mut spec = base_spec(cfg, Phase::Train, cfg.total_steps(n), "nondp");
    spec.eval_every = Some(cfg.steps_per_epoch(n));
    spec.clip_norm = None;
    let out = run_loop(&cfg.model, theta0, &data.train, &data.val, &spec, None)?;
    let stage = StageSummary {
        name: "train".into(),
        steps: spec.steps,
        sample_rate: cfg.sample_rate(n),
        sigma: 0.0,
        budget: None,
        epsilon_spent: None,
    };
    let report = assemble("nondp", cfg, data, out.steps, out.evals, vec![stage], &out.params, None, clock)?;
    Ok(TrainOutput { params: out.params, projection: None, report })
}

/// Full-space private training with the whole budget. Without a budget the noise is
/// zero but clipping stays.
pub fn dpsgd_train(cfg: &RunConfig, data: &TaskData) -> Result<TrainOutput, EngineError> {
    prepare(cfg, data)?;
    let clock = Instant::now();
    let theta0 = initial_params(cfg, data)?;
    let budget = cfg.privacy.epsilon.map(|e| (e, cfg.privacy.delta));
    let (out, stage) = private_phase(cfg, data, theta0, None, budget, 0, 0.0, "dpsgd")?;
    let report = assemble("dpsgd", cfg, data, out.steps, out.evals, vec![stage], &out.params, budget, clock)?;
    Ok(TrainOutput { params: out.params, projection: None, report })
}

/// Trajectory recording and subspace extraction. With `p1 > 0` the stage runs privately
/// on the training data under `(p1 ε, p1 δ)`; with `p1 = 0` it runs noise-free on the
/// public split (falling back to the training data, which is then reported as unbounded).
pub fn stage1_train(cfg: &RunConfig, data: &TaskData) -> Result<Stage1Output, EngineError> {
    prepare(cfg, data)?;
    let theta0 = initial_params(cfg, data)?;
    let source = stage1_source(cfg, data)?;
    stage1_inner(cfg, data, theta0, source, Instant::now())
}

/// Private training inside `span(P)` from `theta_star` under the stage-2 share of the budget.
pub fn stage2_train(
    cfg: &RunConfig,
    data: &TaskData,
    theta_star: ParameterVector,
    projection: &ProjectionMatrix,
) -> Result<TrainOutput, EngineError> {
    prepare(cfg, data)?;
    let clock = Instant::now();
    let budget = match cfg.privacy.epsilon {
        Some(e) => Some(split_budget(e, cfg.privacy.delta, cfg.privacy.p1)?.stage2),
        None => None,
    };
    let (out, stage) = private_phase(cfg, data, theta_star, Some(projection), budget, 0, 0.0, "stage2")?;
    let mut report =
        assemble("stage2", cfg, data, out.steps, out.evals, vec![stage], &out.params, budget, clock)?;
    report.subspace_dim = Some(projection.k());
    Ok(TrainOutput { params: out.params, projection: Some(projection.clone()), report })
}

/// Both stages with the budget split by `cfg.privacy.p1`.
pub fn pipeline(cfg: &RunConfig, data: &TaskData) -> Result<TrainOutput, EngineError> {
    prepare(cfg, data)?;
    let clock = Instant::now();
    let theta0 = initial_params(cfg, data)?;
    let source = stage1_source(cfg, data)?;
    let s1 = stage1_inner(cfg, data, theta0, source, clock)?;
    let stage2_budget = match cfg.privacy.epsilon {
        Some(e) => Some(split_budget(e, cfg.privacy.delta, cfg.privacy.p1)?.stage2),
        None => None,
    };
    let method = if cfg.privacy.p1 > 0.0 { "dpsft-noisy" } else { "dpsft" };
    two_stage_report(method, cfg, data, s1, stage2_budget, clock)
}

/// Trajectory recorded noise-free on a public source task, then private subspace
/// training on the target with the target's full budget. Also runs the in-domain
/// public-trajectory pipeline and full-space private training on the target for
/// comparison.
pub fn run_transfer(
    source_cfg: &RunConfig,
    source: &TaskData,
    target_cfg: &RunConfig,
    target: &TaskData,
) -> Result<TrainOutput, EngineError> {
    if source_cfg.model != target_cfg.model {
        return Err(EngineError::LayoutMismatch("source and target models differ".into()));
    }
    prepare(source_cfg, source)?;
    prepare(target_cfg, target)?;
    let clock = Instant::now();
    let theta0 = initial_params(source_cfg, source)?;
    let src_examples = source.public.as_deref().unwrap_or(&source.train);
    let s1 = stage1_inner(source_cfg, source, theta0, Stage1Source::Public(src_examples), clock)?;
    let budget = target_cfg.privacy.epsilon.map(|e| (e, target_cfg.privacy.delta));
    let mut out = two_stage_report("transfer", target_cfg, target, s1, budget, clock)?;

    let mut ideal_cfg = target_cfg.clone();
    ideal_cfg.privacy.p1 = 0.0;
    let ideal = pipeline(&ideal_cfg, target)?.report.final_accuracy;
    let fulldp = dpsgd_train(target_cfg, target)?.report.final_accuracy;
    let acc = out.report.final_accuracy;
    let extras = &mut out.report.extras;
    extras.insert("ideal_accuracy".into(), ideal);
    extras.insert("fulldp_accuracy".into(), fulldp);
    extras.insert("delta_vs_ideal".into(), acc - ideal);
    extras.insert("delta_vs_fulldp".into(), acc - fulldp);
    out.report.wall_clock_secs = clock.elapsed().as_secs_f64();
    Ok(out)
}

/// The pipeline with a private trajectory (`0 < p1 < 1`), compared against the
/// public-trajectory pipeline and full-space private training at the same total budget.
pub fn run_noisy_trajectory_ablation(cfg: &RunConfig, data: &TaskData) -> Result<TrainOutput, EngineError> {
    let p1 = cfg.privacy.p1;
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(EngineError::Config(vec![format!("ablation needs 0 < privacy.p1 < 1, got {p1}")]));
    }
    if cfg.privacy.epsilon.is_none() {
        return Err(EngineError::Config(vec!["ablation needs a finite privacy.epsilon".into()]));
    }
    let clock = Instant::now();
    let mut out = pipeline(cfg, data)?;
    let mut public_cfg = cfg.clone();
    public_cfg.privacy.p1 = 0.0;
    let public = pipeline(&public_cfg, data)?.report.final_accuracy;
    let fulldp = dpsgd_train(cfg, data)?.report.final_accuracy;
    let acc = out.report.final_accuracy;
    let extras = &mut out.report.extras;
    extras.insert("public_accuracy".into(), public);
    extras.insert("fulldp_accuracy".into(), fulldp);
    extras.insert("delta_vs_public".into(), acc - public);
    extras.insert("delta_vs_fulldp".into(), acc - fulldp);
    out.report.wall_clock_secs = clock.elapsed().as_secs_f64();
    Ok(out)
}

/// Appends the run's records to `metrics.jsonl` and writes `final.pv` and, when a
/// subspace was used, `projection.pm`.
pub fn write_run_outputs(dir: &Path, out: &TrainOutput) -> Result<(), EngineError> {
    std::fs::create_dir_all(dir).map_err(|e| io::IoError::File { path: dir.display().to_string(), source: e })?;
    let mut writer = MetricsWriter::append(&dir.join("metrics.jsonl"))?;
    for r in out.report.records() {
        writer.write(&r)?;
    }
    writer.flush()?;
    io::save_pvec(&dir.join("final.pv"), &out.params)?;
    if let Some(p) = &out.projection {
        io::save_pmat(&dir.join("projection.pm"), p)?;
    }
    Ok(())
}

fn prepare(cfg: &RunConfig, data: &TaskData) -> Result<(), EngineError> {
    cfg.validate()?;
    data.check(cfg)?;
    check_delta(cfg.privacy.delta, data.train.len());
    Ok(())
}

fn base_spec<'a>(cfg: &RunConfig, phase: Phase, steps: usize, label: &str) -> LoopSpec<'a> {
    LoopSpec {
        phase,
        seed: cfg.seed,
        steps,
        batch_size: cfg.train.batch_size,
        sampling: cfg.train.sampling,
        lr: cfg.train.lr,
        adam: cfg.train.adam,
        clip_norm: Some(cfg.privacy.clip_norm),
        noise: None,
        projection: None,
        eval_every: None,
        accounting: Accounting::Unbounded,
        step_offset: 0,
        label: label.to_string(),
    }
}

/// Calibrated σ and the matching accountant for a private phase over `n` examples.
fn calibrate(
    cfg: &RunConfig,
    n: usize,
    steps: usize,
    budget: Option<(f64, f64)>,
    epsilon_offset: f64,
) -> Result<(f64, Accounting), EngineError> {
    match budget {
        None => Ok((0.0, Accounting::Unbounded)),
        Some((eps, delta)) => {
            let q = cfg.sample_rate(n);
            let sigma = calibrate_sigma(eps, delta, q, steps as u64)?.sigma;
            let curve = RdpCurve::subsampled_gaussian(q, sigma)?;
            Ok((sigma, Accounting::Rdp { curve, delta, offset: epsilon_offset }))
        }
    }
}

/// Clipped, noised training on the private split, full-space or in `span(P)`.
#[allow(clippy::too_many_arguments)]
fn private_phase(
    cfg: &RunConfig,
    data: &TaskData,
    start: ParameterVector,
    projection: Option<&ProjectionMatrix>,
    budget: Option<(f64, f64)>,
    step_offset: usize,
    epsilon_offset: f64,
    label: &str,
) -> Result<(super::LoopOutcome, StageSummary), EngineError> {
    let n = data.train.len();
    let steps = cfg.total_steps(n);
    let (sigma, accounting) = calibrate(cfg, n, steps, budget, epsilon_offset)?;
    let mut spec = base_spec(cfg, Phase::Train, steps, label);
    spec.projection = projection;
    spec.noise = Some(NoiseSpec { sigma, mode: cfg.privacy.noise_mode });
    spec.eval_every = Some(cfg.steps_per_epoch(n));
    spec.accounting = accounting;
    spec.step_offset = step_offset;
    let out = run_loop(&cfg.model, start, &data.train, &data.val, &spec, None)?;
    let stage = StageSummary {
        name: label.to_string(),
        steps,
        sample_rate: cfg.sample_rate(n),
        sigma,
        budget,
        // This stage's own spend; step records carry the running total.
        epsilon_spent: out.steps.last().and_then(|s| s.epsilon_spent).map(|e| e - epsilon_offset),
    };
    Ok((out, stage))
}

fn stage1_source<'a>(cfg: &RunConfig, data: &'a TaskData) -> Result<Stage1Source<'a>, EngineError> {
    let p1 = cfg.privacy.p1;
    if p1 > 0.0 {
        return Ok(match cfg.privacy.epsilon {
            Some(e) => Stage1Source::Private { budget: split_budget(e, cfg.privacy.delta, p1)?.stage1 },
            None => Stage1Source::Unbounded,
        });
    }
    match &data.public {
        Some(public) if !public.is_empty() => Ok(Stage1Source::Public(public)),
        _ => {
            log::warn!("no public split: recording the trajectory on training data without noise");
            Ok(Stage1Source::Unbounded)
        }
    }
}

fn stage1_inner(
    cfg: &RunConfig,
    data: &TaskData,
    theta0: ParameterVector,
    source: Stage1Source<'_>,
    clock: Instant,
) -> Result<Stage1Output, EngineError> {
    let (examples, budget): (&[Example], Option<(f64, f64)>) = match &source {
        Stage1Source::Private { budget } => (&data.train, Some(*budget)),
        Stage1Source::Unbounded => (&data.train, None),
        Stage1Source::Public(ex) => (ex, None),
    };
    let n = examples.len();
    let steps = cfg.stage1_steps(n);
    let mut spec = base_spec(cfg, Phase::Stage1, steps, "stage1");
    spec.eval_every = Some(cfg.steps_per_epoch(n));
    let sigma = match &source {
        Stage1Source::Public(_) => {
            spec.clip_norm = None;
            spec.accounting = Accounting::Constant(0.0);
            0.0
        }
        _ => {
            let (sigma, accounting) = calibrate(cfg, n, steps, budget, 0.0)?;
            spec.noise = Some(NoiseSpec { sigma, mode: cfg.privacy.noise_mode });
            spec.accounting = accounting;
            sigma
        }
    };
    let mut recorder = TrajectoryRecorder::new(theta0.clone(), recording_period(steps, cfg.subspace.k), cfg.subspace.max_rows());
    let out = run_loop(&cfg.model, theta0.clone(), examples, &data.val, &spec, Some(&mut recorder))?;
    let fingerprint = format!("{}:stage1:{}", cfg.fingerprint(), data.name);
    let extraction = extract_subspace(&recorder.matrix()?, cfg.subspace.k, cfg.subspace.rel_tol, fingerprint)?;
    let stage = StageSummary {
        name: "stage1".into(),
        steps,
        sample_rate: cfg.sample_rate(n),
        sigma,
        budget,
        epsilon_spent: out.steps.last().and_then(|s| s.epsilon_spent),
    };
    let mut report = assemble("stage1", cfg, data, out.steps, out.evals, vec![stage], &out.params, budget, clock)?;
    report.subspace_dim = Some(extraction.projection.k());
    report.extras.insert("trajectory_rows".into(), recorder.rows().len() as f64);
    Ok(Stage1Output {
        theta0,
        theta_star: out.params,
        extraction,
        recorded_steps: recorder.recorded_steps().to_vec(),
        trajectory: recorder.rows().to_vec(),
        report,
    })
}

/// Runs stage 2 after `s1` and merges both stages into one report.
fn two_stage_report(
    method: &str,
    cfg: &RunConfig,
    data: &TaskData,
    s1: Stage1Output,
    stage2_budget: Option<(f64, f64)>,
    clock: Instant,
) -> Result<TrainOutput, EngineError> {
    let s1_spent = s1.report.epsilon_spent;
    let projection = s1.extraction.projection;
    let offset_steps = s1.report.steps.len();
    let (out, mut stage2) = private_phase(
        cfg,
        data,
        s1.theta_star,
        Some(&projection),
        stage2_budget,
        offset_steps,
        s1_spent.unwrap_or(0.0),
        "stage2",
    )?;
    let mut steps = s1.report.steps;
    let mut evals = s1.report.evals;
    // An unbounded first stage leaves the composition unbounded.
    let unbounded = s1_spent.is_none();
    steps.extend(out.steps.into_iter().map(|mut s| {
        if unbounded {
            s.epsilon_spent = None;
        }
        s
    }));
    evals.extend(out.evals.into_iter().map(|mut e| {
        if unbounded {
            e.epsilon_spent = None;
        }
        e
    }));
    if unbounded {
        stage2.epsilon_spent = None;
    }
    let mut stages = s1.report.stages;
    stages.push(stage2);
    let total_budget = cfg.privacy.epsilon.map(|e| (e, cfg.privacy.delta)).filter(|_| stage2_budget.is_some());
    let mut report = assemble(method, cfg, data, steps, evals, stages, &out.params, total_budget, clock)?;
    report.subspace_dim = Some(projection.k());
    report.extras.insert("p1".into(), cfg.privacy.p1);
    report.extras.insert("k_effective".into(), projection.k() as f64);
    report.extras.insert("trajectory_rows".into(), s1.report.extras["trajectory_rows"]);
    Ok(TrainOutput { params: out.params, projection: Some(projection), report })
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    method: &str,
    cfg: &RunConfig,
    data: &TaskData,
    steps: Vec<StepRecord>,
    evals: Vec<EvalRecord>,
    stages: Vec<StageSummary>,
    params: &ParameterVector,
    budget: Option<(f64, f64)>,
    clock: Instant,
) -> Result<RunReport, EngineError> {
    let final_accuracy = predict_accuracy(&cfg.model, params, &data.val)?;
    let epsilon_spent = steps.last().and_then(|s| s.epsilon_spent);
    Ok(RunReport {
        method: method.to_string(),
        dataset: data.name.clone(),
        seed: cfg.seed,
        steps,
        evals,
        stages,
        final_accuracy,
        epsilon_budget: budget.map(|b| b.0),
        delta: budget.map(|b| b.1),
        epsilon_spent,
        subspace_dim: None,
        config_fingerprint: cfg.fingerprint(),
        extras: BTreeMap::new(),
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    })
}
