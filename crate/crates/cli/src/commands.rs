use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use dpsft_core::engine::{self, EngineError, TaskData, TrainOutput};
use dpsft_core::io::{self, KvConfig, SyntheticTaskSpec};
use dpsft_core::privacy::{calibrate_sigma_with, Conversion};
use dpsft_core::RunConfig;

use crate::{CalibrateArgs, Cli, Command, GenDataArgs, TransferArgs, UsageError};

pub const OUTPUT_ROOT_ENV: &str = "DPSFT_OUTPUT_ROOT";

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Calibrate(args) => calibrate(args),
        Command::GenData(args) => gen_data(cli, args),
        Command::Report(args) => crate::report::run(args),
        Command::Transfer(args) => transfer(cli, args),
        Command::Nondp => train(cli, "nondp", engine::nondp_train),
        Command::Dpsgd => train(cli, "dpsgd", engine::dpsgd_train),
        Command::Pipeline => train(cli, "pipeline", engine::pipeline),
        Command::AblateNoisy => train(cli, "ablate-noisy", engine::run_noisy_trajectory_ablation),
        Command::Stage1 => train(cli, "stage1", |cfg, data| {
            let s1 = engine::stage1_train(cfg, data)?;
            Ok(TrainOutput { params: s1.theta_star, projection: Some(s1.extraction.projection), report: s1.report })
        }),
        Command::Stage2 => train(cli, "stage2", stage2),
    }
}

pub fn is_usage_error(e: &anyhow::Error) -> bool {
    e.downcast_ref::<UsageError>().is_some() || matches!(e.downcast_ref::<EngineError>(), Some(EngineError::Config(_)))
}

fn usage(msg: impl std::fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let conversion = match args.conversion.as_str() {
        "improved" => Conversion::Improved,
        "classic" => Conversion::Classic,
        other => return Err(usage(format!("unknown conversion `{other}` (expected improved or classic)"))),
    };
    let cal = calibrate_sigma_with(args.epsilon, args.delta, args.q, args.steps, conversion).map_err(|e| match e {
        dpsft_core::privacy::PrivacyError::InvalidParameter(m) => usage(m),
        other => other.into(),
    })?;
    println!("sigma={} epsilon={} alpha={}", cal.sigma, cal.epsilon, cal.best_alpha);
    Ok(())
}

fn gen_data(cli: &Cli, args: &GenDataArgs) -> Result<()> {
    let spec = SyntheticTaskSpec {
        n_train: args.n_train,
        n_val: args.n_val,
        n_public: args.n_public,
        input_dim: args.input_dim,
        informative_dim: args.informative_dim,
        num_classes: args.classes,
        label_noise: args.label_noise,
        signal_scale: args.signal_scale,
        noise_scale: args.noise_scale,
        frame_seed: args.frame_seed,
        seed: cli.seed.unwrap_or(0),
    };
    spec.validate().map_err(usage)?;
    let task = io::gen_synthetic(&spec)?;
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut splits = vec![("train", &task.train), ("val", &task.val)];
    if !task.public.is_empty() {
        splits.push(("public", &task.public));
    }
    for (name, data) in splits {
        let path = dir.join(format!("{name}.csv"));
        io::save_dataset(&path, data)?;
        println!("{}", path.display());
    }
    Ok(())
}

/// Config file, `--set` overrides, `--seed` and `--out`.
fn base_kv(cli: &Cli, path: Option<&Path>, apply_out: bool) -> Result<KvConfig> {
    let mut kv = match path {
        Some(p) => KvConfig::load(p).map_err(usage)?,
        None => KvConfig::new(),
    };
    for o in &cli.overrides {
        kv.apply_override(o).map_err(usage)?;
    }
    if let Some(seed) = cli.seed {
        kv.set("seed", seed.to_string());
    }
    if let (true, Some(out)) = (apply_out, &cli.out) {
        kv.set("output", out.display().to_string());
    }
    Ok(kv)
}

fn load_config(cli: &Cli, path: Option<&Path>, apply_out: bool) -> Result<(RunConfig, TaskData)> {
    resolve(base_kv(cli, path, apply_out)?)
}

/// Builds the run config, filling model dimensions from the training data when absent.
fn resolve(mut kv: KvConfig) -> Result<(RunConfig, TaskData)> {
    let needs_dims = kv.get("model.input_dim").is_none() || kv.get("model.num_classes").is_none();
    if needs_dims {
        if let Some(train) = kv.get("data.train").filter(|s| !s.is_empty()) {
            let ds = io::load_dataset(Path::new(train))?;
            if kv.get("model.input_dim").is_none() {
                kv.set("model.input_dim", ds.input_dim().to_string());
            }
            if kv.get("model.num_classes").is_none() {
                let mut classes = ds.num_classes();
                if let Some(val) = kv.get("data.val").filter(|s| !s.is_empty()) {
                    classes = classes.max(io::load_dataset(Path::new(val))?.num_classes());
                }
                kv.set("model.num_classes", classes.max(2).to_string());
            }
        }
    }
    let cfg = RunConfig::from_kv(&kv)?;
    let data = TaskData::load(&cfg)?;
    Ok((cfg, data))
}

fn output_dir(cfg: &RunConfig, command: &str) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!("{command}-{}", cfg.fingerprint()))
    })
}

fn set_threads(n: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
}

/// Echoes the effective config, runs `workflow`, and writes metrics and checkpoints.
fn train(cli: &Cli, command: &str, workflow: impl Fn(&RunConfig, &TaskData) -> Result<TrainOutput, EngineError>) -> Result<()> {
    let (mut cfg, data) = load_config(cli, cli.config.as_deref(), true)?;
    let dir = output_dir(&cfg, command);
    cfg.output = Some(dir.clone());
    run_and_write(&cfg, &dir, || workflow(&cfg, &data))
}

fn run_and_write(cfg: &RunConfig, dir: &Path, run: impl FnOnce() -> Result<TrainOutput, EngineError>) -> Result<()> {
    set_threads(cfg.threads);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let config_path = dir.join("effective_config.txt");
    std::fs::write(&config_path, cfg.to_kv().to_text()).with_context(|| format!("writing {}", config_path.display()))?;
    let versions = format!(
        "dpsft = {}\nparameter_vector = {}\nprojection_matrix = {}\n",
        env!("CARGO_PKG_VERSION"),
        String::from_utf8_lossy(io::PVEC_MAGIC),
        String::from_utf8_lossy(io::PMAT_MAGIC)
    );
    std::fs::write(dir.join("versions.txt"), versions).with_context(|| format!("writing {}", dir.display()))?;
    log::info!("writing to {}", dir.display());
    let out = run()?;
    engine::write_run_outputs(dir, &out)?;
    println!("{}", out.report.summary_record().to_line());
    Ok(())
}

fn stage2(cfg: &RunConfig, data: &TaskData) -> Result<TrainOutput, EngineError> {
    let missing = |key: &str| EngineError::Config(vec![format!("{key} is required for stage2")]);
    let ckpt = cfg.subspace.checkpoint.as_ref().ok_or_else(|| missing("subspace.checkpoint"))?;
    let pm = cfg.subspace.projection.as_ref().ok_or_else(|| missing("subspace.projection"))?;
    let theta = io::load_pvec(ckpt)?;
    if **theta.layout() != cfg.model.layout() {
        return Err(EngineError::LayoutMismatch(format!("{} does not match the configured model", ckpt.display())));
    }
    let projection = io::load_pmat(pm)?;
    engine::stage2_train(cfg, data, theta, &projection)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn transfer_side(cli: &Cli, path: &Path, is_source: bool) -> Result<(RunConfig, TaskData)> {
    if !is_csv(path) {
        return load_config(cli, Some(path), !is_source);
    }
    let mut kv = base_kv(cli, cli.config.as_deref(), !is_source)?;
    kv.set("data.train", path.display().to_string());
    if is_source {
        kv.set("data.public", "");
        let stem = path.file_stem().map_or_else(|| "source".into(), |s| s.to_string_lossy().into_owned());
        kv.set("data.name", stem);
    }
    resolve(kv)
}

fn transfer(cli: &Cli, args: &TransferArgs) -> Result<()> {
    let (source_cfg, source) = transfer_side(cli, &args.source, true).context("source task")?;
    let (mut target_cfg, target) = transfer_side(cli, &args.target, false).context("target task")?;
    if source_cfg.model != target_cfg.model {
        return Err(anyhow!(EngineError::LayoutMismatch("source and target models differ".into())));
    }
    let dir = output_dir(&target_cfg, "transfer");
    target_cfg.output = Some(dir.clone());
    run_and_write(&target_cfg, &dir, || engine::run_transfer(&source_cfg, &source, &target_cfg, &target))
}
