use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::EngineError;
use crate::io::KvConfig;
use crate::mechanism::AdamConfig;
use crate::models::{Activation, ModelKind, ModelSpec};
use crate::privacy::NoiseScaleMode;

/// How each step's batch is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Each example joins independently with probability `q = B/n`; the batch size is `B`
    /// only in expectation. Matches the accountant's assumptions.
    #[default]
    Poisson,
    /// Exactly `B` examples without replacement. The accountant's Poisson analysis does
    /// not strictly cover this mode.
    Fixed,
}

impl Sampling {
    pub fn as_str(self) -> &'static str {
        match self {
            Sampling::Poisson => "poisson",
            Sampling::Fixed => "fixed",
        }
    }
}

impl FromStr for Sampling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "poisson" => Ok(Sampling::Poisson),
            "fixed" => Ok(Sampling::Fixed),
            other => Err(format!("unknown sampling mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub public: Option<PathBuf>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub sampling: Sampling,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Non-private steps on the public split that produce the starting point.
    pub warmup_steps: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 3,
            steps: None,
            batch_size: 32,
            sampling: Sampling::Poisson,
            lr: 5e-4,
            adam: AdamConfig::default(),
            warmup_steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySettings {
    /// Total budget; `None` trains the private algorithms with zero noise.
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub clip_norm: f64,
    pub noise_mode: NoiseScaleMode,
    /// Fraction of the budget spent on trajectory recording; 0 makes it a public step.
    pub p1: f64,
}

impl Default for PrivacySettings {
    fn default() -> Self {
        Self { epsilon: Some(1.0), delta: 1e-5, clip_norm: 10.0, noise_mode: NoiseScaleMode::StandardMean, p1: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSettings {
    pub k: usize,
    pub stage1_epochs: usize,
    pub stage1_steps: Option<usize>,
    /// Trajectory row cap; defaults to `k`.
    pub max_rows: Option<usize>,
    pub rel_tol: f64,
    /// Stage-2 starting parameters, for running stage 2 on its own.
    pub checkpoint: Option<PathBuf>,
    /// Projection file, for running stage 2 on its own.
    pub projection: Option<PathBuf>,
}

impl Default for SubspaceSettings {
    fn default() -> Self {
        Self {
            k: 32,
            stage1_epochs: 1,
            stage1_steps: None,
            max_rows: None,
            rel_tol: crate::linalg::DEFAULT_REL_TOL,
            checkpoint: None,
            projection: None,
        }
    }
}

impl SubspaceSettings {
    pub fn max_rows(&self) -> usize {
        self.max_rows.unwrap_or(self.k)
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub data: DataPaths,
    pub train: TrainSettings,
    pub privacy: PrivacySettings,
    pub subspace: SubspaceSettings,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub threads: usize,
}

impl RunConfig {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model,
            data: DataPaths::default(),
            train: TrainSettings::default(),
            privacy: PrivacySettings::default(),
            subspace: SubspaceSettings::default(),
            seed: 0,
            output: None,
            threads: 1,
        }
    }

    /// Number of steps for a pass over `n` examples at the configured batch size.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.train.batch_size.max(1)).max(1)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.train.steps.unwrap_or(self.train.epochs * self.steps_per_epoch(n))
    }

    pub fn stage1_steps(&self, n: usize) -> usize {
        self.subspace.stage1_steps.unwrap_or(self.subspace.stage1_epochs * self.steps_per_epoch(n))
    }

    /// `q = B / n`.
    pub fn sample_rate(&self, n: usize) -> f64 {
        (self.train.batch_size as f64 / n.max(1) as f64).min(1.0)
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<(), EngineError> {
        let mut errs = Vec::new();
        if let Err(e) = self.model.validate() {
            errs.push(e.to_string());
        }
        if self.train.batch_size == 0 {
            errs.push("train.batch_size must be at least 1".into());
        }
        if !(self.train.lr > 0.0) {
            errs.push("train.lr must be positive".into());
        }
        if self.train.steps == Some(0) || (self.train.steps.is_none() && self.train.epochs == 0) {
            errs.push("training needs at least one step".into());
        }
        let AdamConfig { beta1, beta2, eps_hat } = self.train.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps_hat > 0.0) {
            errs.push("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        if let Some(eps) = self.privacy.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                errs.push(format!("privacy.epsilon must be positive, got {eps}"));
            }
        }
        if !(self.privacy.delta > 0.0 && self.privacy.delta < 1.0) {
            errs.push(format!("privacy.delta must lie in (0, 1), got {}", self.privacy.delta));
        }
        if !(self.privacy.clip_norm > 0.0) {
            errs.push("privacy.clip must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.privacy.p1) {
            errs.push(format!("privacy.p1 must lie in [0, 1], got {}", self.privacy.p1));
        } else if self.privacy.p1 == 1.0 && self.privacy.epsilon.is_some() {
            errs.push("privacy.p1 = 1 leaves no budget for stage 2".into());
        }
        if self.subspace.k == 0 {
            errs.push("subspace.k must be at least 1".into());
        } else if self.subspace.k > self.model.param_count() && self.model.validate().is_ok() {
            errs.push(format!("subspace.k = {} exceeds parameter count {}", self.subspace.k, self.model.param_count()));
        }
        if self.subspace.stage1_steps == Some(0) || (self.subspace.stage1_steps.is_none() && self.subspace.stage1_epochs == 0) {
            errs.push("stage 1 needs at least one step".into());
        }
        if self.subspace.max_rows == Some(0) {
            errs.push("subspace.max_rows must be at least 1".into());
        }
        if !(self.subspace.rel_tol >= 0.0 && self.subspace.rel_tol < 1.0) {
            errs.push("subspace.rel_tol must lie in [0, 1)".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(EngineError::Config(errs))
        }
    }

    /// Canonical key-value form; [`RunConfig::from_kv`] inverts it.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        let m = &self.model;
        kv.set("model.kind", m.kind.as_str());
        kv.set("model.input_dim", m.input_dim.to_string());
        kv.set("model.hidden", m.hidden_dims.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        kv.set("model.num_classes", m.num_classes.to_string());
        kv.set("model.activation", m.activation.as_str());
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        kv.set("data.train", path(&self.data.train));
        kv.set("data.val", path(&self.data.val));
        kv.set("data.public", path(&self.data.public));
        kv.set("data.name", self.data.name.clone().unwrap_or_default());
        let t = &self.train;
        kv.set("train.epochs", t.epochs.to_string());
        kv.set("train.steps", t.steps.map(|s| s.to_string()).unwrap_or_default());
        kv.set("train.batch_size", t.batch_size.to_string());
        kv.set("train.sampling", t.sampling.as_str());
        kv.set("train.lr", t.lr.to_string());
        kv.set("train.beta1", t.adam.beta1.to_string());
        kv.set("train.beta2", t.adam.beta2.to_string());
        kv.set("train.adam_eps", t.adam.eps_hat.to_string());
        kv.set("train.warmup_steps", t.warmup_steps.to_string());
        let p = &self.privacy;
        kv.set("privacy.epsilon", p.epsilon.map_or("none".to_string(), |e| e.to_string()));
        kv.set("privacy.delta", p.delta.to_string());
        kv.set("privacy.clip", p.clip_norm.to_string());
        kv.set("privacy.noise_mode", p.noise_mode.as_str());
        kv.set("privacy.p1", p.p1.to_string());
        let s = &self.subspace;
        kv.set("subspace.k", s.k.to_string());
        kv.set("subspace.stage1_epochs", s.stage1_epochs.to_string());
        kv.set("subspace.stage1_steps", s.stage1_steps.map(|v| v.to_string()).unwrap_or_default());
        kv.set("subspace.max_rows", s.max_rows.map(|v| v.to_string()).unwrap_or_default());
        kv.set("subspace.rel_tol", s.rel_tol.to_string());
        kv.set("subspace.checkpoint", path(&s.checkpoint));
        kv.set("subspace.projection", path(&s.projection));
        kv.set("seed", self.seed.to_string());
        kv.set("threads", self.threads.to_string());
        kv.set("output", path(&self.output));
        kv
    }

    /// Parses a key-value config over the defaults, collecting every problem.
    /// `model.input_dim` has no default and must be present.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, EngineError> {
        let mut p = Parser { kv, errors: Vec::new(), used: Vec::new() };
        let defaults = RunConfig::new(ModelSpec::logistic_regression(1, 2));

        let kind: ModelKind = p.parse("model.kind").unwrap_or(ModelKind::LogisticRegression);
        let input_dim = p.parse::<usize>("model.input_dim");
        if input_dim.is_none() && kv.get("model.input_dim").is_none() {
            p.errors.push("model.input_dim is required".into());
        }
        let hidden_raw = p.raw("model.hidden").map(str::to_string);
        let hidden_dims = match hidden_raw.as_deref() {
            None => Vec::new(),
            Some(s) => s
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .filter_map(|s| match s.parse::<usize>() {
                    Ok(v) => Some(v),
                    Err(_) => {
                        p.errors.push(format!("model.hidden: `{s}` is not a layer width"));
                        None
                    }
                })
                .collect(),
        };
        let model = ModelSpec {
            kind,
            input_dim: input_dim.unwrap_or(0),
            hidden_dims,
            num_classes: p.parse("model.num_classes").unwrap_or(2),
            activation: p.parse::<Activation>("model.activation").unwrap_or(Activation::Relu),
        };

        let data = DataPaths {
            train: p.raw("data.train").map(PathBuf::from),
            val: p.raw("data.val").map(PathBuf::from),
            public: p.raw("data.public").map(PathBuf::from),
            name: p.raw("data.name").map(str::to_string),
        };

        let dt = defaults.train;
        let train = TrainSettings {
            epochs: p.parse("train.epochs").unwrap_or(dt.epochs),
            steps: p.parse("train.steps"),
            batch_size: p.parse("train.batch_size").unwrap_or(dt.batch_size),
            sampling: p.parse("train.sampling").unwrap_or(dt.sampling),
            lr: p.parse("train.lr").unwrap_or(dt.lr),
            adam: AdamConfig {
                beta1: p.parse("train.beta1").unwrap_or(dt.adam.beta1),
                beta2: p.parse("train.beta2").unwrap_or(dt.adam.beta2),
                eps_hat: p.parse("train.adam_eps").unwrap_or(dt.adam.eps_hat),
            },
            warmup_steps: p.parse("train.warmup_steps").unwrap_or(dt.warmup_steps),
        };

        let dp = defaults.privacy;
        let epsilon = match p.raw("privacy.epsilon") {
            None => dp.epsilon,
            Some("none") | Some("inf") => None,
            Some(_) => p.parse("privacy.epsilon"),
        };
        let privacy = PrivacySettings {
            epsilon,
            delta: p.parse("privacy.delta").unwrap_or(dp.delta),
            clip_norm: p.parse("privacy.clip").unwrap_or(dp.clip_norm),
            noise_mode: p.parse("privacy.noise_mode").unwrap_or(dp.noise_mode),
            p1: p.parse("privacy.p1").unwrap_or(dp.p1),
        };

        let ds = defaults.subspace;
        let subspace = SubspaceSettings {
            k: p.parse("subspace.k").unwrap_or(ds.k),
            stage1_epochs: p.parse("subspace.stage1_epochs").unwrap_or(ds.stage1_epochs),
            stage1_steps: p.parse("subspace.stage1_steps"),
            max_rows: p.parse("subspace.max_rows"),
            rel_tol: p.parse("subspace.rel_tol").unwrap_or(ds.rel_tol),
            checkpoint: p.raw("subspace.checkpoint").map(PathBuf::from),
            projection: p.raw("subspace.projection").map(PathBuf::from),
        };

        let cfg = RunConfig {
            model,
            data,
            train,
            privacy,
            subspace,
            seed: p.parse("seed").unwrap_or(0),
            output: p.raw("output").map(PathBuf::from),
            threads: p.parse("threads").unwrap_or(1),
        };

        for key in kv.keys() {
            if !p.used.iter().any(|u| u == key) {
                p.errors.push(format!("unknown key `{key}`"));
            }
        }
        let mut errors = p.errors;
        if let Err(EngineError::Config(more)) = cfg.validate() {
            // Missing input_dim already reported.
            errors.extend(more.into_iter().filter(|e| !(input_dim.is_none() && e.contains("input_dim"))));
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(EngineError::Config(errors))
        }
    }

    /// Short digest of the canonical config text (which includes the seed).
    /// Identifies the experiment; where it is written and how many threads run it do not
    /// change the result, so `output` and `threads` are left out.
    pub fn fingerprint(&self) -> String {
        let mut kv = self.to_kv();
        kv.remove("output");
        kv.remove("threads");
        let digest = Sha256::digest(kv.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

struct Parser<'a> {
    kv: &'a KvConfig,
    errors: Vec<String>,
    used: Vec<String>,
}

impl Parser<'_> {
    /// Raw value, treating an empty string as absent.
    fn raw(&mut self, key: &str) -> Option<&str> {
        self.used.push(key.to_string());
        self.kv.get(key).filter(|v| !v.is_empty())
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        let kv = self.kv;
        self.used.push(key.to_string());
        let v = kv.get(key).filter(|v| !v.is_empty())?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                self.errors.push(format!("{key}: cannot parse `{v}`: {e}"));
                None
            }
        }
    }
}
