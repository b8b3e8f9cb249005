use std::collections::BTreeMap;

use crate::io::Record;

/// Per-step training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Global step, strictly increasing across the stages of one run.
    pub step: usize,
    pub phase: String,
    /// Mean batch loss; `None` for an empty batch.
    pub loss: Option<f64>,
    pub batch_size: usize,
    /// Pre-clip per-example gradient norms, measured where clipping happens.
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    pub clipped_fraction: f64,
    /// Cumulative ε spent against the private data; `None` when unbounded.
    pub epsilon_spent: Option<f64>,
}

impl StepRecord {
    pub fn to_record(&self) -> Record {
        Record::new("step")
            .with("step", self.step as u64)
            .with("phase", self.phase.as_str())
            .with("split", "train")
            .with("metric", "loss")
            .with("value", self.loss)
            .with("batch_size", self.batch_size as u64)
            .with("grad_norm_mean", self.grad_norm_mean)
            .with("grad_norm_max", self.grad_norm_max)
            .with("clipped_fraction", self.clipped_fraction)
            .with("epsilon_spent", self.epsilon_spent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub phase: String,
    pub accuracy: f64,
    pub epsilon_spent: Option<f64>,
}

impl EvalRecord {
    pub fn to_record(&self) -> Record {
        Record::new("eval")
            .with("step", self.step as u64)
            .with("phase", self.phase.as_str())
            .with("split", "val")
            .with("metric", "accuracy")
            .with("value", self.accuracy)
            .with("epsilon_spent", self.epsilon_spent)
    }
}

/// Budget and noise of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub name: String,
    pub steps: usize,
    pub sample_rate: f64,
    pub sigma: f64,
    /// `(ε, δ)` allotted; `None` for public or unbounded stages.
    pub budget: Option<(f64, f64)>,
    pub epsilon_spent: Option<f64>,
}

/// Everything a run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub stages: Vec<StageSummary>,
    pub final_accuracy: f64,
    pub epsilon_budget: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon_spent: Option<f64>,
    pub subspace_dim: Option<usize>,
    pub config_fingerprint: String,
    pub extras: BTreeMap<String, f64>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// Deterministic summary; wall-clock time lives in [`RunReport::timing_record`].
    pub fn summary_record(&self) -> Record {
        let mut r = Record::new("summary")
            .with("method", self.method.as_str())
            .with("dataset", self.dataset.as_str())
            .with("seed", self.seed)
            .with("accuracy", self.final_accuracy)
            .with("epsilon", self.epsilon_budget)
            .with("delta", self.delta)
            .with("epsilon_spent", self.epsilon_spent)
            .with("k", self.subspace_dim.map(|k| k as u64))
            .with("steps", self.steps.len() as u64)
            .with("fingerprint", self.config_fingerprint.as_str());
        for s in &self.stages {
            r = r.with(&format!("sigma_{}", s.name), s.sigma);
            if let Some((e, d)) = s.budget {
                r = r.with(&format!("epsilon_{}", s.name), e).with(&format!("delta_{}", s.name), d);
            }
        }
        for (k, v) in &self.extras {
            r = r.with(k, *v);
        }
        r
    }

    pub fn timing_record(&self) -> Record {
        Record::new("timing").with("wall_clock_secs", self.wall_clock_secs)
    }

    /// Step and eval records in chronological order (an eval follows the step it
    /// measured), then summary and timing.
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.steps.len() + self.evals.len() + 2);
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            while let Some(e) = evals.next_if(|e| e.step < s.step) {
                out.push(e.to_record());
            }
            out.push(s.to_record());
            while let Some(e) = evals.next_if(|e| e.step == s.step) {
                out.push(e.to_record());
            }
        }
        out.extend(evals.map(EvalRecord::to_record));
        out.push(self.summary_record());
        out.push(self.timing_record());
        out
    }

    pub fn extra(&self, key: &str) -> Option<f64> {
        self.extras.get(key).copied()
    }
}
