//! Comparison tables built from run summaries: aligned text on stdout plus CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dpsft_core::io::{self, Record};

use crate::{Aggregate, ReportArgs};

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub dataset: String,
    pub method: String,
    /// `None` for non-private runs.
    pub epsilon: Option<f64>,
    /// The run's seed, or `None` for an aggregated group.
    pub seed: Option<u64>,
    pub seeds: usize,
    pub accuracy: f64,
    /// Sample standard deviation across seeds; only for aggregated groups.
    pub std: Option<f64>,
    pub best: bool,
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for dir in &args.dirs {
        let mut files = Vec::new();
        find_metrics(dir, &mut files).with_context(|| format!("scanning {}", dir.display()))?;
        let mut found = 0;
        for f in &files {
            let summaries: Vec<Record> = io::read_records(f)?.into_iter().filter(|r| r.kind() == Some("summary")).collect();
            found += summaries.len();
            records.extend(summaries);
        }
        if found == 0 {
            missing.push(format!("{}: no summary records", dir.display()));
        }
    }
    if !missing.is_empty() {
        return Err(crate::UsageError(missing.join("\n")).into());
    }
    let rows = match args.aggregate {
        Some(Aggregate::Seeds) => aggregate_seeds(&records),
        None => per_run(&records),
    };
    print!("{}", text_table(&rows));
    let file = std::fs::File::create(&args.csv).with_context(|| format!("creating {}", args.csv.display()))?;
    write_csv(&rows, file)?;
    log::info!("wrote {}", args.csv.display());
    Ok(())
}

fn find_metrics(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_file() {
        if path.file_name().is_some_and(|n| n == "metrics.jsonl") {
            out.push(path.to_path_buf());
        }
        return Ok(());
    }
    let mut entries: Vec<_> = std::fs::read_dir(path)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        find_metrics(&e.path(), out)?;
    }
    Ok(())
}

/// Summaries appended by reruns of one run (same fingerprint, method and dataset) count once.
fn unique(summaries: &[Record]) -> Vec<&Record> {
    let mut seen: BTreeMap<String, &Record> = BTreeMap::new();
    for (i, r) in summaries.iter().enumerate() {
        let key = match r.get_str("fingerprint") {
            Some(fp) => format!("{fp}/{}/{}", r.get_str("method").unwrap_or(""), r.get_str("dataset").unwrap_or("")),
            None => format!("#{i}"),
        };
        seen.insert(key, r);
    }
    seen.into_values().filter(|r| r.get_f64("accuracy").is_some()).collect()
}

fn eps_key(eps: Option<f64>) -> String {
    eps.map_or_else(|| "none".to_string(), |e| e.to_string())
}

/// One row per run, accuracy copied verbatim from its summary.
pub fn per_run(summaries: &[Record]) -> Vec<Row> {
    let mut rows: Vec<Row> = unique(summaries)
        .into_iter()
        .map(|r| Row {
            dataset: r.get_str("dataset").unwrap_or("-").to_string(),
            method: r.get_str("method").unwrap_or("-").to_string(),
            epsilon: r.get_f64("epsilon"),
            seed: r.get_f64("seed").map(|s| s as u64),
            seeds: 1,
            accuracy: r.get_f64("accuracy").unwrap_or(f64::NAN),
            std: None,
            best: false,
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.dataset, eps_key(a.epsilon), &a.method, a.seed).cmp(&(&b.dataset, eps_key(b.epsilon), &b.method, b.seed))
    });
    mark_best(&mut rows);
    rows
}

/// (dataset, ε, method) -> (ε, accuracies).
type Groups = BTreeMap<(String, String, String), (Option<f64>, Vec<f64>)>;

/// Collapses each (dataset, method, ε) group to mean ± sample standard deviation.
pub fn aggregate_seeds(summaries: &[Record]) -> Vec<Row> {
    let mut groups = Groups::new();
    for r in unique(summaries) {
        let eps = r.get_f64("epsilon");
        let key = (
            r.get_str("dataset").unwrap_or("-").to_string(),
            eps_key(eps),
            r.get_str("method").unwrap_or("-").to_string(),
        );
        groups.entry(key).or_insert((eps, Vec::new())).1.push(r.get_f64("accuracy").unwrap_or(f64::NAN));
    }
    let mut rows: Vec<Row> = groups
        .into_iter()
        .map(|((dataset, _, method), (epsilon, accs))| {
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let var = if accs.len() > 1 { accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            Row { dataset, method, epsilon, seed: None, seeds: accs.len(), accuracy: mean, std: Some(var.sqrt()), best: false }
        })
        .collect();
    mark_best(&mut rows);
    rows
}

/// Marks the most accurate private row per (dataset, ε) column.
fn mark_best(rows: &mut [Row]) {
    let mut best: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if row.epsilon.is_none() {
            continue;
        }
        let slot = best.entry((row.dataset.clone(), eps_key(row.epsilon))).or_insert(i);
        if row.accuracy > rows[*slot].accuracy {
            *slot = i;
        }
    }
    for i in best.into_values() {
        rows[i].best = true;
    }
}

fn cells(r: &Row) -> [String; 6] {
    [
        r.dataset.clone(),
        r.method.clone(),
        eps_key(r.epsilon),
        r.seed.map_or_else(|| format!("{} seeds", r.seeds), |s| s.to_string()),
        match r.std {
            Some(sd) => format!("{:.4} ± {:.4}", r.accuracy, sd),
            None => r.accuracy.to_string(),
        },
        if r.best { "*".to_string() } else { String::new() },
    ]
}

const HEADER: [&str; 6] = ["dataset", "method", "epsilon", "seed", "accuracy", "best"];

pub fn text_table(rows: &[Row]) -> String {
    let body: Vec<[String; 6]> = rows.iter().map(cells).collect();
    let mut width = HEADER.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[String]| {
        let padded: Vec<String> = cols.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&HEADER.map(String::from));
    line(&width.map(|w| "-".repeat(w)));
    for row in &body {
        line(row);
    }
    out
}

pub fn write_csv(rows: &[Row], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "method", "epsilon", "seed", "seeds", "accuracy", "std", "best"])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.method.clone(),
            eps_key(r.epsilon),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.seeds.to_string(),
            r.accuracy.to_string(),
            r.std.map(|s| s.to_string()).unwrap_or_default(),
            if r.best { "*".to_string() } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(method: &str, eps: Option<f64>, seed: u64, acc: f64) -> Record {
        Record::new("summary")
            .with("dataset", "syn")
            .with("method", method)
            .with("epsilon", eps)
            .with("seed", seed)
            .with("accuracy", acc)
            .with("fingerprint", format!("{method}{seed}{eps:?}"))
    }

    fn fixture() -> Vec<Record> {
        vec![
            summary("dpsgd", Some(1.0), 0, 0.6),
            summary("dpsgd", Some(1.0), 1, 0.7),
            summary("dpsft", Some(1.0), 0, 0.8),
            summary("dpsft", Some(1.0), 0, 0.8),
            summary("nondp", None, 0, 0.95),
            summary("dpsgd", Some(4.0), 0, 0.75),
        ]
    }

    #[test]
    fn per_run_rows_copy_summaries() {
        let rows = per_run(&fixture());
        assert_eq!(rows.len(), 5);
        let best: Vec<_> = rows.iter().filter(|r| r.best).map(|r| (r.method.as_str(), r.epsilon)).collect();
        assert_eq!(best, [("dpsft", Some(1.0)), ("dpsgd", Some(4.0))]);
        assert!(rows.iter().any(|r| r.method == "dpsgd" && r.seed == Some(1) && r.accuracy == 0.7));
    }

    #[test]
    fn seed_groups_collapse() {
        let rows = aggregate_seeds(&fixture());
        let find = |m: &str, e: Option<f64>| rows.iter().find(|r| r.method == m && r.epsilon == e).unwrap();
        assert!(find("dpsft", Some(1.0)).best);
        assert_eq!(find("dpsft", Some(1.0)).seeds, 1);
        assert!(!find("dpsgd", Some(1.0)).best);
        assert!((find("dpsgd", Some(1.0)).accuracy - 0.65).abs() < 1e-12);
        assert!((find("dpsgd", Some(1.0)).std.unwrap() - 0.05f64.hypot(0.05)).abs() < 1e-12);
        assert!(!find("nondp", None).best);
    }

    #[test]
    fn table_columns_align() {
        let table = text_table(&per_run(&fixture()));
        let lines: Vec<&str> = table.lines().collect();
        let col = lines[0].find("method").unwrap();
        assert!(lines[2..].iter().all(|l| l[col..].chars().next().is_some_and(|c| c != ' ')));
    }
}
