//! CSV datasets: a header naming feature columns plus a `label` column.

use std::path::Path;

use super::{with_path, IoError};
use crate::models::Example;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, examples: Vec<Example>) -> Self {
        Self { feature_names, examples }
    }

    /// Features named `x0, x1, ...`.
    pub fn with_default_names(input_dim: usize, examples: Vec<Example>) -> Self {
        Self { feature_names: (0..input_dim).map(|i| format!("x{i}")).collect(), examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    /// One more than the largest label present.
    pub fn num_classes(&self) -> usize {
        self.examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> Result<String, IoError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| IoError::Dataset(e.to_string());
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for ex in &self.examples {
            let mut rec: Vec<String> = ex.features.iter().map(|v| v.to_string()).collect();
            rec.push(ex.label.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| IoError::Dataset(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| IoError::Dataset(e.to_string()))
    }
}

pub fn parse_dataset(text: &str) -> Result<Dataset, IoError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| IoError::Dataset(e.to_string()))?.clone();
    let label_col = header
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| IoError::Dataset("header has no `label` column".into()))?;
    let feature_names: Vec<String> =
        header.iter().enumerate().filter(|&(i, _)| i != label_col).map(|(_, h)| h.trim().to_string()).collect();

    let mut examples = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| IoError::Dataset(format!("line {line}: {e}")))?;
        if rec.len() != header.len() {
            return Err(IoError::Dataset(format!("line {line}: {} fields, header has {}", rec.len(), header.len())));
        }
        let mut features = Vec::with_capacity(feature_names.len());
        let mut label = None;
        for (i, field) in rec.iter().enumerate() {
            let field = field.trim();
            if i == label_col {
                label = Some(
                    field
                        .parse::<usize>()
                        .map_err(|_| IoError::Dataset(format!("line {line}: label `{field}` is not a class index")))?,
                );
            } else {
                let v: f64 =
                    field.parse().map_err(|_| IoError::Dataset(format!("line {line}: `{field}` is not a number")))?;
                if !v.is_finite() {
                    return Err(IoError::Dataset(format!("line {line}: non-finite feature")));
                }
                features.push(v);
            }
        }
        examples.push(Example::new(features, label.expect("label column present")));
    }
    Ok(Dataset { feature_names, examples })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, IoError> {
    let text = with_path(path, std::fs::read_to_string(path))?;
    parse_dataset(&text).map_err(|e| match e {
        IoError::Dataset(msg) => IoError::Dataset(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<(), IoError> {
    with_path(path, std::fs::write(path, data.to_csv()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let d = Dataset::with_default_names(
            2,
            vec![Example::new(vec![0.1, -2.5e-7], 1), Example::new(vec![3.0, 1e300], 0)],
        );
        let text = d.to_csv().unwrap();
        assert!(text.starts_with("x0,x1,label\n"));
        assert_eq!(parse_dataset(&text).unwrap(), d);
    }

    #[test]
    fn label_column_may_be_anywhere() {
        let d = parse_dataset("label,a,b\n2,1.5,2\n").unwrap();
        assert_eq!(d.feature_names, vec!["a", "b"]);
        assert_eq!(d.examples[0], Example::new(vec![1.5, 2.0], 2));
        assert_eq!(d.num_classes(), 3);
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(parse_dataset("a,b\n1,2\n").is_err());
        assert!(parse_dataset("a,label\n1,-1\n").is_err());
        assert!(parse_dataset("a,label\nfoo,1\n").is_err());
        assert!(parse_dataset("a,label\n1\n").is_err());
        assert!(parse_dataset("a,label\nNaN,1\n").is_err());
    }
}
