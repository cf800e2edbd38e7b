use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean and standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    /// Zero variance; standardizes to all zeros.
    pub constant: bool,
}

impl ColumnStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let constant = !(std > 1e-12 * mean.abs().max(1.0));
        ColumnStats {
            mean,
            std: if constant { 0.0 } else { std },
            constant,
        }
    }

    #[inline]
    fn scale(&self) -> f64 {
        if self.constant {
            1.0
        } else {
            self.std
        }
    }

    #[inline]
    pub fn standardize(&self, v: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (v - self.mean) / self.std
        }
    }

    #[inline]
    pub fn restore(&self, z: f64) -> f64 {
        self.mean + z * self.scale()
    }

    /// Factor converting standardized errors back to original units.
    pub fn error_scale(&self) -> f64 {
        self.scale()
    }
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Columns to ignore besides the target.
    pub exclude: Vec<String>,
}

/// Standardized regression data.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Vec<f64>,
    pub feature_names: Vec<String>,
    pub feature_stats: Vec<ColumnStats>,
    pub target_stats: ColumnStats,
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Targets in original units.
    pub fn raw_targets(&self) -> Vec<f64> {
        self.targets.iter().map(|&z| self.target_stats.restore(z)).collect()
    }

    pub fn constant_features(&self) -> Vec<&str> {
        self.feature_names
            .iter()
            .zip(&self.feature_stats)
            .filter(|(_, s)| s.constant)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Read a headered CSV. Rows with a missing or unparseable cell in any used
/// column are dropped and counted; features and target are standardized.
pub fn load_csv(path: &Path, target: &str, options: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::Ingestion(format!("target column '{target}' not found")))?;
    for ex in &options.exclude {
        if !headers.contains(ex) {
            return Err(Error::Ingestion(format!("excluded column '{ex}' not found")));
        }
    }
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != target_idx && !options.exclude.contains(&headers[i]))
        .collect();
    if feature_idx.is_empty() {
        return Err(Error::Ingestion("no feature columns left".into()));
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut targets = Vec::new();
    let mut dropped = 0;
    let mut buf = Vec::with_capacity(feature_idx.len());
    for record in reader.records() {
        let record = record?;
        buf.clear();
        let y = record.get(target_idx).and_then(parse_cell);
        let mut ok = y.is_some();
        for &i in &feature_idx {
            match record.get(i).and_then(parse_cell) {
                Some(v) => buf.push(v),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            rows.extend_from_slice(&buf);
            targets.push(y.unwrap());
        } else {
            dropped += 1;
        }
    }
    if targets.is_empty() {
        return Err(Error::Ingestion(format!(
            "no usable rows ({dropped} dropped)"
        )));
    }
    let n = targets.len();
    let d = feature_idx.len();
    let mut features = Matrix::from_vec(n, d, rows);
    let mut feature_stats = Vec::with_capacity(d);
    for j in 0..d {
        let stats = ColumnStats::of(&features.column(j));
        for i in 0..n {
            features[(i, j)] = stats.standardize(features[(i, j)]);
        }
        feature_stats.push(stats);
    }
    let target_stats = ColumnStats::of(&targets);
    let targets = targets.iter().map(|&y| target_stats.standardize(y)).collect();
    Ok(Dataset {
        features,
        targets,
        feature_names: feature_idx.iter().map(|&i| headers[i].clone()).collect(),
        feature_stats,
        target_stats,
        dropped_rows: dropped,
    })
}
