//! Experiment configuration: a JSON document with sections `dataset` or
//! `oracle`, `network`, `training`, `acquisition`, `loop` and `output`.
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::acquisition::{SelectionMode, Strategy};
use crate::error::{Error, Result};
use crate::gp::Regularization;
use crate::harness::split::DEFAULT_FRACTIONS;
use crate::nn::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub target: String,
    #[serde(default)]
    pub exclude: Vec<String>,
    /// Train, test, validation, pool.
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 4],
}

fn default_fractions() -> [f64; 4] {
    DEFAULT_FRACTIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub name: String,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_initial_train")]
    pub initial_train: usize,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
}

fn default_initial_train() -> usize {
    50
}
fn default_pool_size() -> usize {
    20_000
}
fn default_val_size() -> usize {
    200
}
fn default_test_size() -> usize {
    2_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

fn default_hidden() -> Vec<usize> {
    vec![256, 128, 128]
}
fn default_slope() -> f64 {
    0.01
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: default_hidden(),
            leaky_slope: default_slope(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_acq_batch")]
    pub batch_size: usize,
    #[serde(default = "default_passes")]
    pub passes: usize,
    /// Inference dropout rate; defaults to `training.dropout_train`.
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub lambda: Regularization,
    #[serde(default = "default_anchor_size")]
    pub anchor_size: usize,
    #[serde(default = "default_m_steps")]
    pub m_steps: usize,
    #[serde(default)]
    pub mode: SelectionMode,
    #[serde(default = "default_true")]
    pub fast_path: bool,
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn default_acq_batch() -> usize {
    200
}
fn default_passes() -> usize {
    crate::inference::DEFAULT_PASSES
}
fn default_anchor_size() -> usize {
    500
}
fn default_m_steps() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        AcquisitionSection {
            strategies: default_strategies(),
            batch_size: default_acq_batch(),
            passes: default_passes(),
            dropout: None,
            lambda: Regularization::default(),
            anchor_size: default_anchor_size(),
            m_steps: default_m_steps(),
            mode: SelectionMode::default(),
            fast_path: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Replicate `r` runs with seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    /// Keep weights between iterations (the learning rate always restarts).
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// When set, mandatory epochs become `min(training.epochs_mandatory, k · n_train)`.
    #[serde(default)]
    pub mandatory_epochs_per_sample: Option<usize>,
}

fn default_n_iter() -> usize {
    16
}
fn default_replicates() -> usize {
    5
}

impl Default for LoopSection {
    fn default() -> Self {
        LoopSection {
            n_iter: default_n_iter(),
            replicates: default_replicates(),
            seed: 0,
            warm_start: true,
            mandatory_epochs_per_sample: None,
        }
    }
}

impl LoopSection {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output root; defaults to `out/<name>`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default, rename = "loop")]
    pub run_loop: LoopSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name must be non-empty without path separators"));
        }
        match (&self.dataset, &self.oracle) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::config("exactly one of 'dataset' or 'oracle' is required"))
            }
            (None, Some(o)) => {
                o.name.parse::<crate::harness::oracle::SyntheticFunction>()
                    .map_err(|e| Error::config(e.to_string()))?;
                if o.initial_train == 0 || o.val_size == 0 || o.test_size == 0 || o.pool_size == 0 {
                    return Err(Error::config("oracle set sizes must be positive"));
                }
                if !(o.noise_sigma >= 0.0) {
                    return Err(Error::config("noise_sigma must be >= 0"));
                }
            }
            (Some(_), None) => {}
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(self.network.leaky_slope > 0.0 && self.network.leaky_slope < 1.0) {
            return Err(Error::config("leaky_slope must lie in (0, 1)"));
        }
        self.training.validate()?;
        let a = &self.acquisition;
        if a.strategies.is_empty() {
            return Err(Error::config("at least one strategy is required"));
        }
        let mut uniq = a.strategies.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != a.strategies.len() {
            return Err(Error::config("strategies must be distinct"));
        }
        if a.batch_size == 0 || a.passes < 2 || a.anchor_size == 0 {
            return Err(Error::config("need batch_size >= 1, passes >= 2, anchor_size >= 1"));
        }
        if let Some(p) = a.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config("acquisition dropout must lie in [0, 1)"));
            }
        }
        if a.strategies.contains(&Strategy::MstepNngp)
            && (a.m_steps == 0 || !a.batch_size.is_multiple_of(a.m_steps))
        {
            return Err(Error::config(format!(
                "m_steps = {} must divide batch_size = {}",
                a.m_steps, a.batch_size
            )));
        }
        if self.run_loop.replicates == 0 {
            return Err(Error::config("replicates must be >= 1"));
        }
        Ok(())
    }

    pub fn inference_dropout(&self) -> f64 {
        self.acquisition.dropout.unwrap_or(self.training.dropout_train)
    }

    pub fn output_root(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| Path::new("out").join(&self.name))
    }
}

/// Set `dotted.key` in a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{assignment}' is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed override key '{key}'")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("'{key}' descends into a non-object")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("'{key}' descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parse and validate a config document, then apply overrides in order.
/// Schema errors in the document itself carry line and column numbers.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let direct: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    if overrides.is_empty() {
        direct.validate()?;
        return Ok(direct);
    }
    let mut tree: Value = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(tree)
        .map_err(|e| Error::config(format!("after overrides: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    parse_config(&text, overrides).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
