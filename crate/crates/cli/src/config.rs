//! Resolved per-subcommand configurations.
//!
//! Each struct is the JSON accepted by `--config` (unknown keys are
//! rejected) and the `config` block recorded in the run manifest.

use std::path::{Path, PathBuf};

use flowgnn::eval::{FewShotConfig, SynthConfig};
use flowgnn::finetune::FinetuneConfig;
use flowgnn::graph::GraphConfig;
use flowgnn::ingest::PreprocessConfig;
use flowgnn::model::ModelConfig;
use flowgnn::pretrain::PretrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestFile;
use crate::CliError;

pub const EXPERIMENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRun {
    pub out: Option<PathBuf>,
    pub n_flows: usize,
    pub n_ips: usize,
    pub n_classes: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub shift: f64,
    pub shift_seed: u64,
    pub address_base: u8,
    pub unlabeled: bool,
}

impl Default for SynthRun {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            out: None,
            n_flows: s.n_flows,
            n_ips: s.n_ips,
            n_classes: s.n_classes,
            duration_s: s.duration_s,
            seed: s.seed,
            shift: s.shift,
            shift_seed: s.shift_seed,
            address_base: s.address_base,
            unlabeled: false,
        }
    }
}

impl SynthRun {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_ips: self.n_ips,
            n_classes: self.n_classes,
            n_flows: self.n_flows,
            duration_s: self.duration_s,
            seed: self.seed,
            shift: self.shift,
            shift_seed: self.shift_seed,
            address_base: self.address_base,
            signatures: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestRun {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// `default`, `netflow_v9`, or the path of a JSON column mapping.
    pub schema: String,
    /// Reuse this feature layout instead of fitting a new one.
    pub features: Option<PathBuf>,
    /// With `features`: keep the layout, recompute numeric statistics.
    pub refit_numeric: bool,
    pub clamp: f64,
}

impl Default for IngestRun {
    fn default() -> Self {
        Self {
            input: None,
            out: None,
            schema: "default".into(),
            features: None,
            refit_numeric: false,
            clamp: PreprocessConfig::default().clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildGraphsRun {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub schema: String,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub unlabeled: bool,
    pub clamp: f64,
    pub snapshot_seconds: f64,
    pub snapshots_per_window: usize,
    pub jobs: usize,
}

impl Default for BuildGraphsRun {
    fn default() -> Self {
        let g = GraphConfig::default();
        Self {
            input: None,
            out: None,
            schema: "default".into(),
            features: None,
            labels: None,
            unlabeled: false,
            clamp: PreprocessConfig::default().clamp,
            snapshot_seconds: g.snapshot_seconds,
            snapshots_per_window: g.snapshots_per_window,
            jobs: 1,
        }
    }
}

impl BuildGraphsRun {
    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            snapshot_seconds: self.snapshot_seconds,
            snapshots_per_window: self.snapshots_per_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainRun {
    pub graphs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub epochs: usize,
    pub windows_per_batch: usize,
    pub validation_fraction: f64,
    pub patience: Option<usize>,
    pub lr: f64,
    pub hidden_dim: usize,
    pub n_spatial_layers: usize,
    pub ip_feature_dim: usize,
}

impl Default for PretrainRun {
    fn default() -> Self {
        let p = PretrainConfig::default();
        let m = ModelConfig::default();
        Self {
            graphs: None,
            out: None,
            seed: 0,
            epochs: p.epochs,
            windows_per_batch: p.windows_per_batch,
            validation_fraction: p.validation_fraction,
            patience: p.patience,
            lr: p.adam.lr,
            hidden_dim: m.hidden_dim,
            n_spatial_layers: m.n_spatial_layers,
            ip_feature_dim: m.ip_feature_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneRun {
    pub graphs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Pretrained base checkpoint; exclusive with `scratch`.
    pub from: Option<PathBuf>,
    pub scratch: bool,
    pub seed: u64,
    pub epochs: usize,
    pub samples: Option<usize>,
    pub windows_per_batch: usize,
    pub validation_fraction: f64,
    pub dropout: f64,
    pub freeze_encoder: bool,
    pub lr: f64,
    pub head_hidden_dims: Vec<usize>,
    /// Encoder shape when training from scratch.
    pub hidden_dim: usize,
    pub n_spatial_layers: usize,
    pub ip_feature_dim: usize,
}

impl Default for FinetuneRun {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        let m = ModelConfig::default();
        Self {
            graphs: None,
            out: None,
            from: None,
            scratch: false,
            seed: 0,
            epochs: f.epochs,
            samples: None,
            windows_per_batch: f.windows_per_batch,
            validation_fraction: f.validation_fraction,
            dropout: f.dropout,
            freeze_encoder: f.freeze_encoder,
            lr: f.adam.lr,
            head_hidden_dims: m.head_hidden_dims,
            hidden_dim: m.hidden_dim,
            n_spatial_layers: m.n_spatial_layers,
            ip_feature_dim: m.ip_feature_dim,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateRun {
    pub model: Option<PathBuf>,
    pub graphs: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// One downstream task of an experiment: a labeled graph corpus and how
/// to hold out its test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub graphs: PathBuf,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

/// The `exp.json` experiment file of `fewshot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewshotRun {
    pub format_version: u32,
    pub base: Option<PathBuf>,
    pub tasks: Vec<TaskSpec>,
    pub out: Option<PathBuf>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub reference_epochs: usize,
    pub head_hidden_dims: Vec<usize>,
    pub lr: f64,
    pub dropout: f64,
    pub windows_per_batch: usize,
    pub validation_fraction: f64,
    pub master_seed: u64,
    pub jobs: usize,
}

impl Default for FewshotRun {
    fn default() -> Self {
        let f = FewShotConfig::default();
        Self {
            format_version: EXPERIMENT_FORMAT_VERSION,
            base: None,
            tasks: Vec::new(),
            out: None,
            sample_sizes: f.sample_sizes,
            seeds: f.seeds,
            epochs: f.finetune.epochs,
            reference_epochs: f.reference_epochs,
            head_hidden_dims: f.head_hidden_dims,
            lr: f.finetune.adam.lr,
            dropout: f.finetune.dropout,
            windows_per_batch: f.finetune.windows_per_batch,
            validation_fraction: f.finetune.validation_fraction,
            master_seed: f.master_seed,
            jobs: f.jobs,
        }
    }
}

impl FewshotRun {
    pub fn fewshot_config(&self) -> FewShotConfig {
        let mut finetune = FinetuneConfig {
            epochs: self.epochs,
            windows_per_batch: self.windows_per_batch,
            validation_fraction: self.validation_fraction,
            dropout: self.dropout,
            ..Default::default()
        };
        finetune.adam.lr = self.lr;
        FewShotConfig {
            sample_sizes: self.sample_sizes.clone(),
            seeds: self.seeds.clone(),
            finetune,
            reference_epochs: self.reference_epochs,
            head_hidden_dims: self.head_hidden_dims.clone(),
            master_seed: self.master_seed,
            jobs: self.jobs.max(1),
        }
    }
}

/// Read a `--config` file. A run manifest is accepted too: the
/// configuration of its latest `subcommand` run is used.
pub fn load<T: DeserializeOwned>(path: &Path, subcommand: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: invalid JSON: {e}", path.display())))?;
    let value = if value.get("runs").is_some() {
        let m = ManifestFile::read(path)?;
        m.last_run(subcommand)
            .ok_or_else(|| CliError::Validation(format!("{}: no `{subcommand}` run recorded", path.display())))?
            .config
            .clone()
    } else {
        value
    };
    serde_json::from_value(value).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Fail with the names of required fields that are still unset.
pub fn require(fields: &[(&str, bool)]) -> Result<(), CliError> {
    let missing: Vec<&str> = fields.iter().filter(|(_, set)| !set).map(|(n, _)| *n).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "missing required fields: {}",
            missing.join(", ")
        )))
    }
}
