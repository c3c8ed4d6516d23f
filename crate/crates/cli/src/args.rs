use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{BuildGraphsRun, EvaluateRun, FewshotRun, FinetuneRun, IngestRun, PretrainRun, SynthRun, TaskSpec};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "flowgnn",
    version,
    about = "Graph neural networks over NetFlow traffic",
    long_about = "Graph neural networks over NetFlow traffic.\n\n\
        Every subcommand accepts --config FILE (a JSON object with the same \
        field names as the flags, or a manifest.json from an earlier run); \
        flags given on the command line override the file. Each run appends \
        a record to manifest.json in its output directory.\n\n\
        Exit codes: 0 success, 1 invalid arguments or input, 2 runtime failure."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled flow CSV.
    Synth(SynthArgs),
    /// Validate a flow CSV and fit the feature layout and label codec.
    Ingest(IngestArgs),
    /// Turn a flow CSV into windowed graphs.
    BuildGraphs(BuildGraphsArgs),
    /// Self-supervised link-prediction pretraining.
    Pretrain(PretrainArgs),
    /// Train a flow classifier from a pretrained base or from scratch.
    Finetune(FinetuneArgs),
    /// Score a classifier on labeled graphs.
    Evaluate(EvaluateArgs),
    /// Few-shot comparison of pretrained and scratch training.
    Fewshot(FewshotArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::BuildGraphs(_) => "build-graphs",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Evaluate(_) => "evaluate",
            Command::Fewshot(_) => "fewshot",
        }
    }
}

macro_rules! set {
    ($cfg:ident, $args:ident: $($field:ident),+) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v.into(); })+
    };
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON config or manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_flows: Option<usize>,
    #[arg(long)]
    pub n_ips: Option<usize>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Time span in seconds.
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Magnitude of the class signature perturbation.
    #[arg(long)]
    pub shift: Option<f64>,
    #[arg(long)]
    pub shift_seed: Option<u64>,
    /// Second octet of the generated addresses.
    #[arg(long)]
    pub address_base: Option<u8>,
    /// Omit the label column.
    #[arg(long)]
    pub unlabeled: bool,
}

impl SynthArgs {
    pub fn apply(&self, c: &mut SynthRun) {
        let a = self;
        if let Some(v) = &a.out {
            c.out = Some(v.clone());
        }
        set!(c, a: n_flows, n_ips, n_classes, duration_s, seed, shift, shift_seed, address_base);
        c.unlabeled |= a.unlabeled;
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Flow CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `default`, `netflow_v9`, or a JSON column mapping file.
    #[arg(long)]
    pub schema: Option<String>,
    /// Existing features.json to reuse.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// With --features: recompute the numeric statistics on this input.
    #[arg(long)]
    pub refit_numeric: bool,
    /// Z-score clamp for numeric columns.
    #[arg(long)]
    pub clamp: Option<f64>,
}

impl IngestArgs {
    pub fn apply(&self, c: &mut IngestRun) {
        let a = self;
        for (dst, src) in [
            (&mut c.input, &a.input),
            (&mut c.out, &a.out),
            (&mut c.features, &a.features),
        ] {
            if let Some(v) = src {
                *dst = Some(v.clone());
            }
        }
        set!(c, a: schema, clamp);
        c.refit_numeric |= a.refit_numeric;
    }
}

#[derive(Debug, Args)]
pub struct BuildGraphsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Flow CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output corpus; `.json` for the debug format, binary otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<String>,
    /// features.json from `ingest`; fitted on the input when absent.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// labels.json from `ingest`; built from the input when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Ignore labels even when present.
    #[arg(long)]
    pub unlabeled: bool,
    #[arg(long)]
    pub clamp: Option<f64>,
    #[arg(long)]
    pub snapshot_seconds: Option<f64>,
    #[arg(long)]
    pub snapshots_per_window: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl BuildGraphsArgs {
    pub fn apply(&self, c: &mut BuildGraphsRun) {
        let a = self;
        for (dst, src) in [
            (&mut c.input, &a.input),
            (&mut c.out, &a.out),
            (&mut c.features, &a.features),
            (&mut c.labels, &a.labels),
        ] {
            if let Some(v) = src {
                *dst = Some(v.clone());
            }
        }
        set!(c, a: schema, clamp, snapshot_seconds, snapshots_per_window, jobs);
        c.unlabeled |= a.unlabeled;
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Graph corpus.
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Output checkpoint; the log is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub windows_per_batch: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Stop after this many epochs without a better validation AUC.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub n_spatial_layers: Option<usize>,
    #[arg(long)]
    pub ip_feature_dim: Option<usize>,
}

impl PretrainArgs {
    pub fn apply(&self, c: &mut PretrainRun) {
        let a = self;
        for (dst, src) in [(&mut c.graphs, &a.graphs), (&mut c.out, &a.out)] {
            if let Some(v) = src {
                *dst = Some(v.clone());
            }
        }
        if let Some(p) = a.patience {
            c.patience = Some(p);
        }
        set!(c, a: seed, epochs, windows_per_batch, validation_fraction, lr, hidden_dim, n_spatial_layers, ip_feature_dim);
    }
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled graph corpus.
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Output checkpoint; the log is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pretrained base checkpoint.
    #[arg(long, conflicts_with = "scratch")]
    pub from: Option<PathBuf>,
    /// Train from random initialization.
    #[arg(long)]
    pub scratch: bool,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Labeled training flows, drawn stratified by class.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub windows_per_batch: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Train the head only.
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated hidden widths of the head.
    #[arg(long, value_delimiter = ',')]
    pub head_hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub n_spatial_layers: Option<usize>,
    #[arg(long)]
    pub ip_feature_dim: Option<usize>,
}

impl FinetuneArgs {
    pub fn apply(&self, c: &mut FinetuneRun) {
        let a = self;
        for (dst, src) in [(&mut c.graphs, &a.graphs), (&mut c.out, &a.out)] {
            if let Some(v) = src {
                *dst = Some(v.clone());
            }
        }
        if let Some(v) = &a.from {
            c.from = Some(v.clone());
            c.scratch = false;
        }
        if a.scratch {
            c.scratch = true;
            c.from = None;
        }
        if let Some(n) = a.samples {
            c.samples = Some(n);
        }
        set!(c, a: seed, epochs, windows_per_batch, validation_fraction, dropout, lr, head_hidden_dims,
            hidden_dim, n_spatial_layers, ip_feature_dim);
        c.freeze_encoder |= a.freeze_encoder;
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Classifier checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Labeled graph corpus.
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvaluateArgs {
    pub fn apply(&self, c: &mut EvaluateRun) {
        for (dst, src) in [
            (&mut c.model, &self.model),
            (&mut c.graphs, &self.graphs),
            (&mut c.out, &self.out),
        ] {
            if let Some(v) = src {
                *dst = Some(v.clone());
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    /// Experiment file (exp.json) or manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pretrained base checkpoint.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Task as NAME=GRAPHS; repeatable. Replaces the tasks of the config.
    #[arg(long = "task", value_parser = parse_task)]
    pub tasks: Vec<TaskSpec>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sample_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub reference_epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub head_hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub windows_per_batch: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Worker threads for grid cells; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn parse_task(s: &str) -> Result<TaskSpec, String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=GRAPHS, got `{s}`"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=GRAPHS, got `{s}`"));
    }
    Ok(TaskSpec {
        name: name.into(),
        graphs: path.into(),
        test_fraction: 0.2,
        split_seed: 0,
    })
}

impl FewshotArgs {
    pub fn apply(&self, c: &mut FewshotRun) {
        let a = self;
        for (dst, src) in [(&mut c.base, &a.base), (&mut c.out, &a.out)] {
            if let Some(v) = src {
                *dst = Some(v.clone());
            }
        }
        if !a.tasks.is_empty() {
            c.tasks = a.tasks.clone();
        }
        set!(c, a: sample_sizes, seeds, epochs, reference_epochs, head_hidden_dims, lr, dropout, windows_per_batch,
            validation_fraction, master_seed, jobs);
    }
}

pub fn parse<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(args)
}

pub(crate) fn usage_error(e: &clap::Error) -> CliError {
    CliError::Usage(e.render().to_string())
}
