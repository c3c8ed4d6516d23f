use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curves::normalize_and_average_curves;
use super::metrics::{percent_loss, Metric, MetricsReport};
use crate::error::{Error, Result};
use crate::finetune::{evaluate_classifier, finetune, FinetuneConfig, FinetuneEpoch, Init};
use crate::graph::WindowGraph;
use crate::model::{Model, ModelConfig};
use crate::pretrain::split_indices;
use crate::seed;

pub const FEWSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Scratch,
    Pretrained,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Scratch, Strategy::Pretrained];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Scratch => "scratch",
            Strategy::Pretrained => "pretrained",
        }
    }
}

/// A labeled downstream task with its fixed test split.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub class_names: Vec<String>,
    pub train: Vec<WindowGraph>,
    pub test: Vec<WindowGraph>,
}

impl TaskData {
    /// Hold out a seeded `test_fraction` of the windows as the test set.
    pub fn split(
        name: impl Into<String>,
        class_names: Vec<String>,
        graphs: Vec<WindowGraph>,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if graphs.len() < 2 {
            return Err(Error::InvalidInput("a task needs at least two windows".into()));
        }
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        let (train_idx, test_idx) = split_indices(graphs.len(), test_fraction, seed);
        let mut slots: Vec<Option<WindowGraph>> = graphs.into_iter().map(Some).collect();
        let take = |idx: &[usize], slots: &mut Vec<Option<WindowGraph>>| -> Vec<WindowGraph> {
            idx.iter().map(|&i| slots[i].take().expect("disjoint split")).collect()
        };
        let test = take(&test_idx, &mut slots);
        let train = take(&train_idx, &mut slots);
        Ok(Self {
            name: name.into(),
            class_names,
            train,
            test,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_train_flows(&self) -> usize {
        self.train.iter().map(WindowGraph::n_flows).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Settings shared by every grid cell; `seed` and `n_train_samples`
    /// are overwritten per cell.
    pub finetune: FinetuneConfig,
    pub reference_epochs: usize,
    pub head_hidden_dims: Vec<usize>,
    pub master_seed: u64,
    /// Worker threads for grid cells.
    pub jobs: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![50, 100, 250, 500, 1000, 2500],
            seeds: vec![0, 1, 2, 3, 4],
            finetune: FinetuneConfig::default(),
            reference_epochs: 200,
            head_hidden_dims: vec![64],
            master_seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub task: String,
    pub sample_size: usize,
    pub strategy: Strategy,
    pub seed: u64,
    /// Set when the cell could not be trained.
    pub error: Option<String>,
    pub metrics: Option<MetricsReport>,
    pub best_epoch: usize,
    pub log: Vec<FinetuneEpoch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResult {
    pub task: String,
    pub metrics: MetricsReport,
    pub best_epoch: usize,
    pub log: Vec<FinetuneEpoch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub format_version: u32,
    pub tasks: Vec<String>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub references: Vec<ReferenceResult>,
    pub cells: Vec<CellResult>,
}

/// Seed shared by both strategies of one (task, sample size, seed) cell,
/// so they see the same samples and the same head initialization.
pub fn cell_seed(master: u64, task: &str, sample_size: usize, seed: u64) -> u64 {
    seed::derive(master, &format!("cell/{task}/{sample_size}/{seed}"))
}

fn cell_model_config(base: &ModelConfig, task: &TaskData, head: &[usize], seed: u64) -> ModelConfig {
    ModelConfig {
        n_classes: Some(task.n_classes()),
        head_hidden_dims: head.to_vec(),
        seed,
        ..base.clone()
    }
}

/// Train on all training data of a task from scratch and score the test set.
pub fn train_reference(
    task: &TaskData,
    base_cfg: &ModelConfig,
    cfg: &FewShotConfig,
) -> Result<(Model, ReferenceResult)> {
    let seed = seed::derive(cfg.master_seed, &format!("reference/{}", task.name));
    let model_cfg = cell_model_config(base_cfg, task, &cfg.head_hidden_dims, seed);
    let ft = FinetuneConfig {
        epochs: cfg.reference_epochs,
        n_train_samples: None,
        seed,
        ..cfg.finetune.clone()
    };
    let out = finetune(&task.train, &Init::Scratch, &model_cfg, &ft)?;
    let metrics = evaluate_classifier(&out.model, &task.test)?.report;
    Ok((
        out.model,
        ReferenceResult {
            task: task.name.clone(),
            metrics,
            best_epoch: out.best_epoch,
            log: out.log,
        },
    ))
}

struct CellJob<'a> {
    task: &'a TaskData,
    sample_size: usize,
    strategy: Strategy,
    seed: u64,
}

fn run_cell(job: &CellJob, base: &Model, cfg: &FewShotConfig) -> CellResult {
    let s = cell_seed(cfg.master_seed, &job.task.name, job.sample_size, job.seed);
    let model_cfg = cell_model_config(&base.config, job.task, &cfg.head_hidden_dims, s);
    let ft = FinetuneConfig {
        n_train_samples: Some(job.sample_size),
        seed: s,
        ..cfg.finetune.clone()
    };
    let init = match job.strategy {
        Strategy::Scratch => Init::Scratch,
        Strategy::Pretrained => Init::Pretrained(Box::new(base.clone())),
    };
    let mut cell = CellResult {
        task: job.task.name.clone(),
        sample_size: job.sample_size,
        strategy: job.strategy,
        seed: job.seed,
        error: None,
        metrics: None,
        best_epoch: 0,
        log: vec![],
    };
    let outcome = finetune(&job.task.train, &init, &model_cfg, &ft)
        .and_then(|out| Ok((evaluate_classifier(&out.model, &job.task.test)?.report, out)));
    match outcome {
        Ok((report, out)) => {
            cell.metrics = Some(report);
            cell.best_epoch = out.best_epoch;
            cell.log = out.log;
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Full factorial of tasks × sample sizes × strategies × seeds, plus one
/// reference model per task. Cell failures are recorded, not fatal.
pub fn run_fewshot(tasks: &[TaskData], base: &Model, cfg: &FewShotConfig) -> Result<FewShotResult> {
    if tasks.is_empty() || cfg.sample_sizes.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config(
            "few-shot grid needs tasks, sample sizes and seeds".into(),
        ));
    }
    let mut names: Vec<&str> = tasks.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("task names must be unique".into()));
    }
    let mut references = Vec::with_capacity(tasks.len());
    for task in tasks {
        base.check_encoder(&cell_model_config(&base.config, task, &cfg.head_hidden_dims, 0))?;
        references.push(train_reference(task, &base.config, cfg)?.1);
    }
    let mut jobs = Vec::new();
    for task in tasks {
        for &sample_size in &cfg.sample_sizes {
            for strategy in Strategy::ALL {
                for &seed in &cfg.seeds {
                    jobs.push(CellJob {
                        task,
                        sample_size,
                        strategy,
                        seed,
                    });
                }
            }
        }
    }
    let workers = cfg.jobs.clamp(1, jobs.len());
    let mut cells: Vec<Option<CellResult>> = vec![None; jobs.len()];
    if workers == 1 {
        for (slot, job) in cells.iter_mut().zip(&jobs) {
            *slot = Some(run_cell(job, base, cfg));
        }
    } else {
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|scope| {
            for (slots, js) in cells.chunks_mut(chunk).zip(jobs.chunks(chunk)) {
                scope.spawn(move || {
                    for (slot, job) in slots.iter_mut().zip(js) {
                        *slot = Some(run_cell(job, base, cfg));
                    }
                });
            }
        });
    }
    Ok(FewShotResult {
        format_version: FEWSHOT_FORMAT_VERSION,
        tasks: tasks.iter().map(|t| t.name.clone()).collect(),
        sample_sizes: cfg.sample_sizes.clone(),
        seeds: cfg.seeds.clone(),
        references,
        cells: cells.into_iter().map(|c| c.expect("every job ran")).collect(),
    })
}

impl FewShotResult {
    pub fn reference(&self, task: &str) -> Option<&ReferenceResult> {
        self.references.iter().find(|r| r.task == task)
    }

    fn successful<'a>(
        &'a self,
        task: &'a str,
        size: usize,
        strategy: Strategy,
    ) -> impl Iterator<Item = &'a MetricsReport> + 'a {
        self.cells
            .iter()
            .filter(move |c| c.task == task && c.sample_size == size && c.strategy == strategy)
            .filter_map(|c| c.metrics.as_ref())
    }

    /// Mean test metric over the successful seeds of a cell group.
    pub fn mean_metric(&self, task: &str, size: usize, strategy: Strategy, metric: Metric) -> Option<f64> {
        let v: Vec<f64> = self
            .successful(task, size, strategy)
            .map(|m| m.metric(metric))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean percent loss against the task's reference model.
    pub fn mean_percent_loss(&self, task: &str, size: usize, strategy: Strategy, metric: Metric) -> Option<f64> {
        let reference = self.reference(task)?.metrics.metric(metric);
        let v: Vec<f64> = self
            .successful(task, size, strategy)
            .filter_map(|m| percent_loss(m.metric(metric), reference).ok())
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean of (scratch − pretrained) percent loss over all tasks, sizes and
    /// the given metrics; positive values favor pretraining.
    pub fn mean_gap(&self, metrics: &[Metric]) -> Option<f64> {
        let mut gaps = Vec::new();
        for task in &self.tasks {
            for &size in &self.sample_sizes {
                for &m in metrics {
                    let s = self.mean_percent_loss(task, size, Strategy::Scratch, m);
                    let p = self.mean_percent_loss(task, size, Strategy::Pretrained, m);
                    if let (Some(s), Some(p)) = (s, p) {
                        gaps.push(s - p);
                    }
                }
            }
        }
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Averaged normalized curves per (task, strategy): (train, validation).
    pub fn averaged_curves(&self, task: &str, strategy: Strategy) -> Result<(Vec<f64>, Vec<f64>)> {
        let logs: Vec<&Vec<FinetuneEpoch>> = self
            .cells
            .iter()
            .filter(|c| c.task == task && c.strategy == strategy && c.error.is_none())
            .map(|c| &c.log)
            .collect();
        let train: Vec<Vec<f64>> = logs.iter().map(|l| l.iter().map(|e| e.train_loss).collect()).collect();
        let val: Vec<Vec<f64>> = logs.iter().map(|l| l.iter().map(|e| e.val_loss).collect()).collect();
        Ok((
            normalize_and_average_curves(&train)?,
            normalize_and_average_curves(&val)?,
        ))
    }

    /// Percent-loss table: one row per (metric, sample size, strategy), one
    /// column per task. Empty fields mark groups without a successful run.
    pub fn write_table_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["metric".to_string(), "sample_size".into(), "strategy".into()];
        header.extend(self.tasks.iter().cloned());
        out.write_record(&header)?;
        for m in Metric::ALL {
            for &size in &self.sample_sizes {
                for strategy in Strategy::ALL {
                    let mut row = vec![m.name().to_string(), size.to_string(), strategy.name().to_string()];
                    for task in &self.tasks {
                        row.push(
                            self.mean_percent_loss(task, size, strategy, m)
                                .map_or_else(String::new, |v| format!("{v:.4}")),
                        );
                    }
                    out.write_record(&row)?;
                }
            }
        }
        out.flush().map_err(|e| Error::io("table.csv", e))?;
        Ok(())
    }

    /// Averaged normalized loss curves: task, strategy, curve, epoch, value.
    pub fn write_curves_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["task", "strategy", "curve", "epoch", "value"])?;
        for task in &self.tasks {
            for strategy in Strategy::ALL {
                let Ok((train, val)) = self.averaged_curves(task, strategy) else {
                    continue;
                };
                for (name, curve) in [("train_loss", &train), ("val_loss", &val)] {
                    for (e, v) in curve.iter().enumerate() {
                        out.write_record([
                            task.as_str(),
                            strategy.name(),
                            name,
                            &(e + 1).to_string(),
                            &format!("{v:.6}"),
                        ])?;
                    }
                }
            }
        }
        out.flush().map_err(|e| Error::io("curves.csv", e))?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&s)?;
        if r.format_version != FEWSHOT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported few-shot result version {}",
                r.format_version
            )));
        }
        Ok(r)
    }
}
