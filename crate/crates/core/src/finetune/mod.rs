//! Supervised flow classification, from scratch or from a pretrained
//! encoder, with model selection on validation macro F1.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricsReport};
use crate::graph::WindowGraph;
use crate::model::{classify_flows, encode, Model, ModelConfig, ModelKind, WindowIndex};
use crate::nn::{zero_grads, AdamConfig, AdamState, ParamSet, Tape};
use crate::seed;

/// Starting point of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Scratch,
    Pretrained(Box<Model>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Cap on labeled training flows, drawn stratified by class.
    pub n_train_samples: Option<usize>,
    pub seed: u64,
    pub windows_per_batch: usize,
    pub validation_fraction: f64,
    pub dropout: f64,
    /// Train the head only.
    pub freeze_encoder: bool,
    pub adam: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            n_train_samples: None,
            seed: 0,
            windows_per_batch: 4,
            validation_fraction: 0.2,
            dropout: 0.0,
            freeze_encoder: false,
            adam: AdamConfig::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.windows_per_batch == 0 {
            return Err(Error::Config("epochs and windows_per_batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.n_train_samples == Some(0) {
            return Err(Error::Config("n_train_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

/// Which windows and flows take part in training and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub train_windows: Vec<usize>,
    pub val_windows: Vec<usize>,
    /// Per training window, the window-global indices of supervised flows.
    /// Windows without a sampled flow are absent.
    pub samples: Vec<(usize, Vec<u32>)>,
}

impl TrainingPlan {
    pub fn n_samples(&self) -> usize {
        self.samples.iter().map(|(_, s)| s.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    /// Parameters of the epoch with the best validation macro F1.
    pub model: Model,
    pub log: Vec<FinetuneEpoch>,
    pub best_epoch: usize,
    pub plan: TrainingPlan,
    pub warnings: Vec<String>,
}

fn window_labels(w: &WindowGraph) -> Result<Vec<u32>> {
    w.labels()
        .ok_or_else(|| Error::InvalidInput("fine-tuning needs labeled graphs".into()))
}

/// Most frequent label, lowest index on ties; `None` for empty windows.
fn dominant_class(labels: &[u32]) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
}

/// Split windows into train/validation stratified by dominant class.
fn stratified_split(labels: &[Vec<u32>], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<Option<u32>, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(dominant_class(l)).or_default().push(i);
    }
    let n = labels.len();
    let n_val = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let n_val = if fraction > 0.0 && n >= 2 { n_val.max(1) } else { n_val };
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let quota = allocate(&sizes, n_val, false);
    let mut rng = seed::rng(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for ((_, mut members), k) in groups.into_iter().zip(quota) {
        members.shuffle(&mut rng);
        val.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    if val.is_empty() {
        val = train.clone();
    }
    (train, val)
}

/// Per-class sample counts summing to `n`, proportional to `counts` by the
/// largest-remainder rule. With `cover`, every present class gets at least
/// one when `n` allows.
fn allocate(counts: &[usize], n: usize, cover: bool) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let quotas: Vec<f64> = counts.iter().map(|&c| n as f64 * c as f64 / total as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = n - alloc.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if cover && n >= present {
        for c in 0..counts.len() {
            if counts[c] > 0 && alloc[c] == 0 {
                let donor = (0..counts.len())
                    .max_by_key(|&d| (alloc[d], std::cmp::Reverse(d)))
                    .unwrap();
                alloc[donor] -= 1;
                alloc[c] = 1;
            }
        }
    }
    alloc
}

/// Decide the train/validation split and the supervised flows.
pub fn plan_training(graphs: &[WindowGraph], n_classes: usize, cfg: &FinetuneConfig) -> Result<TrainingPlan> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::InvalidInput("no graphs to fine-tune on".into()));
    }
    let labels: Vec<Vec<u32>> = graphs.iter().map(window_labels).collect::<Result<_>>()?;
    if let Some(&bad) = labels.iter().flatten().find(|&&l| l as usize >= n_classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside {n_classes} classes")));
    }
    let (train, val) = stratified_split(&labels, cfg.validation_fraction, seed::derive(cfg.seed, "split"));
    let pool: Vec<(usize, u32)> = train
        .iter()
        .flat_map(|&w| (0..labels[w].len() as u32).map(move |i| (w, i)))
        .collect();
    if pool.is_empty() {
        return Err(Error::InvalidInput("training windows contain no flows".into()));
    }
    let chosen: Vec<(usize, u32)> = match cfg.n_train_samples {
        None => pool,
        Some(n) if n > pool.len() => {
            return Err(Error::Config(format!(
                "n_train_samples = {n} exceeds the {} labeled training flows",
                pool.len()
            )))
        }
        Some(n) => {
            let mut by_class: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n_classes];
            for &(w, i) in &pool {
                by_class[labels[w][i as usize] as usize].push((w, i));
            }
            let alloc = allocate(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), n, true);
            let mut rng = seed::rng(seed::derive(cfg.seed, "samples"));
            let mut chosen: Vec<(usize, u32)> = by_class
                .iter()
                .zip(&alloc)
                .flat_map(|(members, &k)| members.choose_multiple(&mut rng, k).copied().collect::<Vec<_>>())
                .collect();
            chosen.sort_unstable();
            chosen
        }
    };
    let mut samples: Vec<(usize, Vec<u32>)> = Vec::new();
    for (w, i) in chosen {
        match samples.last_mut() {
            Some((last, v)) if *last == w => v.push(i),
            _ => samples.push((w, vec![i])),
        }
    }
    Ok(TrainingPlan {
        train_windows: train,
        val_windows: val,
        samples,
    })
}

/// Loss and predictions of a classifier over whole windows.
pub struct Evaluation {
    pub loss: f64,
    pub report: MetricsReport,
}

fn class_count(model: &Model) -> Result<usize> {
    match (model.kind, model.config.n_classes) {
        (ModelKind::Classifier, Some(k)) => Ok(k),
        _ => Err(Error::Incompatible(vec!["model has no classification head".into()])),
    }
}

fn forward_window(model_cfg: &ModelConfig, params: &ParamSet, index: &WindowIndex) -> Result<(Vec<f32>, usize)> {
    let mut tape = Tape::new();
    let emb = encode(&mut tape, index, model_cfg, params)?;
    let mut rng = seed::rng(0);
    let logits = classify_flows(&mut tape, emb.flow, model_cfg, params, 0.0, false, &mut rng)?;
    let (_, k) = tape.dims(logits);
    Ok((tape.value(logits).to_vec(), k))
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn evaluate_indices(model_cfg: &ModelConfig, params: &ParamSet, indices: &[&WindowIndex]) -> Result<Evaluation> {
    let n_classes = model_cfg.n_classes.unwrap_or(0);
    let (mut y_true, mut y_pred) = (Vec::new(), Vec::new());
    let mut loss = 0.0f64;
    for index in indices {
        let labels = index
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("evaluation needs labeled graphs".into()))?;
        if labels.is_empty() {
            continue;
        }
        let (logits, k) = forward_window(model_cfg, params, index)?;
        for (row, &y) in logits.chunks(k).zip(labels) {
            let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            loss += lse - row[y as usize] as f64;
            y_true.push(y as usize);
            y_pred.push(argmax(row));
        }
    }
    let report = compute_metrics(&y_true, &y_pred, n_classes)?;
    Ok(Evaluation {
        loss: loss / y_true.len() as f64,
        report,
    })
}

/// Metrics of a classifier on labeled graphs.
pub fn evaluate_classifier(model: &Model, graphs: &[WindowGraph]) -> Result<Evaluation> {
    class_count(model)?;
    let indices: Vec<WindowIndex> = graphs.iter().map(WindowIndex::new).collect();
    let refs: Vec<&WindowIndex> = indices.iter().collect();
    evaluate_indices(&model.config, &model.params, &refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub n_classes: usize,
    /// One per flow in (window, snapshot, local index) order.
    pub classes: Vec<usize>,
    /// Row-major `classes.len() × n_classes`.
    pub logits: Vec<f32>,
}

pub fn predict(model: &Model, graphs: &[WindowGraph]) -> Result<Predictions> {
    let n_classes = class_count(model)?;
    let mut out = Predictions {
        n_classes,
        classes: Vec::new(),
        logits: Vec::new(),
    };
    for w in graphs {
        let index = WindowIndex::new(w);
        if index.n_flows == 0 {
            continue;
        }
        let (logits, k) = forward_window(&model.config, &model.params, &index)?;
        out.classes.extend(logits.chunks(k).map(argmax));
        out.logits.extend_from_slice(&logits);
    }
    Ok(out)
}

fn initial_model(init: &Init, model_cfg: &ModelConfig) -> Result<Model> {
    match init {
        Init::Scratch => Model::init_classifier(model_cfg.clone()),
        Init::Pretrained(base) => Model::classifier_from_pretrained(base, model_cfg.clone()),
    }
}

pub fn finetune(
    graphs: &[WindowGraph],
    init: &Init,
    model_cfg: &ModelConfig,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    let n_classes = model_cfg
        .n_classes
        .ok_or_else(|| Error::Config("fine-tuning needs n_classes".into()))?;
    let plan = plan_training(graphs, n_classes, cfg)?;
    finetune_with_plan(graphs, plan, init, model_cfg, cfg)
}

/// Fine-tune with a fixed split and sample set.
pub fn finetune_with_plan(
    graphs: &[WindowGraph],
    plan: TrainingPlan,
    init: &Init,
    model_cfg: &ModelConfig,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let model = initial_model(init, model_cfg)?;
    let n_classes = class_count(&model)?;
    let mut warnings = Vec::new();
    let mut present = vec![false; n_classes];
    let mut trained = vec![false; n_classes];
    for w in graphs {
        for l in window_labels(w)? {
            present[l as usize] = true;
        }
    }
    let indices: Vec<WindowIndex> = graphs.iter().map(WindowIndex::new).collect();
    let mut targets: Vec<Vec<usize>> = Vec::with_capacity(plan.samples.len());
    for (w, flows) in &plan.samples {
        let labels = indices[*w].labels.as_ref().expect("checked above");
        let t: Vec<usize> = flows.iter().map(|&i| labels[i as usize] as usize).collect();
        t.iter().for_each(|&c| trained[c] = true);
        targets.push(t);
    }
    for c in 0..n_classes {
        if !present[c] {
            warnings.push(format!("class {c} does not occur in the data"));
        } else if !trained[c] {
            warnings.push(format!("class {c} has no training sample"));
        }
    }
    let sample_idx: Vec<Arc<[u32]>> = plan.samples.iter().map(|(_, s)| Arc::from(s.as_slice())).collect();
    let val_refs: Vec<&WindowIndex> = plan.val_windows.iter().map(|&i| &indices[i]).collect();

    let Model {
        config: model_cfg,
        kind,
        mut params,
    } = model;
    let mut adam = AdamState::new(cfg.adam, &params);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..plan.samples.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_indexed(cfg.seed, "order", epoch as u64)));
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "dropout", epoch as u64));
        let (mut loss_total, mut n_total) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.windows_per_batch) {
            let batch_n: usize = chunk.iter().map(|&j| targets[j].len()).sum();
            zero_grads(&mut params);
            for &j in chunk {
                let w = plan.samples[j].0;
                let mut tape = Tape::new();
                let emb = encode(&mut tape, &indices[w], &model_cfg, &params)?;
                let rows = tape.row_gather(emb.flow, sample_idx[j].clone())?;
                let logits = classify_flows(&mut tape, rows, &model_cfg, &params, cfg.dropout, true, &mut rng)?;
                let loss = tape.cross_entropy(logits, &targets[j])?;
                loss_total += tape.value(loss)[0] as f64 * targets[j].len() as f64;
                let scaled = tape.scale(loss, targets[j].len() as f32 / batch_n as f32);
                tape.backward(scaled, &mut params)?;
            }
            n_total += batch_n;
            if cfg.freeze_encoder {
                adam.step_filtered(&mut params, |n| !n.starts_with("encoder."))?;
            } else {
                adam.step(&mut params)?;
            }
        }
        let val = evaluate_indices(&model_cfg, &params, &val_refs)?;
        log.push(FinetuneEpoch {
            epoch,
            train_loss: loss_total / n_total as f64,
            val_loss: val.loss,
            val_macro_f1: val.report.macro_f1,
        });
        if best.as_ref().is_none_or(|(f1, _, _)| val.report.macro_f1 > *f1) {
            best = Some((val.report.macro_f1, epoch, params.detached()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(FinetuneOutcome {
        model: Model {
            config: model_cfg,
            kind,
            params: best_params,
        },
        log,
        best_epoch,
        plan,
        warnings,
    })
}

pub fn write_finetune_log<W: Write>(w: W, log: &[FinetuneEpoch]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "val_loss", "val_macro_f1"])?;
    for e in log {
        out.write_record([
            e.epoch.to_string(),
            format!("{:.6}", e.train_loss),
            format!("{:.6}", e.val_loss),
            format!("{:.6}", e.val_macro_f1),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<log>", e))?;
    Ok(())
}
