//! Self-supervised link-prediction pretraining.
//!
//! Every real edge of a window is scored against one fake edge obtained by
//! corrupting its destination, and the encoder plus per-type decoders are
//! trained with binary cross-entropy to tell them apart.

mod negatives;

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use negatives::{sample_negatives, NegativeSample, NegativeSet, Shortfall};

use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::graph::{EdgeType, WindowGraph};
use crate::model::{encode, score_edges, EdgeBatch, Model, ModelConfig, WindowIndex};
use crate::nn::{zero_grads, AdamConfig, AdamState, ParamSet, Tape, Var};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub windows_per_batch: usize,
    /// Fake edges per real edge; only 1.0 is supported.
    pub negative_ratio: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Stop after this many epochs without a better validation AUC.
    pub patience: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            windows_per_batch: 4,
            negative_ratio: 1.0,
            seed: 0,
            validation_fraction: 0.1,
            patience: None,
            adam: AdamConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.windows_per_batch == 0 {
            return Err(Error::Config("epochs and windows_per_batch must be at least 1".into()));
        }
        if self.negative_ratio != 1.0 {
            return Err(Error::Config(format!(
                "negative_ratio must be 1.0 (one fake edge per real edge), got {}",
                self.negative_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    /// Parameters of the epoch with the best validation AUC.
    pub model: Model,
    pub log: Vec<PretrainEpoch>,
    pub best_epoch: usize,
    pub train_windows: Vec<usize>,
    pub val_windows: Vec<usize>,
    /// Real edges left without a fake partner, summed over all sampling.
    pub shortfall: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub auc: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub n_edges: usize,
}

/// Seeded split of `n` items into (train, validation) index lists, both
/// sorted. At least one item always stays in training; when nothing is
/// left for validation the training set doubles as validation set.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let n_val = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    if val.is_empty() {
        val = train.clone();
    }
    (train, val)
}

/// Real edges plus `negatives` as one batch, with 1/0 targets per type.
fn link_batch(index: &WindowIndex, negatives: &NegativeSet) -> (EdgeBatch, [Vec<f32>; 7]) {
    let mut batch = EdgeBatch::default();
    for t in EdgeType::ALL {
        let rel = index.relation(t);
        batch.src[t.index()].extend_from_slice(&rel.src);
        batch.dst[t.index()].extend_from_slice(&rel.dst);
    }
    let positives: [usize; 7] = std::array::from_fn(|i| batch.src[i].len());
    negatives.extend_batch(index, &mut batch);
    let targets = std::array::from_fn(|i| {
        let mut t = vec![1.0f32; positives[i]];
        t.resize(batch.src[i].len(), 0.0);
        t
    });
    (batch, targets)
}

struct Scored {
    /// Sum of per-edge BCE on the tape, or `None` for an edge-free window.
    loss_sum: Option<Var>,
    n_edges: usize,
}

fn score_window(
    tape: &mut Tape<f32>,
    index: &WindowIndex,
    negatives: &NegativeSet,
    cfg: &ModelConfig,
    params: &ParamSet,
    collect: Option<(&mut Vec<f64>, &mut Vec<bool>)>,
) -> Result<Scored> {
    let (batch, targets) = link_batch(index, negatives);
    if batch.is_empty() {
        return Ok(Scored {
            loss_sum: None,
            n_edges: 0,
        });
    }
    let emb = encode(tape, index, cfg, params)?;
    let scores = score_edges(tape, &emb, &batch, params)?;
    let mut loss_sum = None;
    for &(t, logits) in &scores {
        let y = &targets[t.index()];
        let mean = tape.bce_with_logits(logits, y)?;
        let sum = tape.scale(mean, y.len() as f32);
        loss_sum = Some(match loss_sum {
            None => sum,
            Some(acc) => tape.add(acc, sum)?,
        });
    }
    if let Some((out_scores, out_labels)) = collect {
        for &(t, logits) in &scores {
            out_scores.extend(tape.value(logits).iter().map(|&v| v as f64));
            out_labels.extend(targets[t.index()].iter().map(|&y| y == 1.0));
        }
    }
    Ok(Scored {
        loss_sum,
        n_edges: batch.len(),
    })
}

fn validation_negatives(windows: &[WindowGraph], seed: u64) -> Vec<NegativeSet> {
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| sample_negatives(w, seed::derive_indexed(seed, "validation-negatives", i as u64)))
        .collect()
}

fn link_metrics(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    indices: &[&WindowIndex],
    negatives: &[NegativeSet],
) -> Result<LinkMetrics> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut loss = 0.0f64;
    let mut n = 0usize;
    for (index, neg) in indices.iter().zip(negatives) {
        let mut tape = Tape::new();
        let s = score_window(
            &mut tape,
            index,
            neg,
            model_cfg,
            params,
            Some((&mut scores, &mut labels)),
        )?;
        if let Some(l) = s.loss_sum {
            loss += tape.value(l)[0] as f64;
            n += s.n_edges;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no edges to score".into()));
    }
    let correct = scores.iter().zip(&labels).filter(|(&s, &l)| (s > 0.0) == l).count();
    Ok(LinkMetrics {
        auc: roc_auc(&scores, &labels)?,
        accuracy: correct as f64 / n as f64,
        loss: loss / n as f64,
        n_edges: n,
    })
}

/// Link-prediction quality of a model on `graphs`, with negatives drawn
/// from `seed`.
pub fn evaluate_link_prediction(model: &Model, graphs: &[WindowGraph], seed: u64) -> Result<LinkMetrics> {
    let indices: Vec<WindowIndex> = graphs.iter().map(WindowIndex::new).collect();
    let refs: Vec<&WindowIndex> = indices.iter().collect();
    let negatives = validation_negatives(graphs, seed);
    link_metrics(&model.config, &model.params, &refs, &negatives)
}

pub fn pretrain(graphs: &[WindowGraph], model_cfg: &ModelConfig, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    pretrain_from(graphs, Model::init_pretrain(model_cfg.clone())?, cfg)
}

/// Pretrain starting from the given model's parameters.
pub fn pretrain_from(graphs: &[WindowGraph], model: Model, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::InvalidInput("no graphs to pretrain on".into()));
    }
    let Model {
        config: model_cfg,
        kind,
        mut params,
    } = model;
    let indices: Vec<WindowIndex> = graphs.iter().map(WindowIndex::new).collect();
    let (train, val) = split_indices(graphs.len(), cfg.validation_fraction, seed::derive(cfg.seed, "split"));
    let val_graphs: Vec<WindowGraph> = val.iter().map(|&i| graphs[i].clone()).collect();
    let val_refs: Vec<&WindowIndex> = val.iter().map(|&i| &indices[i]).collect();
    let val_negatives = validation_negatives(&val_graphs, seed::derive(cfg.seed, "validation"));
    let mut shortfall: usize = val_negatives.iter().map(NegativeSet::total_shortfall).sum();

    let mut adam = AdamState::new(cfg.adam, &params);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut seed::rng(seed::derive_indexed(cfg.seed, "order", epoch as u64)));
        let epoch_seed = seed::derive_indexed(cfg.seed, "negatives", epoch as u64);
        let mut loss_total = 0.0f64;
        let mut edges_total = 0usize;
        for chunk in order.chunks(cfg.windows_per_batch) {
            let negatives: Vec<NegativeSet> = chunk
                .iter()
                .map(|&i| sample_negatives(&graphs[i], seed::derive_indexed(epoch_seed, "window", i as u64)))
                .collect();
            shortfall += negatives.iter().map(NegativeSet::total_shortfall).sum::<usize>();
            let batch_edges: usize = chunk
                .iter()
                .zip(&negatives)
                .map(|(&i, n)| {
                    EdgeType::ALL
                        .iter()
                        .map(|&t| indices[i].relation(t).len())
                        .sum::<usize>()
                        + n.samples.len()
                })
                .sum();
            if batch_edges == 0 {
                continue;
            }
            zero_grads(&mut params);
            for (&i, neg) in chunk.iter().zip(&negatives) {
                let mut tape = Tape::new();
                let s = score_window(&mut tape, &indices[i], neg, &model_cfg, &params, None)?;
                if let Some(l) = s.loss_sum {
                    loss_total += tape.value(l)[0] as f64;
                    let scaled = tape.scale(l, 1.0 / batch_edges as f32);
                    tape.backward(scaled, &mut params)?;
                }
            }
            edges_total += batch_edges;
            adam.step(&mut params)?;
        }
        let metrics = link_metrics(&model_cfg, &params, &val_refs, &val_negatives)?;
        log.push(PretrainEpoch {
            epoch,
            train_loss: if edges_total > 0 {
                loss_total / edges_total as f64
            } else {
                f64::NAN
            },
            val_loss: metrics.loss,
            val_auc: metrics.auc,
        });
        if best.as_ref().is_none_or(|(auc, _, _)| metrics.auc > *auc) {
            best = Some((metrics.auc, epoch, params.detached()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(PretrainOutcome {
        model: Model {
            config: model_cfg,
            kind,
            params: best_params,
        },
        log,
        best_epoch,
        train_windows: train,
        val_windows: val,
        shortfall,
    })
}

pub fn write_pretrain_log<W: Write>(w: W, log: &[PretrainEpoch]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "val_loss", "val_auc"])?;
    for e in log {
        out.write_record([
            e.epoch.to_string(),
            format!("{:.6}", e.train_loss),
            format!("{:.6}", e.val_loss),
            format!("{:.6}", e.val_auc),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<log>", e))?;
    Ok(())
}
