//! Model size, link-prediction learning and transfer to a shifted corpus.

use std::time::Instant;

use flowgnn::eval::{
    generate_synthetic, run_fewshot, FewShotConfig, FewShotResult, Metric, Strategy, SynthConfig, TaskData,
};
use flowgnn::graph::{build_windows, GraphConfig, WindowGraph};
use flowgnn::ingest::{encode_labels, FeatureSpec, PreprocessConfig};
use flowgnn::model::{Model, ModelConfig};
use flowgnn::nn::count_parameters;
use flowgnn::pretrain::{evaluate_link_prediction, pretrain, PretrainConfig};

use crate::tol::{
    CURVE_MIN_FRACTION, LINK_BUDGET, LINK_EPOCHS, LINK_MIN_AUC, LINK_SEEDS, PARAMS_MAX, PARAMS_MIN, TRANSFER_BUDGET,
    TRANSFER_SEEDS,
};
use crate::Outcome;

/// Compact encoder used for the learning criteria.
const HIDDEN_DIM: usize = 32;
const SPATIAL_LAYERS: usize = 2;

/// Pretraining corpus A: the default 20K-flow synthetic setting.
fn corpus_a(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        ..Default::default()
    }
}

/// Downstream corpus B: shifted class behaviour on a disjoint address range.
fn corpus_b() -> SynthConfig {
    SynthConfig {
        seed: 100,
        n_flows: 8000,
        duration_s: 200.0,
        shift: 0.7,
        shift_seed: 7,
        address_base: 1,
        ..Default::default()
    }
}

const TASK_TEST_FRACTION: f64 = 0.2;
const TASK_SPLIT_SEED: u64 = 3;
const SAMPLE_SIZES: [usize; 3] = [20, 50, 100];
const REFERENCE_EPOCHS: usize = 200;

pub struct Base {
    model: Model,
    spec: FeatureSpec,
}

fn windows(cfg: &SynthConfig, spec: Option<&FeatureSpec>) -> (Vec<WindowGraph>, FeatureSpec) {
    let recs = generate_synthetic(cfg).unwrap();
    let spec = match spec {
        Some(s) => s.clone(),
        None => FeatureSpec::fit(&recs, &PreprocessConfig::default()).unwrap(),
    };
    let ws = build_windows(&recs, &spec.transform(&recs), None, &GraphConfig::default()).unwrap();
    (ws, spec)
}

pub fn parameter_count() -> Outcome {
    let model = Model::init_pretrain(ModelConfig::default()).unwrap();
    let n = count_parameters(&model.params);
    Outcome::new(
        (PARAMS_MIN..=PARAMS_MAX).contains(&n),
        format!("{n} parameters (in [{PARAMS_MIN}, {PARAMS_MAX}])"),
    )
}

/// Pretrain on corpus A for each seed; score link prediction on a fresh
/// corpus from the same generator. Returns the seed-0 base for transfer.
pub fn link_prediction() -> (Outcome, Option<Base>) {
    let started = Instant::now();
    let mut aucs = Vec::new();
    let mut base = None;
    for s in 0..LINK_SEEDS {
        let (train, spec) = windows(&corpus_a(s), None);
        let held_out_cfg = SynthConfig {
            n_flows: 5000,
            duration_s: 75.0,
            ..corpus_a(1000 + s)
        };
        let (held_out, _) = windows(&held_out_cfg, Some(&spec));
        let mcfg = ModelConfig {
            feature_dim: spec.output_dim,
            hidden_dim: HIDDEN_DIM,
            n_spatial_layers: SPATIAL_LAYERS,
            seed: s,
            ..Default::default()
        };
        let pcfg = PretrainConfig {
            epochs: LINK_EPOCHS,
            seed: s,
            ..Default::default()
        };
        let out = pretrain(&train, &mcfg, &pcfg).unwrap();
        aucs.push(evaluate_link_prediction(&out.model, &held_out, s).unwrap().auc);
        if s == 0 {
            base = Some(Base { model: out.model, spec });
        }
    }
    let mut sorted = aucs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let elapsed = started.elapsed();
    let shown: Vec<String> = aucs.iter().map(|a| format!("{a:.3}")).collect();
    let outcome = Outcome::new(
        median >= LINK_MIN_AUC && elapsed < LINK_BUDGET,
        format!(
            "{LINK_EPOCHS} epochs, {HIDDEN_DIM}x{SPATIAL_LAYERS} encoder, held-out AUC [{}], median {median:.3} (>= {LINK_MIN_AUC}), \
             {:.0}s (< {}s)",
            shown.join(", "),
            elapsed.as_secs_f64(),
            LINK_BUDGET.as_secs()
        ),
    );
    (outcome, base)
}

pub fn transfer(base: Option<Base>) -> (Outcome, Option<FewShotResult>) {
    let Some(base) = base else {
        return (Outcome::fail("no pretrained base"), None);
    };
    let started = Instant::now();
    let recs = generate_synthetic(&corpus_b()).unwrap();
    let spec = base.spec.refit_numeric(&recs).unwrap();
    let (codec, labels) = encode_labels(&recs).unwrap();
    let ws = build_windows(&recs, &spec.transform(&recs), Some(&labels), &GraphConfig::default()).unwrap();
    let task = TaskData::split(
        "B",
        codec.class_names().to_vec(),
        ws,
        TASK_TEST_FRACTION,
        TASK_SPLIT_SEED,
    )
    .unwrap();
    let cfg = FewShotConfig {
        sample_sizes: SAMPLE_SIZES.to_vec(),
        seeds: (0..TRANSFER_SEEDS).collect(),
        reference_epochs: REFERENCE_EPOCHS,
        ..Default::default()
    };
    let r = run_fewshot(&[task], &base.model, &cfg).unwrap();
    let elapsed = started.elapsed();

    let smallest = SAMPLE_SIZES[0];
    let f1 = |size, s| r.mean_metric("B", size, s, Metric::MacroF1).unwrap_or(f64::NAN);
    let per_size: Vec<String> = SAMPLE_SIZES
        .iter()
        .map(|&n| {
            format!(
                "{n}: {:.3}/{:.3}",
                f1(n, Strategy::Scratch),
                f1(n, Strategy::Pretrained)
            )
        })
        .collect();
    let gap = r.mean_gap(&Metric::ALL).unwrap_or(f64::NAN);
    let reference = r.reference("B").map_or(f64::NAN, |x| x.metrics.macro_f1);
    let pass = f1(smallest, Strategy::Pretrained) > f1(smallest, Strategy::Scratch)
        && gap > 0.0
        && r.failed_cells() == 0
        && elapsed < TRANSFER_BUDGET;
    let outcome = Outcome::new(
        pass,
        format!(
            "macro F1 scratch/pretrained by size [{}], reference {reference:.3}; \
             mean percent-loss gap {gap:+.2} (> 0 favours pretrained); {:.0}s (< {}s)",
            per_size.join(", "),
            elapsed.as_secs_f64(),
            TRANSFER_BUDGET.as_secs()
        ),
    );
    (outcome, Some(r))
}

pub fn curves(result: Option<&FewShotResult>) -> Outcome {
    let Some(r) = result else {
        return Outcome::fail("no few-shot result");
    };
    let (scratch, _) = r.averaged_curves("B", Strategy::Scratch).unwrap();
    let (pretrained, _) = r.averaged_curves("B", Strategy::Pretrained).unwrap();
    let below = scratch.iter().zip(&pretrained).filter(|(s, p)| p <= s).count();
    let fraction = below as f64 / scratch.len().max(1) as f64;
    Outcome::new(
        fraction >= CURVE_MIN_FRACTION && !scratch.is_empty(),
        format!(
            "pretrained normalized train loss <= scratch in {below}/{} epochs ({:.0}%, >= {:.0}%)",
            scratch.len(),
            100.0 * fraction,
            100.0 * CURVE_MIN_FRACTION
        ),
    )
}
