//! Metrics, few-shot experiments and the synthetic traffic generator.

mod curves;
mod fewshot;
mod metrics;
mod synth;

pub use curves::{normalize_and_average_curves, normalize_curve};
pub use fewshot::{
    cell_seed, run_fewshot, train_reference, CellResult, FewShotConfig, FewShotResult, ReferenceResult, Strategy,
    TaskData, FEWSHOT_FORMAT_VERSION,
};
pub use metrics::{compute_metrics, percent_loss, roc_auc, ClassMetrics, Metric, MetricsReport};
pub use synth::{class_signatures, generate_synthetic, ClassSignature, PairPattern, SynthConfig};
