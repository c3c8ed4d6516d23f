//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string.

use flowgnn::eval::{compute_metrics, generate_synthetic, SynthConfig};
use flowgnn::graph::{build_windows, graph_stats, EdgeType, GraphConfig, GraphStats, WindowGraph};
use flowgnn::ingest::{encode_labels, FeatureSpec, PreprocessConfig};
use flowgnn::model::ModelConfig;
use flowgnn::pretrain::{pretrain, PretrainConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn corpus(
    n_flows: usize,
    n_classes: usize,
    seed: u64,
    shift: f64,
    graph: &GraphConfig,
) -> flowgnn::Result<(Vec<WindowGraph>, Vec<String>)> {
    let recs = generate_synthetic(&SynthConfig {
        n_flows,
        n_classes,
        duration_s: n_flows as f64 / 50.0,
        seed,
        shift,
        ..Default::default()
    })?;
    let spec = FeatureSpec::fit(&recs, &PreprocessConfig::default())?;
    let (codec, labels) = encode_labels(&recs)?;
    let ws = build_windows(&recs, &spec.transform(&recs), Some(&labels), graph)?;
    Ok((ws, codec.class_names().to_vec()))
}

pub fn corpus_summary(n_flows: usize, n_classes: usize, seed: u64, shift: f64) -> flowgnn::Result<Value> {
    let (ws, classes) = corpus(n_flows, n_classes, seed, shift, &GraphConfig::default())?;
    let stats: GraphStats = ws.iter().map(graph_stats).sum();
    let mut per_class = vec![0usize; classes.len()];
    for w in &ws {
        for l in w.labels().unwrap_or_default() {
            per_class[l as usize] += 1;
        }
    }
    let edges: serde_json::Map<String, Value> = EdgeType::ALL
        .iter()
        .map(|&t| (t.name().to_string(), json!(stats.edge_count(t))))
        .collect();
    Ok(json!({
        "windows": stats.windows,
        "snapshots": stats.snapshots,
        "flow_nodes": stats.flow_nodes,
        "ip_nodes": stats.ip_nodes,
        "edges": edges,
        "classes": classes.iter().zip(&per_class).map(|(n, c)| json!({"name": n, "flows": c})).collect::<Vec<_>>(),
    }))
}

/// Short snapshots and one window per step keep small corpora learnable
/// within a few epochs.
pub fn pretrain_curve(n_flows: usize, epochs: usize, hidden_dim: usize, lr: f64, seed: u64) -> flowgnn::Result<Value> {
    let graph = GraphConfig {
        snapshot_seconds: 1.0,
        snapshots_per_window: 5,
    };
    let (ws, _) = corpus(n_flows, 5, seed, 0.0, &graph)?;
    let mcfg = ModelConfig {
        feature_dim: ws[0].feature_dim(),
        hidden_dim,
        n_spatial_layers: 2,
        seed,
        ..Default::default()
    };
    let mut pcfg = PretrainConfig {
        epochs,
        seed,
        windows_per_batch: 1,
        validation_fraction: 0.2,
        ..Default::default()
    };
    pcfg.adam.lr = lr;
    let out = pretrain(&ws, &mcfg, &pcfg)?;
    Ok(json!({
        "parameters": out.model.num_parameters(),
        "windows": ws.len(),
        "best_epoch": out.best_epoch,
        "epochs": out.log.iter().map(|e| json!({
            "epoch": e.epoch,
            "train_loss": e.train_loss,
            "val_loss": e.val_loss,
            "val_auc": e.val_auc,
        })).collect::<Vec<_>>(),
    }))
}

fn parse_labels(s: &str) -> flowgnn::Result<Vec<usize>> {
    s.split([',', ' ', '\n', '\t'])
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| flowgnn::Error::InvalidInput(format!("`{t}` is not a class index")))
        })
        .collect()
}

pub fn metrics_report(y_true: &str, y_pred: &str) -> flowgnn::Result<Value> {
    let t = parse_labels(y_true)?;
    let p = parse_labels(y_pred)?;
    if t.len() != p.len() {
        return Err(flowgnn::Error::InvalidInput(format!(
            "{} true labels but {} predictions",
            t.len(),
            p.len()
        )));
    }
    let k = t.iter().chain(&p).max().map_or(0, |m| m + 1);
    let r = compute_metrics(&t, &p, k)?;
    Ok(serde_json::to_value(r)?)
}

#[wasm_bindgen(js_name = corpusSummary)]
pub fn corpus_summary_js(n_flows: usize, n_classes: usize, seed: u32, shift: f64) -> Result<String, JsValue> {
    corpus_summary(n_flows, n_classes, seed as u64, shift)
        .map(|v| v.to_string())
        .map_err(js_err)
}

#[wasm_bindgen(js_name = pretrainCurve)]
pub fn pretrain_curve_js(
    n_flows: usize,
    epochs: usize,
    hidden_dim: usize,
    lr: f64,
    seed: u32,
) -> Result<String, JsValue> {
    pretrain_curve(n_flows, epochs, hidden_dim, lr, seed as u64)
        .map(|v| v.to_string())
        .map_err(js_err)
}

#[wasm_bindgen(js_name = metricsReport)]
pub fn metrics_report_js(y_true: &str, y_pred: &str) -> Result<String, JsValue> {
    metrics_report(y_true, y_pred).map(|v| v.to_string()).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_counts_add_up() {
        let v = corpus_summary(600, 3, 1, 0.0).unwrap();
        let flows: u64 = v["classes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["flows"].as_u64().unwrap())
            .sum();
        assert_eq!(flows, 600);
        assert_eq!(v["flow_nodes"], 600);
        assert_eq!(v["edges"]["IpToFlowSrc"], 600);
    }

    #[test]
    fn pretrain_curve_has_one_entry_per_epoch() {
        let v = pretrain_curve(400, 2, 4, 1e-3, 0).unwrap();
        assert_eq!(v["epochs"].as_array().unwrap().len(), 2);
        assert!(v["parameters"].as_u64().unwrap() > 0);
    }

    #[test]
    fn metrics_from_text() {
        let v = metrics_report("0, 1, 1 2", "0 1 2 2").unwrap();
        assert_eq!(v["accuracy"], 0.75);
        assert_eq!(v["confusion"][1][2], 1);
        assert!(metrics_report("0 1", "0").is_err());
        assert!(metrics_report("0 x", "0 1").is_err());
    }
}
