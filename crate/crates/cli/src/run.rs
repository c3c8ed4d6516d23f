use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use flowgnn::eval::{generate_synthetic, run_fewshot, Metric, Strategy, TaskData};
use flowgnn::finetune::{evaluate_classifier, finetune, predict, write_finetune_log, FinetuneConfig, Init};
use flowgnn::graph::{build_windows_parallel, read_corpus, write_corpus, GraphCorpus, WindowGraph};
use flowgnn::ingest::{
    encode_labels, parse_flows, sort_by_time, write_flows_file, FeatureSpec, FlowRecord, FlowSchema, LabelCodec,
    PreprocessConfig,
};
use flowgnn::model::{Model, ModelConfig, ModelKind};
use flowgnn::pretrain::{pretrain, write_pretrain_log, PretrainConfig};
use flowgnn::seed;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    require, BuildGraphsRun, EvaluateRun, FewshotRun, FinetuneRun, IngestRun, PretrainRun, SynthRun,
    EXPERIMENT_FORMAT_VERSION,
};
use crate::CliError;

/// What a finished subcommand reports back for its manifest.
pub struct Done {
    pub dir: PathBuf,
    pub master_seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Validation(format!(
            "input file not found: {}",
            path.display()
        )))
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, s + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
    ))
}

/// `base.ckpt` -> `base.log.csv`
fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.csv")
}

fn resolve_schema(name: &str) -> Result<FlowSchema, CliError> {
    match name {
        "default" => Ok(FlowSchema::default()),
        "netflow_v9" => Ok(FlowSchema::netflow_v9()),
        path => {
            let path = existing(Path::new(path))?;
            let s =
                std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&s).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
        }
    }
}

fn schema_inputs(name: &str) -> Vec<PathBuf> {
    match name {
        "default" | "netflow_v9" => vec![],
        path => vec![PathBuf::from(path)],
    }
}

/// Parse, report malformed rows on stderr and sort by start time.
fn read_records(input: &Path, schema: &str) -> Result<(Vec<FlowRecord>, usize), CliError> {
    let schema = resolve_schema(schema)?;
    let parsed = parse_flows(existing(input)?, &schema)?;
    for m in parsed.malformed.iter().take(5) {
        eprintln!("warning: {} line {}: {}", input.display(), m.line, m.reason);
    }
    if parsed.malformed_count() > 5 {
        eprintln!("warning: {} further malformed rows", parsed.malformed_count() - 5);
    }
    let malformed = parsed.malformed_count();
    let mut records = parsed.records;
    if records.is_empty() {
        return Err(CliError::Validation(format!("{}: no flow records", input.display())));
    }
    sort_by_time(&mut records);
    Ok((records, malformed))
}

enum Labeled {
    All,
    None,
    Partial(usize),
}

fn labeled(records: &[FlowRecord]) -> Labeled {
    let n = records.iter().filter(|r| r.label.is_some()).count();
    match n {
        0 => Labeled::None,
        n if n == records.len() => Labeled::All,
        _ => Labeled::Partial(records.iter().position(|r| r.label.is_none()).unwrap_or(0)),
    }
}

pub fn synth(c: &SynthRun) -> Result<Done, CliError> {
    require(&[("out", c.out.is_some())])?;
    let out = c.out.clone().unwrap();
    let records = generate_synthetic(&c.synth_config())?;
    let dir = parent_dir(&out);
    create_dir(&dir)?;
    write_flows_file(&out, &records, !c.unlabeled)?;
    Ok(Done {
        dir,
        master_seed: Some(c.seed),
        inputs: vec![],
        outputs: vec![out.clone()],
        summary: format!("wrote {} flows to {}", records.len(), out.display()),
    })
}

#[derive(Serialize)]
struct IngestReport {
    records: usize,
    malformed: usize,
    labeled: bool,
    class_names: Vec<String>,
    feature_dim: usize,
}

pub fn ingest(c: &IngestRun) -> Result<Done, CliError> {
    require(&[("input", c.input.is_some()), ("out", c.out.is_some())])?;
    let (input, dir) = (c.input.clone().unwrap(), c.out.clone().unwrap());
    let (records, malformed) = read_records(&input, &c.schema)?;
    let mut inputs = vec![input.clone()];
    inputs.extend(schema_inputs(&c.schema));
    let spec = match &c.features {
        Some(p) => {
            inputs.push(p.clone());
            let base = FeatureSpec::load(existing(p)?)?;
            if c.refit_numeric {
                base.refit_numeric(&records)?
            } else {
                base
            }
        }
        None => FeatureSpec::fit(&records, &PreprocessConfig { clamp: c.clamp })?,
    };
    let codec = match labeled(&records) {
        Labeled::All => Some(encode_labels(&records)?.0),
        Labeled::None => None,
        Labeled::Partial(i) => {
            return Err(CliError::Validation(format!(
                "{}: record {i} has no label while others do",
                input.display()
            )))
        }
    };
    create_dir(&dir)?;
    let flows = dir.join("flows.csv");
    let features = dir.join("features.json");
    let report = dir.join("ingest_report.json");
    write_flows_file(&flows, &records, codec.is_some())?;
    spec.save(&features)?;
    let mut outputs = vec![flows, features];
    if let Some(codec) = &codec {
        let labels = dir.join("labels.json");
        codec.save(&labels)?;
        outputs.push(labels);
    }
    write_json(
        &report,
        &IngestReport {
            records: records.len(),
            malformed,
            labeled: codec.is_some(),
            class_names: codec.as_ref().map(|c| c.class_names().to_vec()).unwrap_or_default(),
            feature_dim: spec.output_dim,
        },
    )?;
    outputs.push(report);
    Ok(Done {
        dir,
        master_seed: None,
        inputs,
        outputs,
        summary: format!(
            "{} records ({malformed} malformed rows skipped), {} features, {}",
            records.len(),
            spec.output_dim,
            match &codec {
                Some(c) => format!("{} classes", c.len()),
                None => "unlabeled".into(),
            }
        ),
    })
}

pub fn build_graphs(c: &BuildGraphsRun) -> Result<Done, CliError> {
    require(&[("input", c.input.is_some()), ("out", c.out.is_some())])?;
    let (input, out) = (c.input.clone().unwrap(), c.out.clone().unwrap());
    let graph_cfg = c.graph_config();
    graph_cfg.snapshot_ms()?;
    let (records, _) = read_records(&input, &c.schema)?;
    let mut inputs = vec![input.clone()];
    inputs.extend(schema_inputs(&c.schema));
    let spec = match &c.features {
        Some(p) => {
            inputs.push(p.clone());
            FeatureSpec::load(existing(p)?)?
        }
        None => FeatureSpec::fit(&records, &PreprocessConfig { clamp: c.clamp })?,
    };
    let encoded: Option<(LabelCodec, Vec<usize>)> = if c.unlabeled {
        None
    } else {
        match (labeled(&records), &c.labels) {
            (Labeled::All, Some(p)) => {
                inputs.push(p.clone());
                let codec = LabelCodec::load(existing(p)?)?;
                let idx = codec.encode(&records)?;
                Some((codec, idx))
            }
            (Labeled::All, None) => Some(encode_labels(&records)?),
            (Labeled::None, Some(_)) => {
                return Err(CliError::Validation(format!(
                    "--labels given but {} has no labels",
                    input.display()
                )))
            }
            (Labeled::None, None) => None,
            (Labeled::Partial(i), _) => {
                return Err(CliError::Validation(format!(
                    "{}: record {i} has no label while others do (use --unlabeled to drop labels)",
                    input.display()
                )))
            }
        }
    };
    let features = spec.transform(&records);
    let windows = build_windows_parallel(
        &records,
        &features,
        encoded.as_ref().map(|(_, l)| l.as_slice()),
        &graph_cfg,
        c.jobs.max(1),
    )?;
    let n_windows = windows.len();
    let class_names = encoded.as_ref().map(|(codec, _)| codec.class_names().to_vec());
    let labeled = class_names.is_some();
    let corpus = GraphCorpus::new(spec.output_dim, Some(spec), class_names, windows);
    let dir = parent_dir(&out);
    create_dir(&dir)?;
    write_corpus(&out, &corpus)?;
    Ok(Done {
        dir,
        master_seed: None,
        inputs,
        outputs: vec![out.clone()],
        summary: format!(
            "{} flows in {n_windows} windows{} written to {}",
            records.len(),
            if labeled { " (labeled)" } else { "" },
            out.display()
        ),
    })
}

fn load_corpus(path: &Path) -> Result<GraphCorpus, CliError> {
    let corpus = read_corpus(existing(path)?)?;
    if corpus.windows.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: corpus has no windows",
            path.display()
        )));
    }
    Ok(corpus)
}

fn labeled_corpus(path: &Path) -> Result<(GraphCorpus, Vec<String>), CliError> {
    let corpus = load_corpus(path)?;
    let names = corpus
        .class_names
        .clone()
        .ok_or_else(|| CliError::Validation(format!("{}: corpus carries no labels", path.display())))?;
    Ok((corpus, names))
}

pub fn pretrain_cmd(c: &PretrainRun) -> Result<Done, CliError> {
    require(&[("graphs", c.graphs.is_some()), ("out", c.out.is_some())])?;
    let (graphs, out) = (c.graphs.clone().unwrap(), c.out.clone().unwrap());
    let corpus = load_corpus(&graphs)?;
    let model_cfg = ModelConfig {
        feature_dim: corpus.feature_dim,
        ip_feature_dim: c.ip_feature_dim,
        hidden_dim: c.hidden_dim,
        n_spatial_layers: c.n_spatial_layers,
        n_classes: None,
        seed: seed::derive(c.seed, "model"),
        ..Default::default()
    };
    let mut cfg = PretrainConfig {
        epochs: c.epochs,
        windows_per_batch: c.windows_per_batch,
        seed: seed::derive(c.seed, "pretrain"),
        validation_fraction: c.validation_fraction,
        patience: c.patience,
        ..Default::default()
    };
    cfg.adam.lr = c.lr;
    let outcome = pretrain(&corpus.windows, &model_cfg, &cfg)?;
    let best = &outcome.log[outcome.best_epoch - 1];
    let dir = parent_dir(&out);
    create_dir(&dir)?;
    outcome.model.save(
        &out,
        json!({
            "best_epoch": outcome.best_epoch,
            "val_auc": best.val_auc,
            "train_windows": outcome.train_windows.len(),
            "val_windows": outcome.val_windows.len(),
            "negative_shortfall": outcome.shortfall,
        }),
    )?;
    let log = log_path(&out);
    write_pretrain_log(create(&log)?, &outcome.log)?;
    Ok(Done {
        dir,
        master_seed: Some(c.seed),
        inputs: vec![graphs],
        outputs: vec![out, log],
        summary: format!(
            "{} parameters, best epoch {} of {}, validation AUC {:.4}",
            outcome.model.num_parameters(),
            outcome.best_epoch,
            outcome.log.len(),
            best.val_auc
        ),
    })
}

pub fn finetune_cmd(c: &FinetuneRun) -> Result<Done, CliError> {
    require(&[
        ("graphs", c.graphs.is_some()),
        ("out", c.out.is_some()),
        ("from or scratch", c.from.is_some() || c.scratch),
    ])?;
    if c.from.is_some() && c.scratch {
        return Err(CliError::Validation(
            "`from` and `scratch` are mutually exclusive".into(),
        ));
    }
    let (graphs, out) = (c.graphs.clone().unwrap(), c.out.clone().unwrap());
    let (corpus, class_names) = labeled_corpus(&graphs)?;
    let mut inputs = vec![graphs];
    let model_seed = seed::derive(c.seed, "model");
    let (init, model_cfg) = match &c.from {
        Some(p) => {
            inputs.push(p.clone());
            let (base, _) = Model::load(existing(p)?)?;
            if base.config.feature_dim != corpus.feature_dim {
                return Err(flowgnn::Error::Incompatible(vec![format!(
                    "feature_dim (checkpoint {}, corpus {})",
                    base.config.feature_dim, corpus.feature_dim
                )])
                .into());
            }
            let cfg = ModelConfig {
                n_classes: Some(class_names.len()),
                head_hidden_dims: c.head_hidden_dims.clone(),
                seed: model_seed,
                ..base.config.clone()
            };
            (Init::Pretrained(Box::new(base)), cfg)
        }
        None => (
            Init::Scratch,
            ModelConfig {
                feature_dim: corpus.feature_dim,
                ip_feature_dim: c.ip_feature_dim,
                hidden_dim: c.hidden_dim,
                n_spatial_layers: c.n_spatial_layers,
                n_classes: Some(class_names.len()),
                head_hidden_dims: c.head_hidden_dims.clone(),
                seed: model_seed,
            },
        ),
    };
    let mut cfg = FinetuneConfig {
        epochs: c.epochs,
        n_train_samples: c.samples,
        seed: seed::derive(c.seed, "finetune"),
        windows_per_batch: c.windows_per_batch,
        validation_fraction: c.validation_fraction,
        dropout: c.dropout,
        freeze_encoder: c.freeze_encoder,
        ..Default::default()
    };
    cfg.adam.lr = c.lr;
    let outcome = finetune(&corpus.windows, &init, &model_cfg, &cfg)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let best = &outcome.log[outcome.best_epoch - 1];
    let dir = parent_dir(&out);
    create_dir(&dir)?;
    outcome.model.save(
        &out,
        json!({
            "class_names": class_names,
            "best_epoch": outcome.best_epoch,
            "val_macro_f1": best.val_macro_f1,
            "train_samples": outcome.plan.n_samples(),
            "warnings": outcome.warnings,
        }),
    )?;
    let log = log_path(&out);
    write_finetune_log(create(&log)?, &outcome.log)?;
    Ok(Done {
        dir,
        master_seed: Some(c.seed),
        inputs,
        outputs: vec![out, log],
        summary: format!(
            "{} training samples, best epoch {} of {}, validation macro F1 {:.4}",
            outcome.plan.n_samples(),
            outcome.best_epoch,
            outcome.log.len(),
            best.val_macro_f1
        ),
    })
}

#[derive(Serialize)]
struct EvaluationFile<'a> {
    class_names: &'a [String],
    loss: f64,
    report: &'a flowgnn::eval::MetricsReport,
}

fn write_predictions(
    path: &Path,
    windows: &[WindowGraph],
    preds: &flowgnn::finetune::Predictions,
    class_names: &[String],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = ["window", "snapshot", "flow", "label", "predicted"]
        .map(String::from)
        .to_vec();
    header.extend(class_names.iter().map(|c| format!("logit_{c}")));
    let csv_err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    let k = preds.n_classes;
    let mut row_i = 0;
    for (wi, win) in windows.iter().enumerate() {
        for (si, snap) in win.snapshots.iter().enumerate() {
            for fi in 0..snap.n_flows() {
                let label = snap
                    .flow_labels
                    .as_ref()
                    .and_then(|l| l.get(fi))
                    .map_or_else(String::new, |&l| class_names[l as usize].clone());
                let mut rec = vec![
                    wi.to_string(),
                    si.to_string(),
                    fi.to_string(),
                    label,
                    class_names[preds.classes[row_i]].clone(),
                ];
                rec.extend(
                    preds.logits[row_i * k..(row_i + 1) * k]
                        .iter()
                        .map(|v| format!("{v:.6}")),
                );
                w.write_record(&rec).map_err(csv_err)?;
                row_i += 1;
            }
        }
    }
    w.flush()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn evaluate(c: &EvaluateRun) -> Result<Done, CliError> {
    require(&[
        ("model", c.model.is_some()),
        ("graphs", c.graphs.is_some()),
        ("out", c.out.is_some()),
    ])?;
    let (model_path, graphs, dir) = (
        c.model.clone().unwrap(),
        c.graphs.clone().unwrap(),
        c.out.clone().unwrap(),
    );
    let (model, meta) = Model::load(existing(&model_path)?)?;
    if model.kind != ModelKind::Classifier {
        return Err(CliError::Validation(format!(
            "{} is not a classifier checkpoint",
            model_path.display()
        )));
    }
    let (corpus, class_names) = labeled_corpus(&graphs)?;
    if let Some(trained) = meta
        .get("class_names")
        .and_then(|v| serde_json::from_value::<Vec<String>>(v.clone()).ok())
    {
        if trained != class_names {
            return Err(CliError::Validation(format!(
                "class mismatch: model trained on {trained:?}, corpus has {class_names:?}"
            )));
        }
    }
    let eval = evaluate_classifier(&model, &corpus.windows)?;
    let preds = predict(&model, &corpus.windows)?;
    create_dir(&dir)?;
    let metrics = dir.join("metrics.json");
    let predictions = dir.join("predictions.csv");
    write_json(
        &metrics,
        &EvaluationFile {
            class_names: &class_names,
            loss: eval.loss,
            report: &eval.report,
        },
    )?;
    write_predictions(&predictions, &corpus.windows, &preds, &class_names)?;
    Ok(Done {
        dir,
        master_seed: None,
        inputs: vec![model_path, graphs],
        outputs: vec![metrics, predictions],
        summary: format!(
            "accuracy {:.4}, weighted F1 {:.4}, macro F1 {:.4}",
            eval.report.accuracy, eval.report.weighted_f1, eval.report.macro_f1
        ),
    })
}

pub fn fewshot(c: &FewshotRun) -> Result<Done, CliError> {
    require(&[
        ("base", c.base.is_some()),
        ("tasks", !c.tasks.is_empty()),
        ("out", c.out.is_some()),
    ])?;
    if c.format_version != EXPERIMENT_FORMAT_VERSION {
        return Err(CliError::Validation(format!(
            "unsupported experiment format_version {} (expected {EXPERIMENT_FORMAT_VERSION})",
            c.format_version
        )));
    }
    if c.sample_sizes.is_empty() || c.seeds.is_empty() {
        return Err(CliError::Validation("sample_sizes and seeds must not be empty".into()));
    }
    let (base_path, dir) = (c.base.clone().unwrap(), c.out.clone().unwrap());
    let (base, _) = Model::load(existing(&base_path)?)?;
    let mut inputs = vec![base_path];
    let mut tasks = Vec::new();
    for t in &c.tasks {
        let (corpus, names) = labeled_corpus(&t.graphs)?;
        inputs.push(t.graphs.clone());
        tasks.push(TaskData::split(
            t.name.clone(),
            names,
            corpus.windows,
            t.test_fraction,
            t.split_seed,
        )?);
    }
    let result = run_fewshot(&tasks, &base, &c.fewshot_config())?;
    create_dir(&dir)?;
    let results = dir.join("results.json");
    let table = dir.join("table.csv");
    let curves = dir.join("curves.csv");
    result.write_json(&results)?;
    result.write_table_csv(create(&table)?)?;
    result.write_curves_csv(create(&curves)?)?;
    let smallest = c.sample_sizes.iter().min().copied().unwrap_or_default();
    let mut summary = format!("{} cells, {} failed", result.cells.len(), result.failed_cells());
    if let Some(gap) = result.mean_gap(&Metric::ALL) {
        summary += &format!("; mean percent-loss gap (scratch - pretrained) {gap:.3}");
    }
    for t in &result.tasks {
        if let (Some(s), Some(p)) = (
            result.mean_metric(t, smallest, Strategy::Scratch, Metric::MacroF1),
            result.mean_metric(t, smallest, Strategy::Pretrained, Metric::MacroF1),
        ) {
            summary += &format!("; {t} macro F1 at {smallest}: scratch {s:.4}, pretrained {p:.4}");
        }
    }
    Ok(Done {
        dir,
        master_seed: Some(c.master_seed),
        inputs,
        outputs: vec![results, table, curves],
        summary,
    })
}
