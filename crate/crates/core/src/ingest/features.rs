use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{has_ports, FlowRecord};
use crate::error::{Error, Result};

pub const FEATURE_FORMAT_VERSION: u32 = 1;

const NUMERIC: [&str; 13] = [
    "duration_ms",
    "bytes_in",
    "bytes_out",
    "pkts_in",
    "pkts_out",
    "tcp_fin",
    "tcp_syn",
    "tcp_rst",
    "tcp_psh",
    "tcp_ack",
    "tcp_urg",
    "tcp_ece",
    "tcp_cwr",
];

const CATEGORICAL: [&str; 3] = ["protocol", "src_port_class", "dst_port_class"];

/// Port classes used as categories: IANA well-known / registered / dynamic
/// ranges, plus `none` for protocols without ports.
pub fn port_class(protocol: u8, port: u16) -> &'static str {
    if !has_ports(protocol) {
        "none"
    } else if port < 1024 {
        "well_known"
    } else if port < 49152 {
        "registered"
    } else {
        "ephemeral"
    }
}

fn port_class_rank(name: &str) -> u32 {
    match name {
        "none" => 0,
        "well_known" => 1,
        "registered" => 2,
        "ephemeral" => 3,
        _ => 4,
    }
}

fn numeric_raw(r: &FlowRecord) -> [f64; 13] {
    let mut out = [0.0; 13];
    out[0] = r.duration_ms as f64;
    out[1] = r.bytes_in as f64;
    out[2] = r.bytes_out as f64;
    out[3] = r.pkts_in as f64;
    out[4] = r.pkts_out as f64;
    for bit in 0..8 {
        out[5 + bit] = f64::from((r.tcp_flags >> bit) & 1);
    }
    out
}

fn categorical_raw(r: &FlowRecord) -> [String; 3] {
    [
        r.protocol.to_string(),
        port_class(r.protocol, r.src_port).to_string(),
        port_class(r.protocol, r.dst_port).to_string(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Z-scores are clamped to `[-clamp, clamp]`.
    pub clamp: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { clamp: 5.0 }
    }
}

/// Scaling statistics of one numeric column, in `log1p` space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// One-hot column; index `categories.len()` is the unknown bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    pub categories: Vec<String>,
}

impl CategoricalColumn {
    pub fn width(&self) -> usize {
        self.categories.len() + 1
    }

    fn index_of(&self, value: &str) -> usize {
        self.categories
            .iter()
            .position(|c| c == value)
            .unwrap_or(self.categories.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub format_version: u32,
    pub numeric_columns: Vec<NumericColumn>,
    pub categorical_columns: Vec<CategoricalColumn>,
    pub output_dim: usize,
    pub clamp: f64,
}

/// Row-major `rows × cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn log1p_stats(records: &[FlowRecord]) -> Vec<NumericColumn> {
    let n = records.len() as f64;
    let mut sum = [0.0f64; 13];
    for r in records {
        for (s, x) in sum.iter_mut().zip(numeric_raw(r)) {
            *s += x.ln_1p();
        }
    }
    let mean = sum.map(|s| s / n);
    let mut var = [0.0f64; 13];
    for r in records {
        for ((v, x), m) in var.iter_mut().zip(numeric_raw(r)).zip(mean) {
            let d = x.ln_1p() - m;
            *v += d * d;
        }
    }
    NUMERIC
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let std = (var[i] / n).sqrt();
            NumericColumn {
                name: name.to_string(),
                mean: mean[i],
                std: if std > 1e-12 { std } else { 1.0 },
            }
        })
        .collect()
}

impl FeatureSpec {
    /// Fit scaling statistics and category vocabularies on `records`
    /// (normally the training split only).
    pub fn fit(records: &[FlowRecord], config: &PreprocessConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("cannot fit features on zero records".into()));
        }
        if config.clamp.is_nan() || config.clamp <= 0.0 {
            return Err(Error::Config(format!("clamp must be positive, got {}", config.clamp)));
        }
        let numeric_columns = log1p_stats(records);
        let mut vocab: [Vec<String>; 3] = Default::default();
        for r in records {
            for (v, value) in vocab.iter_mut().zip(categorical_raw(r)) {
                if !v.contains(&value) {
                    v.push(value);
                }
            }
        }
        vocab[0].sort_by_key(|p| p.parse::<u32>().unwrap_or(u32::MAX));
        vocab[1].sort_by_key(|c| port_class_rank(c));
        vocab[2].sort_by_key(|c| port_class_rank(c));
        let categorical_columns: Vec<CategoricalColumn> = CATEGORICAL
            .iter()
            .zip(vocab)
            .map(|(name, categories)| CategoricalColumn {
                name: name.to_string(),
                categories,
            })
            .collect();
        let output_dim = numeric_columns.len() + categorical_columns.iter().map(|c| c.width()).sum::<usize>();
        Ok(Self {
            format_version: FEATURE_FORMAT_VERSION,
            numeric_columns,
            categorical_columns,
            output_dim,
            clamp: config.clamp,
        })
    }

    /// Same vocabularies and layout, numeric statistics recomputed on
    /// `records`. Used to adapt a base feature layout to a new dataset.
    pub fn refit_numeric(&self, records: &[FlowRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("cannot fit features on zero records".into()));
        }
        Ok(Self {
            numeric_columns: log1p_stats(records),
            ..self.clone()
        })
    }

    /// Numeric columns first (log1p, z-score, clamp), then one-hot blocks.
    pub fn transform(&self, records: &[FlowRecord]) -> FeatureMatrix {
        let cols = self.output_dim;
        let mut data = vec![0f32; records.len() * cols];
        for (row, r) in data.chunks_mut(cols.max(1)).zip(records) {
            for ((out, x), col) in row.iter_mut().zip(numeric_raw(r)).zip(&self.numeric_columns) {
                let z = (x.ln_1p() - col.mean) / col.std;
                *out = z.clamp(-self.clamp, self.clamp) as f32;
            }
            let mut offset = self.numeric_columns.len();
            for (col, value) in self.categorical_columns.iter().zip(categorical_raw(r)) {
                row[offset + col.index_of(&value)] = 1.0;
                offset += col.width();
            }
        }
        FeatureMatrix {
            rows: records.len(),
            cols,
            data,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        if spec.format_version != FEATURE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "feature spec format_version {} unsupported",
                spec.format_version
            )));
        }
        let width = spec.numeric_columns.len() + spec.categorical_columns.iter().map(|c| c.width()).sum::<usize>();
        if width != spec.output_dim {
            return Err(Error::Format(format!(
                "feature spec output_dim {} disagrees with its columns ({width})",
                spec.output_dim
            )));
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
