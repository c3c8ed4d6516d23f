//! Heterogeneous spatio-temporal GraphSAGE model.
//!
//! The encoder projects flow features and the all-ones IP vectors to
//! `hidden_dim`, then runs `n_spatial_layers` rounds of
//!
//! ```text
//! h'_v = relu(W_self[τ] h_v + Σ_r W_r · mean{h_u : (u → v) ∈ r} + b[τ])
//! ```
//!
//! over the seven relations, where `τ` is the node type of `v`. Every
//! relation is directed: spatial edges exist in both directions as separate
//! relations, `FlowFollows*` point from older to newer flows and
//! `IpSameAcross` from snapshot `t` to `t + 1`, so a snapshot never sees
//! later ones.
//!
//! On top of the encoder sit one small MLP per edge type scoring candidate
//! links (pretraining) and an MLP head classifying flow nodes (fine-tuning).

mod decoder;
mod encoder;
mod head;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use decoder::{score_edges, EdgeBatch, EdgeScores};
pub use encoder::{encode, Embeddings, Relation, WindowIndex};
pub use head::classify_flows;

use crate::error::{Error, Result};
use crate::graph::EdgeType;
use crate::nn::{self, count_parameters, glorot_uniform, CheckpointHeader, ParamSet, Tensor};
use crate::seed;

/// Width of the default feature layout: 13 numeric columns, protocol
/// one-hot over {ICMP, TCP, UDP} + unknown, and two port-class one-hots
/// over {none, well-known, registered, ephemeral} + unknown.
pub const DEFAULT_FEATURE_DIM: usize = 13 + 4 + 5 + 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub ip_feature_dim: usize,
    pub hidden_dim: usize,
    pub n_spatial_layers: usize,
    /// Set for classification models only.
    pub n_classes: Option<usize>,
    pub head_hidden_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: DEFAULT_FEATURE_DIM,
            ip_feature_dim: 8,
            hidden_dim: 128,
            n_spatial_layers: 3,
            n_classes: None,
            head_hidden_dims: vec![64],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_spatial_layers == 0 || self.feature_dim == 0 || self.ip_feature_dim == 0 {
            return Err(Error::Config(format!(
                "feature_dim, ip_feature_dim, hidden_dim and n_spatial_layers must be positive: {self:?}"
            )));
        }
        if self.n_classes == Some(0) || self.head_hidden_dims.contains(&0) {
            return Err(Error::Config("classifier dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Encoder fields that differ between two configs.
    pub fn encoder_diff(&self, other: &ModelConfig) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, a: usize, b: usize| {
            if a != b {
                out.push(format!("{name} ({a} vs {b})"));
            }
        };
        check("feature_dim", self.feature_dim, other.feature_dim);
        check("ip_feature_dim", self.ip_feature_dim, other.ip_feature_dim);
        check("hidden_dim", self.hidden_dim, other.hidden_dim);
        check("n_spatial_layers", self.n_spatial_layers, other.n_spatial_layers);
        out
    }

    /// Stable hash of the config's JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn relation_param(layer: usize, t: EdgeType) -> String {
    format!("encoder.layer{layer}.{}.weight", t.name())
}

fn insert_encoder(params: &mut ParamSet, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.hidden_dim;
    let mut rng = seed::rng(seed::derive(cfg.seed, "encoder"));
    params.insert(
        "encoder.input.flow.weight",
        glorot_uniform(cfg.feature_dim, d, &mut rng),
    )?;
    params.insert("encoder.input.flow.bias", nn::zeros(vec![d]))?;
    params.insert(
        "encoder.input.ip.weight",
        glorot_uniform(cfg.ip_feature_dim, d, &mut rng),
    )?;
    params.insert("encoder.input.ip.bias", nn::zeros(vec![d]))?;
    for l in 0..cfg.n_spatial_layers {
        for t in EdgeType::ALL {
            params.insert(relation_param(l, t), glorot_uniform(d, d, &mut rng))?;
        }
        params.insert(
            format!("encoder.layer{l}.self_flow.weight"),
            glorot_uniform(d, d, &mut rng),
        )?;
        params.insert(
            format!("encoder.layer{l}.self_ip.weight"),
            glorot_uniform(d, d, &mut rng),
        )?;
        params.insert(format!("encoder.layer{l}.bias_flow"), nn::zeros(vec![d]))?;
        params.insert(format!("encoder.layer{l}.bias_ip"), nn::zeros(vec![d]))?;
    }
    Ok(())
}

fn insert_decoder(params: &mut ParamSet, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.hidden_dim;
    let mut rng = seed::rng(seed::derive(cfg.seed, "decoder"));
    for t in EdgeType::ALL {
        let p = format!("decoder.{}", t.name());
        params.insert(format!("{p}.hidden.weight"), glorot_uniform(2 * d, d, &mut rng))?;
        params.insert(format!("{p}.hidden.bias"), nn::zeros(vec![d]))?;
        params.insert(format!("{p}.out.weight"), glorot_uniform(d, 1, &mut rng))?;
        params.insert(format!("{p}.out.bias"), nn::zeros(vec![1]))?;
    }
    Ok(())
}

fn insert_head(params: &mut ParamSet, cfg: &ModelConfig) -> Result<()> {
    let n_classes = cfg
        .n_classes
        .ok_or_else(|| Error::Config("classification head needs n_classes".into()))?;
    let mut rng = seed::rng(seed::derive(cfg.seed, "head"));
    let mut fan_in = cfg.hidden_dim;
    let dims: Vec<usize> = cfg.head_hidden_dims.iter().copied().chain([n_classes]).collect();
    for (i, &out) in dims.iter().enumerate() {
        params.insert(format!("head.layer{i}.weight"), glorot_uniform(fan_in, out, &mut rng))?;
        params.insert(format!("head.layer{i}.bias"), nn::zeros(vec![out]))?;
        fan_in = out;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Encoder plus link decoders.
    Pretrain,
    /// Encoder plus classification head.
    Classifier,
}

impl ModelKind {
    fn tag(self) -> &'static str {
        match self {
            ModelKind::Pretrain => "pretrain",
            ModelKind::Classifier => "classifier",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub kind: ModelKind,
    pub params: ParamSet,
}

impl Model {
    /// Fresh encoder and link decoders.
    pub fn init_pretrain(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        insert_encoder(&mut params, &config)?;
        insert_decoder(&mut params, &config)?;
        Ok(Self {
            config,
            kind: ModelKind::Pretrain,
            params,
        })
    }

    /// Fresh encoder and classification head.
    pub fn init_classifier(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        insert_encoder(&mut params, &config)?;
        insert_head(&mut params, &config)?;
        Ok(Self {
            config,
            kind: ModelKind::Classifier,
            params,
        })
    }

    /// Encoder weights from `base`, head freshly initialized from
    /// `config.seed`. The encoder fields of `config` must match `base`.
    pub fn classifier_from_pretrained(base: &Model, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let diff = base.config.encoder_diff(&config);
        if !diff.is_empty() {
            return Err(Error::Incompatible(diff));
        }
        let mut params = base.params.filtered(|n| n.starts_with("encoder."));
        let mut fresh_encoder = ParamSet::new();
        insert_encoder(&mut fresh_encoder, &config)?;
        if let Some(missing) = fresh_encoder.names().find(|n| params.by_name(n).is_none()) {
            return Err(Error::Incompatible(vec![format!("base checkpoint lacks `{missing}`")]));
        }
        insert_head(&mut params, &config)?;
        Ok(Self {
            config,
            kind: ModelKind::Classifier,
            params,
        })
    }

    pub fn num_parameters(&self) -> usize {
        count_parameters(&self.params)
    }

    pub fn save(&self, path: &Path, metadata: serde_json::Value) -> Result<()> {
        let header = CheckpointHeader {
            format_version: nn::CHECKPOINT_FORMAT_VERSION,
            kind: self.kind.tag().to_string(),
            config: serde_json::to_value(&self.config)?,
            fingerprint: self.config.fingerprint(),
            metadata,
            params: vec![],
        };
        nn::save_checkpoint(path, &header, &self.params)
    }

    pub fn to_bytes(&self, metadata: serde_json::Value) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format_version: nn::CHECKPOINT_FORMAT_VERSION,
            kind: self.kind.tag().to_string(),
            config: serde_json::to_value(&self.config)?,
            fingerprint: self.config.fingerprint(),
            metadata,
            params: vec![],
        };
        let mut buf = Vec::new();
        nn::write_checkpoint(&mut buf, &header, &self.params)?;
        Ok(buf)
    }

    /// Load a checkpoint, returning the model and its metadata block.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (header, params) = nn::load_checkpoint(path)?;
        Self::from_parts(header, params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let (header, params) = nn::read_checkpoint(bytes)?;
        Self::from_parts(header, params)
    }

    fn from_parts(header: CheckpointHeader, params: ParamSet) -> Result<(Self, serde_json::Value)> {
        let config: ModelConfig = serde_json::from_value(header.config)?;
        if config.fingerprint() != header.fingerprint {
            return Err(Error::Format("checkpoint fingerprint does not match its config".into()));
        }
        let kind = match header.kind.as_str() {
            "pretrain" => ModelKind::Pretrain,
            "classifier" => ModelKind::Classifier,
            other => return Err(Error::Format(format!("unknown checkpoint kind `{other}`"))),
        };
        let expected = match kind {
            ModelKind::Pretrain => Model::init_pretrain(config.clone())?,
            ModelKind::Classifier => Model::init_classifier(config.clone())?,
        };
        for p in expected.params.iter() {
            match params.by_name(&p.name) {
                Some(q) if q.tensor.shape() == p.tensor.shape() => {}
                Some(q) => {
                    return Err(Error::Format(format!(
                        "parameter `{}` has shape {:?}, config implies {:?}",
                        p.name,
                        q.tensor.shape(),
                        p.tensor.shape()
                    )))
                }
                None => return Err(Error::Format(format!("checkpoint lacks parameter `{}`", p.name))),
            }
        }
        Ok((Self { config, kind, params }, header.metadata))
    }

    /// Ensure `config` can be used with this model's encoder.
    pub fn check_encoder(&self, config: &ModelConfig) -> Result<()> {
        let diff = self.config.encoder_diff(config);
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::Incompatible(diff))
        }
    }

    /// Read-only encoder pass returning per-node embeddings.
    pub fn embed(&self, index: &WindowIndex) -> Result<(Tensor, Tensor)> {
        let mut tape = nn::Tape::new();
        let emb = encode(&mut tape, index, &self.config, &self.params)?;
        Ok((tape.to_tensor(emb.flow), tape.to_tensor(emb.ip)))
    }
}
