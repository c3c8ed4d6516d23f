use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{EdgeType, NodeType, WindowGraph};
use crate::nn::{ParamSet, Scalar, Tape, Var};

use super::{relation_param, ModelConfig};

/// Edges of one relation in window-global node indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relation {
    pub src: Arc<[u32]>,
    pub dst: Arc<[u32]>,
}

impl Relation {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// A window flattened into one graph: the nodes of all snapshots are
/// concatenated per type and edge endpoints are offset accordingly.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowIndex {
    pub n_flows: usize,
    pub n_ips: usize,
    pub feature_dim: usize,
    /// Row-major `n_flows × feature_dim`.
    pub flow_features: Vec<f32>,
    /// `flow_offsets[s]` is the global index of the first flow of snapshot
    /// `s`; the final entry equals `n_flows`.
    pub flow_offsets: Vec<usize>,
    pub ip_offsets: Vec<usize>,
    /// Indexed by [`EdgeType::index`].
    pub relations: [Relation; 7],
    /// Flow labels in global order, if the window is labeled.
    pub labels: Option<Vec<u32>>,
}

impl WindowIndex {
    pub fn new(w: &WindowGraph) -> Self {
        let feature_dim = w.feature_dim();
        let mut flow_offsets = vec![0];
        let mut ip_offsets = vec![0];
        let mut flow_features = Vec::with_capacity(w.n_flows() * feature_dim);
        let mut src: [Vec<u32>; 7] = Default::default();
        let mut dst: [Vec<u32>; 7] = Default::default();
        for s in &w.snapshots {
            let fo = *flow_offsets.last().unwrap() as u32;
            let io = *ip_offsets.last().unwrap() as u32;
            flow_features.extend_from_slice(&s.flow_features);
            for t in EdgeType::SNAPSHOT {
                let so = if t.src_type() == NodeType::Flow { fo } else { io };
                let d_o = if t.dst_type() == NodeType::Flow { fo } else { io };
                for &(a, b) in s.edges(t) {
                    src[t.index()].push(a + so);
                    dst[t.index()].push(b + d_o);
                }
            }
            flow_offsets.push(fo as usize + s.n_flows());
            ip_offsets.push(io as usize + s.ip_count);
        }
        let cross = EdgeType::IpSameAcross.index();
        for e in &w.cross_edges {
            let s = e.snapshot as usize;
            if s + 1 < ip_offsets.len() - 1 {
                src[cross].push(ip_offsets[s] as u32 + e.from);
                dst[cross].push(ip_offsets[s + 1] as u32 + e.to);
            }
        }
        let relations = std::array::from_fn(|i| Relation {
            src: Arc::from(std::mem::take(&mut src[i])),
            dst: Arc::from(std::mem::take(&mut dst[i])),
        });
        Self {
            n_flows: *flow_offsets.last().unwrap(),
            n_ips: *ip_offsets.last().unwrap(),
            feature_dim,
            flow_features,
            flow_offsets,
            ip_offsets,
            relations,
            labels: w.labels(),
        }
    }

    pub fn relation(&self, t: EdgeType) -> &Relation {
        &self.relations[t.index()]
    }

    pub fn node_count(&self, t: NodeType) -> usize {
        match t {
            NodeType::Flow => self.n_flows,
            NodeType::Ip => self.n_ips,
        }
    }

    pub fn n_snapshots(&self) -> usize {
        self.flow_offsets.len() - 1
    }

    /// Snapshot containing a global node index.
    pub fn snapshot_of(&self, t: NodeType, global: usize) -> usize {
        let offsets = match t {
            NodeType::Flow => &self.flow_offsets,
            NodeType::Ip => &self.ip_offsets,
        };
        offsets.partition_point(|&o| o <= global) - 1
    }
}

/// Final node embeddings on the tape.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings {
    /// `n_flows × hidden_dim`.
    pub flow: Var,
    /// `n_ips × hidden_dim`.
    pub ip: Var,
}

impl Embeddings {
    pub fn of(&self, t: NodeType) -> Var {
        match t {
            NodeType::Flow => self.flow,
            NodeType::Ip => self.ip,
        }
    }
}

fn linear<T: Scalar>(tape: &mut Tape<T>, params: &ParamSet<T>, x: Var, prefix: &str) -> Result<Var> {
    let w = tape.param_named(params, &format!("{prefix}.weight"))?;
    let b = tape.param_named(params, &format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Run the encoder over a window.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    index: &WindowIndex,
    cfg: &ModelConfig,
    params: &ParamSet<T>,
) -> Result<Embeddings> {
    if index.n_flows > 0 && index.feature_dim != cfg.feature_dim {
        return Err(Error::Incompatible(vec![format!(
            "feature_dim ({} in graph vs {} in model)",
            index.feature_dim, cfg.feature_dim
        )]));
    }
    let xf = tape.matrix(
        index.n_flows,
        cfg.feature_dim,
        index.flow_features.iter().map(|&v| T::of(v as f64)).collect(),
    )?;
    let xi = tape.matrix(
        index.n_ips,
        cfg.ip_feature_dim,
        vec![T::one(); index.n_ips * cfg.ip_feature_dim],
    )?;
    let mut h = Embeddings {
        flow: linear(tape, params, xf, "encoder.input.flow")?,
        ip: linear(tape, params, xi, "encoder.input.ip")?,
    };
    for l in 0..cfg.n_spatial_layers {
        let mut next = [h.flow, h.ip];
        for (slot, (ty, tag)) in [(NodeType::Flow, "flow"), (NodeType::Ip, "ip")].into_iter().enumerate() {
            let w_self = tape.param_named(params, &format!("encoder.layer{l}.self_{tag}.weight"))?;
            let mut acc = tape.matmul(h.of(ty), w_self)?;
            for t in EdgeType::ALL.into_iter().filter(|t| t.dst_type() == ty) {
                let rel = index.relation(t);
                if rel.is_empty() {
                    continue;
                }
                let gathered = tape.row_gather(h.of(t.src_type()), rel.src.clone())?;
                let agg = tape.segment_mean(gathered, rel.dst.clone(), index.node_count(ty))?;
                let w = tape.param_named(params, &relation_param(l, t))?;
                let msg = tape.matmul(agg, w)?;
                acc = tape.add(acc, msg)?;
            }
            let b = tape.param_named(params, &format!("encoder.layer{l}.bias_{tag}"))?;
            let pre = tape.add(acc, b)?;
            next[slot] = tape.relu(pre);
        }
        h = Embeddings {
            flow: next[0],
            ip: next[1],
        };
    }
    Ok(h)
}
