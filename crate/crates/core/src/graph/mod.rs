//! Windowed spatio-temporal heterogeneous flow graphs.
//!
//! Each flow becomes a `Flow` node linked both ways to its source and
//! destination `Ip` nodes. Inside a snapshot, flows sharing a source (or a
//! destination) IP are chained old → new by `FlowFollows*` edges. A window
//! is a run of consecutive snapshots; an IP seen in snapshots `t` and
//! `t + 1` gets one `IpSameAcross` edge from its node in `t` to its node in
//! `t + 1`.

mod builder;
mod io;
mod stats;
mod validate;

use serde::{Deserialize, Serialize};

pub use builder::{build_windows, build_windows_in_range, build_windows_parallel, GraphConfig};
pub use io::{
    read_corpus, read_corpus_binary, read_corpus_json, write_corpus, write_corpus_binary, write_corpus_json,
    GraphCorpus, GRAPH_FORMAT_VERSION,
};
pub use stats::{graph_stats, GraphStats};
pub use validate::{validate_graph, Violation, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Flow,
    Ip,
}

/// Node handle local to one snapshot and node type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub node_type: NodeType,
    pub index: u32,
}

impl NodeRef {
    pub fn flow(index: u32) -> Self {
        Self {
            node_type: NodeType::Flow,
            index,
        }
    }

    pub fn ip(index: u32) -> Self {
        Self {
            node_type: NodeType::Ip,
            index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    IpToFlowSrc,
    FlowToIpSrc,
    IpToFlowDst,
    FlowToIpDst,
    FlowFollowsSrc,
    FlowFollowsDst,
    IpSameAcross,
}

impl EdgeType {
    pub const ALL: [EdgeType; 7] = [
        EdgeType::IpToFlowSrc,
        EdgeType::FlowToIpSrc,
        EdgeType::IpToFlowDst,
        EdgeType::FlowToIpDst,
        EdgeType::FlowFollowsSrc,
        EdgeType::FlowFollowsDst,
        EdgeType::IpSameAcross,
    ];

    /// Edge types stored inside a snapshot (everything but `IpSameAcross`).
    pub const SNAPSHOT: [EdgeType; 6] = [
        EdgeType::IpToFlowSrc,
        EdgeType::FlowToIpSrc,
        EdgeType::IpToFlowDst,
        EdgeType::FlowToIpDst,
        EdgeType::FlowFollowsSrc,
        EdgeType::FlowFollowsDst,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::IpToFlowSrc => "IpToFlowSrc",
            EdgeType::FlowToIpSrc => "FlowToIpSrc",
            EdgeType::IpToFlowDst => "IpToFlowDst",
            EdgeType::FlowToIpDst => "FlowToIpDst",
            EdgeType::FlowFollowsSrc => "FlowFollowsSrc",
            EdgeType::FlowFollowsDst => "FlowFollowsDst",
            EdgeType::IpSameAcross => "IpSameAcross",
        }
    }

    pub fn src_type(self) -> NodeType {
        match self {
            EdgeType::IpToFlowSrc | EdgeType::IpToFlowDst | EdgeType::IpSameAcross => NodeType::Ip,
            _ => NodeType::Flow,
        }
    }

    pub fn dst_type(self) -> NodeType {
        match self {
            EdgeType::FlowToIpSrc | EdgeType::FlowToIpDst | EdgeType::IpSameAcross => NodeType::Ip,
            _ => NodeType::Flow,
        }
    }

    pub fn is_spatial(self) -> bool {
        self.index() < 4
    }
}

/// All flows starting within one snapshot interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotGraph {
    pub feature_dim: usize,
    /// Row-major `n_flows × feature_dim`.
    pub flow_features: Vec<f32>,
    pub ip_count: usize,
    /// Edge lists indexed by [`EdgeType::index`] for the six snapshot types.
    /// Endpoints are local indices of the types given by the edge type.
    pub edges: [Vec<(u32, u32)>; 6],
    pub flow_labels: Option<Vec<u32>>,
    pub flow_times: Vec<i64>,
    /// Position of each flow in the input record list.
    pub flow_index: Vec<u64>,
    /// Endpoint identifier of each local IP node.
    pub ip_ids: Vec<String>,
}

impl SnapshotGraph {
    pub fn empty(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            flow_features: Vec::new(),
            ip_count: 0,
            edges: Default::default(),
            flow_labels: None,
            flow_times: Vec::new(),
            flow_index: Vec::new(),
            ip_ids: Vec::new(),
        }
    }

    pub fn n_flows(&self) -> usize {
        self.flow_times.len()
    }

    pub fn node_count(&self, t: NodeType) -> usize {
        match t {
            NodeType::Flow => self.n_flows(),
            NodeType::Ip => self.ip_count,
        }
    }

    /// Edges of a snapshot type; `IpSameAcross` lives on the window.
    pub fn edges(&self, t: EdgeType) -> &[(u32, u32)] {
        match t {
            EdgeType::IpSameAcross => &[],
            _ => &self.edges[t.index()],
        }
    }

    pub fn flow_row(&self, i: usize) -> &[f32] {
        &self.flow_features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrossEdge {
    /// Snapshot of the `from` node; `to` lives in `snapshot + 1`.
    pub snapshot: u32,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGraph {
    pub start_time: i64,
    pub snapshot_ms: i64,
    pub snapshots: Vec<SnapshotGraph>,
    pub cross_edges: Vec<CrossEdge>,
}

impl WindowGraph {
    pub fn n_flows(&self) -> usize {
        self.snapshots.iter().map(SnapshotGraph::n_flows).sum()
    }

    pub fn n_ips(&self) -> usize {
        self.snapshots.iter().map(|s| s.ip_count).sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.feature_dim)
    }

    pub fn is_labeled(&self) -> bool {
        self.snapshots
            .iter()
            .all(|s| s.flow_labels.is_some() || s.n_flows() == 0)
    }

    /// Labels of all flows in (snapshot, local index) order.
    pub fn labels(&self) -> Option<Vec<u32>> {
        let mut out = Vec::with_capacity(self.n_flows());
        for s in &self.snapshots {
            match &s.flow_labels {
                Some(l) => out.extend_from_slice(l),
                None if s.n_flows() == 0 => {}
                None => return None,
            }
        }
        Some(out)
    }

    pub fn edge_count(&self, t: EdgeType) -> usize {
        match t {
            EdgeType::IpSameAcross => self.cross_edges.len(),
            _ => self.snapshots.iter().map(|s| s.edges(t).len()).sum(),
        }
    }
}
