use std::collections::BTreeMap;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use super::{EdgeType, WindowGraph};

/// Node and edge counts of one or more windows. Counts add component-wise.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub windows: usize,
    pub snapshots: usize,
    pub flow_nodes: usize,
    pub ip_nodes: usize,
    /// Edge counts in [`EdgeType::ALL`] order.
    pub edges: [usize; 7],
    /// Number of snapshots holding a given number of flows.
    pub flows_per_snapshot: BTreeMap<usize, usize>,
}

impl GraphStats {
    pub fn spatial_edges(&self) -> usize {
        self.edges[..4].iter().sum()
    }

    pub fn edge_count(&self, t: EdgeType) -> usize {
        self.edges[t.index()]
    }

    pub fn total_edges(&self) -> usize {
        self.edges.iter().sum()
    }
}

impl Add for GraphStats {
    type Output = GraphStats;

    fn add(mut self, rhs: GraphStats) -> GraphStats {
        self.windows += rhs.windows;
        self.snapshots += rhs.snapshots;
        self.flow_nodes += rhs.flow_nodes;
        self.ip_nodes += rhs.ip_nodes;
        for (a, b) in self.edges.iter_mut().zip(rhs.edges) {
            *a += b;
        }
        for (k, v) in rhs.flows_per_snapshot {
            *self.flows_per_snapshot.entry(k).or_default() += v;
        }
        self
    }
}

impl std::iter::Sum for GraphStats {
    fn sum<I: Iterator<Item = GraphStats>>(iter: I) -> Self {
        iter.fold(GraphStats::default(), Add::add)
    }
}

pub fn graph_stats(w: &WindowGraph) -> GraphStats {
    let mut st = GraphStats {
        windows: 1,
        snapshots: w.snapshots.len(),
        flow_nodes: w.n_flows(),
        ip_nodes: w.n_ips(),
        ..Default::default()
    };
    for t in EdgeType::ALL {
        st.edges[t.index()] = w.edge_count(t);
    }
    for s in &w.snapshots {
        *st.flows_per_snapshot.entry(s.n_flows()).or_default() += 1;
    }
    st
}
