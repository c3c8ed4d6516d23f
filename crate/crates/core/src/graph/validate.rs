use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{EdgeType, SnapshotGraph, WindowGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Column lengths of a snapshot disagree.
    Shape,
    IndexOutOfRange,
    SelfLoop,
    DuplicateEdge,
    /// A flow lacks exactly one matching in/out spatial edge pair for a role.
    SpatialEdge,
    /// A `FlowFollows*` edge that does not link consecutive flows of one IP.
    ChainOrder,
    /// Two consecutive flows of one IP are not linked.
    ChainMissing,
    CrossEdge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub snapshot: Option<usize>,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.snapshot {
            Some(s) => write!(f, "{:?} in snapshot {s}: {}", self.kind, self.detail),
            None => write!(f, "{:?}: {}", self.kind, self.detail),
        }
    }
}

/// Check every structural invariant of a window. An empty result means the
/// graph is well formed.
pub fn validate_graph(w: &WindowGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    for (si, s) in w.snapshots.iter().enumerate() {
        validate_snapshot(si, s, &mut out);
    }
    validate_cross(w, &mut out);
    out
}

fn push(out: &mut Vec<Violation>, kind: ViolationKind, snapshot: Option<usize>, detail: String) {
    out.push(Violation { kind, snapshot, detail });
}

fn validate_snapshot(si: usize, s: &SnapshotGraph, out: &mut Vec<Violation>) {
    let at = Some(si);
    let n = s.n_flows();
    if s.flow_features.len() != n * s.feature_dim {
        push(
            out,
            ViolationKind::Shape,
            at,
            format!("{} feature values for {n} flows", s.flow_features.len()),
        );
    }
    if s.flow_index.len() != n {
        push(
            out,
            ViolationKind::Shape,
            at,
            format!("{} flow indices for {n} flows", s.flow_index.len()),
        );
    }
    if let Some(l) = &s.flow_labels {
        if l.len() != n {
            push(
                out,
                ViolationKind::Shape,
                at,
                format!("{} labels for {n} flows", l.len()),
            );
        }
    }
    if s.ip_ids.len() != s.ip_count {
        push(
            out,
            ViolationKind::Shape,
            at,
            format!("{} ip ids for {} ips", s.ip_ids.len(), s.ip_count),
        );
    }

    // bounds, self-loops, duplicates; keep the clean, deduplicated sets
    let mut clean: [BTreeSet<(u32, u32)>; 6] = Default::default();
    for t in EdgeType::SNAPSHOT {
        let (ns, nd) = (s.node_count(t.src_type()), s.node_count(t.dst_type()));
        for &(a, b) in s.edges(t) {
            if a as usize >= ns || b as usize >= nd {
                push(
                    out,
                    ViolationKind::IndexOutOfRange,
                    at,
                    format!("{} edge ({a}, {b})", t.name()),
                );
                continue;
            }
            if t.src_type() == t.dst_type() && a == b {
                push(
                    out,
                    ViolationKind::SelfLoop,
                    at,
                    format!("{} edge ({a}, {a})", t.name()),
                );
                continue;
            }
            if !clean[t.index()].insert((a, b)) {
                push(
                    out,
                    ViolationKind::DuplicateEdge,
                    at,
                    format!("{} edge ({a}, {b})", t.name()),
                );
            }
        }
    }

    for (role, into_flow, out_of_flow, follows) in [
        (
            "src",
            EdgeType::IpToFlowSrc,
            EdgeType::FlowToIpSrc,
            EdgeType::FlowFollowsSrc,
        ),
        (
            "dst",
            EdgeType::IpToFlowDst,
            EdgeType::FlowToIpDst,
            EdgeType::FlowFollowsDst,
        ),
    ] {
        let mut incoming: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(ip, f) in &clean[into_flow.index()] {
            incoming[f as usize].push(ip);
        }
        let mut outgoing: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(f, ip) in &clean[out_of_flow.index()] {
            outgoing[f as usize].push(ip);
        }
        let mut endpoint: Vec<Option<u32>> = vec![None; n];
        for f in 0..n {
            match (incoming[f].as_slice(), outgoing[f].as_slice()) {
                ([a], [b]) if a == b => endpoint[f] = Some(*a),
                (i, o) => push(
                    out,
                    ViolationKind::SpatialEdge,
                    at,
                    format!(
                        "flow {f}: {role} ips via {}: {i:?}, via {}: {o:?}",
                        into_flow.name(),
                        out_of_flow.name()
                    ),
                ),
            }
        }

        let mut by_ip: HashMap<u32, Vec<u32>> = HashMap::new();
        for (f, ip) in endpoint.iter().enumerate() {
            if let Some(ip) = ip {
                by_ip.entry(*ip).or_default().push(f as u32);
            }
        }
        let mut expected = BTreeSet::new();
        for flows in by_ip.values_mut() {
            flows.sort_by_key(|&f| (s.flow_times.get(f as usize), s.flow_index.get(f as usize), f));
            expected.extend(flows.windows(2).map(|p| (p[0], p[1])));
        }
        let actual = &clean[follows.index()];
        for e in actual.difference(&expected) {
            // flows whose endpoint is already broken were reported above
            let known = endpoint[e.0 as usize].is_some() && endpoint[e.1 as usize].is_some();
            if known {
                push(
                    out,
                    ViolationKind::ChainOrder,
                    at,
                    format!("{} edge {e:?}", follows.name()),
                );
            }
        }
        for e in expected.difference(actual) {
            push(
                out,
                ViolationKind::ChainMissing,
                at,
                format!("{} edge {e:?} missing", follows.name()),
            );
        }
    }
}

fn validate_cross(w: &WindowGraph, out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    for e in &w.cross_edges {
        let t = e.snapshot as usize;
        if t + 1 >= w.snapshots.len() {
            push(out, ViolationKind::CrossEdge, None, format!("{e:?} leaves the window"));
            continue;
        }
        let (a, b) = (&w.snapshots[t], &w.snapshots[t + 1]);
        if e.from as usize >= a.ip_count || e.to as usize >= b.ip_count {
            push(
                out,
                ViolationKind::IndexOutOfRange,
                Some(t),
                format!("IpSameAcross {e:?}"),
            );
            continue;
        }
        if a.ip_ids.get(e.from as usize) != b.ip_ids.get(e.to as usize) {
            push(
                out,
                ViolationKind::CrossEdge,
                Some(t),
                format!("{e:?} links different endpoints"),
            );
            continue;
        }
        if !seen.insert(*e) {
            push(
                out,
                ViolationKind::DuplicateEdge,
                Some(t),
                format!("IpSameAcross {e:?}"),
            );
        }
    }
    for (t, pair) in w.snapshots.windows(2).enumerate() {
        let next: HashMap<&str, u32> = pair[1]
            .ip_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i as u32))
            .collect();
        for (i, id) in pair[0].ip_ids.iter().enumerate() {
            if let Some(&j) = next.get(id.as_str()) {
                let e = super::CrossEdge {
                    snapshot: t as u32,
                    from: i as u32,
                    to: j,
                };
                if !seen.contains(&e) {
                    push(
                        out,
                        ViolationKind::CrossEdge,
                        Some(t),
                        format!("recurring ip `{id}` has no IpSameAcross edge"),
                    );
                }
            }
        }
    }
}
