use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeType, NodeRef, NodeType, WindowGraph};
use crate::model::{EdgeBatch, WindowIndex};
use crate::seed;

/// Rejection draws before falling back to enumerating the free candidates.
const MAX_REJECTIONS: usize = 32;

/// A fake edge. `src` lives in `snapshot`; `dst` lives in `snapshot + 1`
/// for `IpSameAcross` and in `snapshot` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NegativeSample {
    pub edge_type: EdgeType,
    pub snapshot: u32,
    pub src: NodeRef,
    pub dst: NodeRef,
}

/// Real edges for which no unused fake destination existed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub edge_type: EdgeType,
    pub snapshot: u32,
    pub missing: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeSet {
    pub samples: Vec<NegativeSample>,
    pub shortfall: Vec<Shortfall>,
}

impl NegativeSet {
    pub fn count(&self, t: EdgeType) -> usize {
        self.samples.iter().filter(|s| s.edge_type == t).count()
    }

    pub fn total_shortfall(&self) -> usize {
        self.shortfall.iter().map(|s| s.missing).sum()
    }

    /// Append the samples to a batch in window-global indices.
    pub fn extend_batch(&self, index: &WindowIndex, batch: &mut EdgeBatch) {
        for s in &self.samples {
            let snap = s.snapshot as usize;
            let dst_snap = if s.edge_type == EdgeType::IpSameAcross {
                snap + 1
            } else {
                snap
            };
            let global = |r: NodeRef, snap: usize| -> u32 {
                let off = match r.node_type {
                    NodeType::Flow => index.flow_offsets[snap],
                    NodeType::Ip => index.ip_offsets[snap],
                };
                off as u32 + r.index
            };
            batch.push(s.edge_type, global(s.src, snap), global(s.dst, dst_snap));
        }
    }
}

fn node(t: NodeType, index: u32) -> NodeRef {
    NodeRef { node_type: t, index }
}

/// Corrupt the destination of every real edge once, uniformly among nodes
/// of the right type and snapshot that form neither a real edge, an earlier
/// negative, nor a self-loop.
pub fn sample_negatives(w: &WindowGraph, seed: u64) -> NegativeSet {
    let mut rng = seed::rng(seed);
    let mut out = NegativeSet::default();
    let n_snap = w.snapshots.len();
    for t in EdgeType::ALL {
        for s in 0..n_snap {
            let (real, n_dst): (Vec<(u32, u32)>, usize) = if t == EdgeType::IpSameAcross {
                if s + 1 >= n_snap {
                    continue;
                }
                let real = w
                    .cross_edges
                    .iter()
                    .filter(|e| e.snapshot as usize == s)
                    .map(|e| (e.from, e.to))
                    .collect();
                (real, w.snapshots[s + 1].ip_count)
            } else {
                let g = &w.snapshots[s];
                (g.edges(t).to_vec(), g.node_count(t.dst_type()))
            };
            if real.is_empty() {
                continue;
            }
            let no_self = t != EdgeType::IpSameAcross && t.src_type() == t.dst_type();
            let mut taken: HashSet<(u32, u32)> = real.iter().copied().collect();
            let mut missing = 0;
            for &(src, _) in &real {
                let free = |d: u32, taken: &HashSet<(u32, u32)>| !(no_self && d == src) && !taken.contains(&(src, d));
                let mut pick = None;
                for _ in 0..MAX_REJECTIONS {
                    let d = rng.random_range(0..n_dst as u32);
                    if free(d, &taken) {
                        pick = Some(d);
                        break;
                    }
                }
                if pick.is_none() {
                    let candidates: Vec<u32> = (0..n_dst as u32).filter(|&d| free(d, &taken)).collect();
                    if !candidates.is_empty() {
                        pick = Some(candidates[rng.random_range(0..candidates.len())]);
                    }
                }
                match pick {
                    Some(d) => {
                        taken.insert((src, d));
                        out.samples.push(NegativeSample {
                            edge_type: t,
                            snapshot: s as u32,
                            src: node(t.src_type(), src),
                            dst: node(t.dst_type(), d),
                        });
                    }
                    None => missing += 1,
                }
            }
            if missing > 0 {
                out.shortfall.push(Shortfall {
                    edge_type: t,
                    snapshot: s as u32,
                    missing,
                });
            }
        }
    }
    out
}
