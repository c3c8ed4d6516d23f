//! Negative sampler: per-type parity, no collisions, uniform corruption.

use std::collections::{HashMap, HashSet};

use flowgnn::eval::{generate_synthetic, SynthConfig};
use flowgnn::graph::{build_windows, EdgeType, GraphConfig, NodeType, WindowGraph};
use flowgnn::ingest::{FeatureMatrix, FeatureSpec, PreprocessConfig};
use flowgnn::pretrain::sample_negatives;
use flowgnn::seed;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::graphs::{flow, random_case};
use crate::tol::{CHI2_MIN_P, CHI2_SAMPLES};
use crate::Outcome;

type Key = (EdgeType, u32, u32, u32);

fn real_edges(w: &WindowGraph) -> HashSet<Key> {
    let mut out = HashSet::new();
    for (s, g) in w.snapshots.iter().enumerate() {
        for t in EdgeType::SNAPSHOT {
            out.extend(g.edges(t).iter().map(|&(a, b)| (t, s as u32, a, b)));
        }
    }
    out.extend(
        w.cross_edges
            .iter()
            .map(|e| (EdgeType::IpSameAcross, e.snapshot, e.from, e.to)),
    );
    out
}

/// Fakes per type that no sampler can place: a source node with `k` real
/// edges has only `n_dst - k` (minus itself, for same-type edges) free
/// destinations.
fn forced_shortfall(w: &WindowGraph, t: EdgeType) -> usize {
    let mut out = 0;
    for s in 0..w.snapshots.len() {
        let (edges, n_dst): (Vec<(u32, u32)>, usize) = if t == EdgeType::IpSameAcross {
            if s + 1 >= w.snapshots.len() {
                continue;
            }
            let e = w
                .cross_edges
                .iter()
                .filter(|e| e.snapshot as usize == s)
                .map(|e| (e.from, e.to))
                .collect();
            (e, w.snapshots[s + 1].ip_count)
        } else {
            (
                w.snapshots[s].edges(t).to_vec(),
                w.snapshots[s].node_count(t.dst_type()),
            )
        };
        let self_loop = usize::from(t != EdgeType::IpSameAcross && t.src_type() == t.dst_type());
        let mut per_src: HashMap<u32, usize> = HashMap::new();
        for (a, _) in edges {
            *per_src.entry(a).or_default() += 1;
        }
        for k in per_src.into_values() {
            out += k.saturating_sub(n_dst.saturating_sub(k + self_loop));
        }
    }
    out
}

#[derive(Default)]
struct Tally {
    windows: usize,
    negatives: usize,
    collisions: usize,
    duplicates: usize,
    /// Types whose fake count differs from the real count less the forced shortfall.
    parity_breaks: usize,
    /// Types whose reported shortfall differs from the forced shortfall.
    report_breaks: usize,
    shortfall: usize,
}

impl Tally {
    fn add(&mut self, w: &WindowGraph, seed: u64) {
        let neg = sample_negatives(w, seed);
        let real = real_edges(w);
        let mut seen = HashSet::new();
        for s in &neg.samples {
            let key = (s.edge_type, s.snapshot, s.src.index, s.dst.index);
            self.collisions += usize::from(real.contains(&key));
            self.duplicates += usize::from(!seen.insert(key));
        }
        for t in EdgeType::ALL {
            let missing: usize = neg
                .shortfall
                .iter()
                .filter(|s| s.edge_type == t)
                .map(|s| s.missing)
                .sum();
            let forced = forced_shortfall(w, t);
            self.parity_breaks += usize::from(neg.count(t) + forced != w.edge_count(t));
            self.report_breaks += usize::from(missing != forced);
        }
        self.windows += 1;
        self.negatives += neg.samples.len();
        self.shortfall += neg.total_shortfall();
    }
}

fn synthetic_windows() -> Vec<WindowGraph> {
    let recs = generate_synthetic(&SynthConfig {
        n_flows: 5000,
        duration_s: 80.0,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let spec = FeatureSpec::fit(&recs, &PreprocessConfig::default()).unwrap();
    build_windows(&recs, &spec.transform(&recs), None, &GraphConfig::default()).unwrap()
}

/// IP 0 owns flow 0 and flows 1..=20 belong to other IPs, so the fake
/// destination of IP 0's source edge is uniform over flows 1..=20.
fn chi_square_p() -> f64 {
    let mut records = vec![flow("ip0".into(), "sink".into(), 0)];
    records.extend((1..=20).map(|i| flow(format!("ip{i}"), "sink".into(), i)));
    let features = FeatureMatrix {
        rows: records.len(),
        cols: 1,
        data: vec![0.0; records.len()],
    };
    let cfg = GraphConfig {
        snapshot_seconds: 10.0,
        snapshots_per_window: 1,
    };
    let w = &build_windows(&records, &features, None, &cfg).unwrap()[0];
    let owner = w.snapshots[0].ip_ids.iter().position(|id| id == "ip0").unwrap() as u32;
    let mut counts = [0u64; 21];
    for s in 0..CHI2_SAMPLES {
        let neg = sample_negatives(w, seed::derive_indexed(0, "acceptance.chi2", s));
        let pick = neg
            .samples
            .iter()
            .find(|x| x.edge_type == EdgeType::IpToFlowSrc && x.src.index == owner)
            .unwrap();
        assert_eq!(pick.dst.node_type, NodeType::Flow);
        counts[pick.dst.index as usize] += 1;
    }
    if counts[0] != 0 {
        return 0.0;
    }
    let expected = CHI2_SAMPLES as f64 / 20.0;
    let chi2: f64 = counts[1..]
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2)
}

pub fn check() -> Outcome {
    let mut synth = Tally::default();
    for (i, w) in synthetic_windows().iter().enumerate() {
        synth.add(w, i as u64);
    }
    let mut small = Tally::default();
    let mut rng = seed::rng(seed::derive(0, "acceptance.negatives"));
    for i in 0..500 {
        let (records, cfg) = random_case(&mut rng);
        let features = FeatureMatrix {
            rows: records.len(),
            cols: 1,
            data: vec![0.0; records.len()],
        };
        for w in build_windows(&records, &features, None, &cfg).unwrap() {
            small.add(&w, i);
        }
    }
    let p = chi_square_p();
    let pass = synth.parity_breaks + small.parity_breaks == 0
        && synth.report_breaks + small.report_breaks == 0
        && synth.collisions + small.collisions == 0
        && synth.duplicates + small.duplicates == 0
        && p > CHI2_MIN_P;
    Outcome::new(
        pass,
        format!(
            "synthetic: {} windows, {} fakes, {} forced shortfall; small fixtures: {} windows, {} fakes, \
             {} forced shortfall; parity breaks {}, misreported shortfalls {}; collisions {}, duplicates {}; \
             chi-square p {p:.3} (> {CHI2_MIN_P})",
            synth.windows,
            synth.negatives,
            synth.shortfall,
            small.windows,
            small.negatives,
            small.shortfall,
            synth.parity_breaks + small.parity_breaks,
            synth.report_breaks + small.report_breaks,
            synth.collisions + small.collisions,
            synth.duplicates + small.duplicates,
        ),
    )
}
