//! Window graph builder against a naive quadratic reference.

use std::collections::BTreeSet;
use std::time::Instant;

use flowgnn::graph::{build_windows, build_windows_parallel, EdgeType, GraphConfig, NodeType, WindowGraph};
use flowgnn::ingest::{FeatureMatrix, FlowRecord};
use flowgnn::seed;
use rand::Rng;

use crate::tol::{BUILDER_BUDGET, BUILDER_CASES, BUILDER_MAX_FLOWS};
use crate::Outcome;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum End {
    Flow(usize),
    Ip(String),
}

/// (type, window start, snapshot, source, destination)
type Edge = (EdgeType, i64, usize, End, End);

type Endpoint = fn(&FlowRecord) -> &str;

pub fn flow(src: String, dst: String, start_time: i64) -> FlowRecord {
    FlowRecord {
        src_ip: src,
        dst_ip: dst,
        src_port: 1024,
        dst_port: 80,
        protocol: 6,
        start_time,
        duration_ms: 1,
        bytes_in: 1,
        bytes_out: 1,
        pkts_in: 1,
        pkts_out: 1,
        tcp_flags: 0,
        label: None,
    }
}

pub fn random_case(rng: &mut seed::Rng) -> (Vec<FlowRecord>, GraphConfig) {
    let n = rng.random_range(1..=BUILDER_MAX_FLOWS);
    let n_ips = rng.random_range(1..=8);
    let span = rng.random_range(1..=20_000i64);
    let origin = rng.random_range(-5_000..5_000i64);
    let mut times: Vec<i64> = (0..n).map(|_| origin + rng.random_range(0..span)).collect();
    times.sort();
    let ip = |rng: &mut seed::Rng| format!("10.0.0.{}", rng.random_range(0..n_ips));
    let records = times.into_iter().map(|t| flow(ip(rng), ip(rng), t)).collect();
    let cfg = GraphConfig {
        snapshot_seconds: [0.25, 0.5, 1.0, 2.0, 3.7][rng.random_range(0..5)],
        snapshots_per_window: rng.random_range(1..=5),
    };
    (records, cfg)
}

/// Direct transcription of the graph definition.
fn reference(records: &[FlowRecord], cfg: &GraphConfig) -> (BTreeSet<i64>, Vec<Edge>) {
    let snap = ((cfg.snapshot_seconds * 1000.0).round() as i64).max(1);
    let per = cfg.snapshots_per_window as i64;
    let t0 = records[0].start_time;
    let slot = |r: &FlowRecord| {
        let k = (r.start_time - t0).div_euclid(snap);
        (t0 + k.div_euclid(per) * per * snap, k.rem_euclid(per) as usize)
    };
    let mut windows = BTreeSet::new();
    let mut edges = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let (w, k) = slot(r);
        windows.insert(w);
        let (s, d) = (End::Ip(r.src_ip.clone()), End::Ip(r.dst_ip.clone()));
        edges.push((EdgeType::IpToFlowSrc, w, k, s.clone(), End::Flow(i)));
        edges.push((EdgeType::FlowToIpSrc, w, k, End::Flow(i), s));
        edges.push((EdgeType::IpToFlowDst, w, k, d.clone(), End::Flow(i)));
        edges.push((EdgeType::FlowToIpDst, w, k, End::Flow(i), d));
        let endpoints: [(EdgeType, Endpoint); 2] = [
            (EdgeType::FlowFollowsSrc, |o| &o.src_ip),
            (EdgeType::FlowFollowsDst, |o| &o.dst_ip),
        ];
        for (t, ip) in endpoints {
            let prev = (0..records.len())
                .filter(|&j| slot(&records[j]) == (w, k) && ip(&records[j]) == ip(r))
                .filter(|&j| (records[j].start_time, j) < (r.start_time, i))
                .max_by_key(|&j| (records[j].start_time, j));
            if let Some(j) = prev {
                edges.push((t, w, k, End::Flow(j), End::Flow(i)));
            }
        }
    }
    for &w in &windows {
        for k in 0..cfg.snapshots_per_window.saturating_sub(1) {
            let ips = |k: usize| -> BTreeSet<&str> {
                records
                    .iter()
                    .filter(|r| slot(r) == (w, k))
                    .flat_map(|r| [r.src_ip.as_str(), r.dst_ip.as_str()])
                    .collect()
            };
            for ip in ips(k).intersection(&ips(k + 1)) {
                edges.push((
                    EdgeType::IpSameAcross,
                    w,
                    k,
                    End::Ip(ip.to_string()),
                    End::Ip(ip.to_string()),
                ));
            }
        }
    }
    edges.sort();
    (windows, edges)
}

fn observed(ws: &[WindowGraph]) -> (BTreeSet<i64>, Vec<Edge>) {
    let mut windows = BTreeSet::new();
    let mut edges = Vec::new();
    for w in ws {
        windows.insert(w.start_time);
        for (k, s) in w.snapshots.iter().enumerate() {
            let end = |t: NodeType, i: u32| match t {
                NodeType::Flow => End::Flow(s.flow_index[i as usize] as usize),
                NodeType::Ip => End::Ip(s.ip_ids[i as usize].clone()),
            };
            for t in EdgeType::SNAPSHOT {
                for &(a, b) in s.edges(t) {
                    edges.push((t, w.start_time, k, end(t.src_type(), a), end(t.dst_type(), b)));
                }
            }
        }
        for e in &w.cross_edges {
            let from = &w.snapshots[e.snapshot as usize].ip_ids[e.from as usize];
            let to = &w.snapshots[e.snapshot as usize + 1].ip_ids[e.to as usize];
            edges.push((
                EdgeType::IpSameAcross,
                w.start_time,
                e.snapshot as usize,
                End::Ip(from.clone()),
                End::Ip(to.clone()),
            ));
        }
    }
    edges.sort();
    (windows, edges)
}

/// Every flow node carries its own record's feature row.
fn features_follow_flows(ws: &[WindowGraph], features: &FeatureMatrix) -> bool {
    ws.iter()
        .flat_map(|w| &w.snapshots)
        .all(|s| (0..s.n_flows()).all(|i| s.flow_row(i) == features.row(s.flow_index[i] as usize)))
}

pub fn check() -> Outcome {
    let started = Instant::now();
    let mut rng = seed::rng(seed::derive(0, "acceptance.builder"));
    let (mut edges_seen, mut mismatches, mut first) = (0usize, 0usize, None);
    for case in 0..BUILDER_CASES {
        let (records, cfg) = random_case(&mut rng);
        let features = FeatureMatrix {
            rows: records.len(),
            cols: 2,
            data: (0..records.len() * 2).map(|i| i as f32).collect(),
        };
        let built = build_windows(&records, &features, None, &cfg).unwrap();
        let parallel = build_windows_parallel(&records, &features, None, &cfg, 3).unwrap();
        let expected = reference(&records, &cfg);
        edges_seen += expected.1.len();
        let ok = observed(&built) == expected
            && built == parallel
            && built.iter().all(|w| w.snapshots.len() == cfg.snapshots_per_window)
            && features_follow_flows(&built, &features);
        if !ok {
            mismatches += 1;
            first.get_or_insert(case);
        }
    }
    let elapsed = started.elapsed();
    let mut detail = format!(
        "{BUILDER_CASES} flow sets (<= {BUILDER_MAX_FLOWS} flows), {edges_seen} reference edges, \
         {mismatches} mismatches, {:.1}s (< {}s)",
        elapsed.as_secs_f64(),
        BUILDER_BUDGET.as_secs()
    );
    if let Some(c) = first {
        detail.push_str(&format!(", first mismatch in case {c}"));
    }
    Outcome::new(mismatches == 0 && elapsed < BUILDER_BUDGET, detail)
}
