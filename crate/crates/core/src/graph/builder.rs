use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{CrossEdge, EdgeType, SnapshotGraph, WindowGraph};
use crate::error::{Error, Result};
use crate::ingest::{FeatureMatrix, FlowRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub snapshot_seconds: f64,
    pub snapshots_per_window: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            snapshot_seconds: 2.0,
            snapshots_per_window: 5,
        }
    }
}

impl GraphConfig {
    pub fn snapshot_ms(&self) -> Result<i64> {
        if self.snapshot_seconds.is_nan() || self.snapshot_seconds <= 0.0 || self.snapshots_per_window == 0 {
            return Err(Error::Config(format!(
                "snapshot_seconds ({}) and snapshots_per_window ({}) must be positive",
                self.snapshot_seconds, self.snapshots_per_window
            )));
        }
        Ok(((self.snapshot_seconds * 1000.0).round() as i64).max(1))
    }
}

/// Partition time-sorted records into windows of snapshots. Windows
/// without any flow are skipped.
pub fn build_windows(
    records: &[FlowRecord],
    features: &FeatureMatrix,
    labels: Option<&[usize]>,
    cfg: &GraphConfig,
) -> Result<Vec<WindowGraph>> {
    build_windows_in_range(records, features, labels, cfg, None)
}

/// Like [`build_windows`], but over an explicit `[start, end)` time range
/// (milliseconds): every window overlapping the range is emitted, empty or
/// not, and records outside the range are ignored.
pub fn build_windows_in_range(
    records: &[FlowRecord],
    features: &FeatureMatrix,
    labels: Option<&[usize]>,
    cfg: &GraphConfig,
    range: Option<(i64, i64)>,
) -> Result<Vec<WindowGraph>> {
    let snapshot_ms = cfg.snapshot_ms()?;
    let per_window = cfg.snapshots_per_window as i64;
    if features.rows != records.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows for {} records",
            features.rows,
            records.len()
        )));
    }
    if let Some(l) = labels {
        if l.len() != records.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} records",
                l.len(),
                records.len()
            )));
        }
    }
    if let Some(i) = records.windows(2).position(|w| w[1].start_time < w[0].start_time) {
        return Err(Error::InvalidInput(format!(
            "records not sorted by start_time at index {}",
            i + 1
        )));
    }
    if let Some((start, end)) = range {
        if end <= start {
            return Err(Error::Config(format!("empty time range [{start}, {end})")));
        }
    }

    let origin = match (range, records.first()) {
        (Some((start, _)), _) => start,
        (None, Some(r)) => r.start_time,
        (None, None) => return Ok(Vec::new()),
    };
    let window_ms = snapshot_ms * per_window;

    // window index -> snapshot offset -> record indices (input order)
    let mut grouped: BTreeMap<i64, BTreeMap<i64, Vec<usize>>> = BTreeMap::new();
    if let Some((start, end)) = range {
        let last = (end - 1 - start).div_euclid(window_ms);
        for w in 0..=last {
            grouped.entry(w).or_default();
        }
    }
    for (i, r) in records.iter().enumerate() {
        if let Some((start, end)) = range {
            if r.start_time < start || r.start_time >= end {
                continue;
            }
        }
        let k = (r.start_time - origin).div_euclid(snapshot_ms);
        grouped
            .entry(k.div_euclid(per_window))
            .or_default()
            .entry(k.rem_euclid(per_window))
            .or_default()
            .push(i);
    }

    let mut windows = Vec::with_capacity(grouped.len());
    for (w, snaps) in grouped {
        let mut snapshots: Vec<SnapshotGraph> = (0..per_window)
            .map(|k| match snaps.get(&k) {
                Some(idx) => build_snapshot(records, features, labels, idx),
                None => SnapshotGraph::empty(features.cols),
            })
            .collect();
        if labels.is_some() {
            for s in &mut snapshots {
                s.flow_labels.get_or_insert_with(Vec::new);
            }
        }
        let cross_edges = cross_edges(&snapshots);
        windows.push(WindowGraph {
            start_time: origin + w * window_ms,
            snapshot_ms,
            snapshots,
            cross_edges,
        });
    }
    Ok(windows)
}

/// [`build_windows`] spread over up to `jobs` threads; the output is
/// identical to the sequential build.
pub fn build_windows_parallel(
    records: &[FlowRecord],
    features: &FeatureMatrix,
    labels: Option<&[usize]>,
    cfg: &GraphConfig,
    jobs: usize,
) -> Result<Vec<WindowGraph>> {
    let window_ms = cfg.snapshot_ms()? * cfg.snapshots_per_window as i64;
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return build_windows(records, features, labels, cfg);
    };
    let n_windows = (last.start_time - first.start_time).div_euclid(window_ms) + 1;
    let jobs = (jobs.max(1) as i64).min(n_windows);
    if jobs <= 1 || last.start_time < first.start_time {
        return build_windows(records, features, labels, cfg);
    }
    let per_job = (n_windows + jobs - 1) / jobs;
    let ranges: Vec<(i64, i64)> = (0..jobs)
        .map(|j| {
            let a = (j * per_job).min(n_windows);
            let b = ((j + 1) * per_job).min(n_windows);
            (first.start_time + a * window_ms, first.start_time + b * window_ms)
        })
        .filter(|(a, b)| b > a)
        .collect();
    let parts: Vec<Result<Vec<WindowGraph>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .iter()
            .map(|&r| scope.spawn(move || build_windows_in_range(records, features, labels, cfg, Some(r))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("graph builder thread panicked"))
            .collect()
    });
    let mut out = Vec::new();
    for part in parts {
        out.extend(part?.into_iter().filter(|w| w.n_flows() > 0));
    }
    Ok(out)
}

fn build_snapshot(
    records: &[FlowRecord],
    features: &FeatureMatrix,
    labels: Option<&[usize]>,
    members: &[usize],
) -> SnapshotGraph {
    let mut g = SnapshotGraph::empty(features.cols);
    let mut ip_index: HashMap<&str, u32> = HashMap::new();
    let mut last_by_src: HashMap<u32, u32> = HashMap::new();
    let mut last_by_dst: HashMap<u32, u32> = HashMap::new();
    let mut flow_labels = labels.map(|_| Vec::with_capacity(members.len()));

    for (local, &ri) in members.iter().enumerate() {
        let r = &records[ri];
        let f = local as u32;
        let s = intern(&mut ip_index, &r.src_ip, &mut g);
        let d = intern(&mut ip_index, &r.dst_ip, &mut g);
        g.flow_features.extend_from_slice(features.row(ri));
        g.flow_times.push(r.start_time);
        g.flow_index.push(ri as u64);
        if let (Some(out), Some(l)) = (flow_labels.as_mut(), labels) {
            out.push(l[ri] as u32);
        }
        g.edges[EdgeType::IpToFlowSrc.index()].push((s, f));
        g.edges[EdgeType::FlowToIpSrc.index()].push((f, s));
        g.edges[EdgeType::IpToFlowDst.index()].push((d, f));
        g.edges[EdgeType::FlowToIpDst.index()].push((f, d));
        // members are in (start_time, input index) order, so the previous
        // flow at an endpoint is its chain predecessor
        if let Some(prev) = last_by_src.insert(s, f) {
            g.edges[EdgeType::FlowFollowsSrc.index()].push((prev, f));
        }
        if let Some(prev) = last_by_dst.insert(d, f) {
            g.edges[EdgeType::FlowFollowsDst.index()].push((prev, f));
        }
    }
    g.flow_labels = flow_labels;
    g
}

fn intern<'a>(index: &mut HashMap<&'a str, u32>, id: &'a str, g: &mut SnapshotGraph) -> u32 {
    *index.entry(id).or_insert_with(|| {
        g.ip_ids.push(id.to_string());
        g.ip_count += 1;
        (g.ip_count - 1) as u32
    })
}

fn cross_edges(snapshots: &[SnapshotGraph]) -> Vec<CrossEdge> {
    let mut out = Vec::new();
    for (t, pair) in snapshots.windows(2).enumerate() {
        let next: HashMap<&str, u32> = pair[1]
            .ip_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i as u32))
            .collect();
        for (i, id) in pair[0].ip_ids.iter().enumerate() {
            if let Some(&j) = next.get(id.as_str()) {
                out.push(CrossEdge {
                    snapshot: t as u32,
                    from: i as u32,
                    to: j,
                });
            }
        }
    }
    out
}
