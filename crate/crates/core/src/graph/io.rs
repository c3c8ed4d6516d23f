//! On-disk graph corpora.
//!
//! Two encodings carry the same [`GraphCorpus`]:
//!
//! * JSON, for debugging.
//! * A compact binary form: the magic `FGRB`, `u32` format version, a
//!   length-prefixed JSON metadata block (feature dim, feature spec, class
//!   names), then the windows. All integers are little-endian, features are
//!   `f32`, strings and lists are prefixed with their `u32` length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CrossEdge, SnapshotGraph, WindowGraph};
use crate::error::{Error, Result};
use crate::ingest::FeatureSpec;

pub const GRAPH_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FGRB";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphCorpus {
    pub format_version: u32,
    pub feature_dim: usize,
    pub feature_spec: Option<FeatureSpec>,
    pub class_names: Option<Vec<String>>,
    pub windows: Vec<WindowGraph>,
}

impl GraphCorpus {
    pub fn new(
        feature_dim: usize,
        feature_spec: Option<FeatureSpec>,
        class_names: Option<Vec<String>>,
        windows: Vec<WindowGraph>,
    ) -> Self {
        Self {
            format_version: GRAPH_FORMAT_VERSION,
            feature_dim,
            feature_spec,
            class_names,
            windows,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    feature_dim: usize,
    feature_spec: Option<FeatureSpec>,
    class_names: Option<Vec<String>>,
}

pub fn write_corpus_json<W: Write>(w: W, corpus: &GraphCorpus) -> Result<()> {
    serde_json::to_writer(w, corpus)?;
    Ok(())
}

pub fn read_corpus_json<R: Read>(r: R) -> Result<GraphCorpus> {
    let c: GraphCorpus = serde_json::from_reader(r)?;
    if c.format_version != GRAPH_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "graph format_version {} unsupported",
            c.format_version
        )));
    }
    Ok(c)
}

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b).map_err(|e| Error::io("<graph>", e))
    }
    fn u8(&mut self, x: u8) -> Result<()> {
        self.bytes(&[x])
    }
    fn u32(&mut self, x: usize) -> Result<()> {
        let x = u32::try_from(x).map_err(|_| Error::Format(format!("{x} does not fit in u32")))?;
        self.bytes(&x.to_le_bytes())
    }
    fn i64(&mut self, x: i64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }
    fn u64(&mut self, x: u64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.bytes(s.as_bytes())
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn fill<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| Error::io("<graph>", e))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.fill::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.fill()?) as usize)
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.fill()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.fill()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.fill()?))
    }
    fn vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b).map_err(|e| Error::io("<graph>", e))?;
        Ok(b)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.vec(n)?).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn write_corpus_binary<W: Write>(w: W, corpus: &GraphCorpus) -> Result<()> {
    let mut o = Out(w);
    o.bytes(MAGIC)?;
    o.u32(GRAPH_FORMAT_VERSION as usize)?;
    let meta = serde_json::to_vec(&Meta {
        feature_dim: corpus.feature_dim,
        feature_spec: corpus.feature_spec.clone(),
        class_names: corpus.class_names.clone(),
    })?;
    o.u32(meta.len())?;
    o.bytes(&meta)?;
    o.u32(corpus.windows.len())?;
    for win in &corpus.windows {
        o.i64(win.start_time)?;
        o.i64(win.snapshot_ms)?;
        o.u32(win.snapshots.len())?;
        for s in &win.snapshots {
            o.u32(s.n_flows())?;
            o.u32(s.feature_dim)?;
            for x in &s.flow_features {
                o.bytes(&x.to_le_bytes())?;
            }
            for &t in &s.flow_times {
                o.i64(t)?;
            }
            for &i in &s.flow_index {
                o.u64(i)?;
            }
            match &s.flow_labels {
                Some(l) => {
                    o.u8(1)?;
                    for &x in l {
                        o.u32(x as usize)?;
                    }
                }
                None => o.u8(0)?,
            }
            o.u32(s.ip_count)?;
            for id in &s.ip_ids {
                o.str(id)?;
            }
            for edges in &s.edges {
                o.u32(edges.len())?;
                for &(a, b) in edges {
                    o.u32(a as usize)?;
                    o.u32(b as usize)?;
                }
            }
        }
        o.u32(win.cross_edges.len())?;
        for e in &win.cross_edges {
            o.u32(e.snapshot as usize)?;
            o.u32(e.from as usize)?;
            o.u32(e.to as usize)?;
        }
    }
    o.0.flush().map_err(|e| Error::io("<graph>", e))
}

pub fn read_corpus_binary<R: Read>(r: R) -> Result<GraphCorpus> {
    let mut i = In(r);
    if &i.fill::<4>()? != MAGIC {
        return Err(Error::Format("not a graph file (bad magic)".into()));
    }
    let version = i.u32()? as u32;
    if version != GRAPH_FORMAT_VERSION {
        return Err(Error::Format(format!("graph format_version {version} unsupported")));
    }
    let meta_len = i.u32()?;
    let meta: Meta = serde_json::from_slice(&i.vec(meta_len)?)?;
    let n_windows = i.u32()?;
    let mut windows = Vec::with_capacity(n_windows.min(1 << 20));
    for _ in 0..n_windows {
        let start_time = i.i64()?;
        let snapshot_ms = i.i64()?;
        let n_snap = i.u32()?;
        let mut snapshots = Vec::with_capacity(n_snap.min(1 << 16));
        for _ in 0..n_snap {
            let n = i.u32()?;
            let feature_dim = i.u32()?;
            let flow_features = (0..n * feature_dim).map(|_| i.f32()).collect::<Result<_>>()?;
            let flow_times = (0..n).map(|_| i.i64()).collect::<Result<_>>()?;
            let flow_index = (0..n).map(|_| i.u64()).collect::<Result<_>>()?;
            let flow_labels = match i.u8()? {
                0 => None,
                1 => Some((0..n).map(|_| i.u32().map(|x| x as u32)).collect::<Result<_>>()?),
                b => return Err(Error::Format(format!("bad label flag {b}"))),
            };
            let ip_count = i.u32()?;
            let ip_ids = (0..ip_count).map(|_| i.str()).collect::<Result<_>>()?;
            let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
            for list in &mut edges {
                let m = i.u32()?;
                *list = (0..m)
                    .map(|_| Ok((i.u32()? as u32, i.u32()? as u32)))
                    .collect::<Result<_>>()?;
            }
            snapshots.push(SnapshotGraph {
                feature_dim,
                flow_features,
                ip_count,
                edges,
                flow_labels,
                flow_times,
                flow_index,
                ip_ids,
            });
        }
        let n_cross = i.u32()?;
        let cross_edges = (0..n_cross)
            .map(|_| {
                Ok(CrossEdge {
                    snapshot: i.u32()? as u32,
                    from: i.u32()? as u32,
                    to: i.u32()? as u32,
                })
            })
            .collect::<Result<_>>()?;
        windows.push(WindowGraph {
            start_time,
            snapshot_ms,
            snapshots,
            cross_edges,
        });
    }
    Ok(GraphCorpus {
        format_version: version,
        feature_dim: meta.feature_dim,
        feature_spec: meta.feature_spec,
        class_names: meta.class_names,
        windows,
    })
}

/// Write by extension: `.json` gives the debug format, anything else binary.
pub fn write_corpus(path: &Path, corpus: &GraphCorpus) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    if path.extension().is_some_and(|e| e == "json") {
        write_corpus_json(f, corpus)
    } else {
        write_corpus_binary(f, corpus)
    }
}

pub fn read_corpus(path: &Path) -> Result<GraphCorpus> {
    let f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    if path.extension().is_some_and(|e| e == "json") {
        read_corpus_json(f)
    } else {
        read_corpus_binary(f)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::graph::{build_windows, GraphConfig};
    use crate::ingest::{FeatureMatrix, FlowRecord};

    fn corpus(flows: &[(u8, u8, i64)], labeled: bool) -> GraphCorpus {
        let mut recs: Vec<FlowRecord> = flows
            .iter()
            .map(|&(s, d, t)| FlowRecord {
                src_ip: format!("10.0.0.{s}"),
                dst_ip: format!("10.0.0.{d}"),
                src_port: 1,
                dst_port: 2,
                protocol: 6,
                start_time: t,
                duration_ms: 0,
                bytes_in: 0,
                bytes_out: 0,
                pkts_in: 0,
                pkts_out: 0,
                tcp_flags: 0,
                label: None,
            })
            .collect();
        recs.sort_by_key(|r| r.start_time);
        let feats = FeatureMatrix {
            rows: recs.len(),
            cols: 3,
            data: (0..recs.len() * 3).map(|i| i as f32 * 0.1 - 2.0).collect(),
        };
        let labels: Vec<usize> = (0..recs.len()).map(|i| i % 3).collect();
        let windows = build_windows(&recs, &feats, labeled.then_some(&labels[..]), &GraphConfig::default()).unwrap();
        GraphCorpus::new(
            3,
            None,
            labeled.then(|| vec!["a".into(), "b".into(), "c".into()]),
            windows,
        )
    }

    proptest! {
        #[test]
        fn binary_and_json_round_trip(
            flows in prop::collection::vec((0u8..6, 0u8..6, 0i64..30_000), 0..40),
            labeled in any::<bool>(),
        ) {
            let c = corpus(&flows, labeled);
            let mut bin = Vec::new();
            write_corpus_binary(&mut bin, &c).unwrap();
            prop_assert_eq!(&read_corpus_binary(&bin[..]).unwrap(), &c);
            let mut js = Vec::new();
            write_corpus_json(&mut js, &c).unwrap();
            prop_assert_eq!(&read_corpus_json(&js[..]).unwrap(), &c);
        }
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(read_corpus_binary(&b"FGCK\x01\0\0\0"[..]).is_err());
        let mut bin = Vec::new();
        write_corpus_binary(&mut bin, &corpus(&[(1, 2, 0)], false)).unwrap();
        bin.truncate(bin.len() - 3);
        assert!(read_corpus_binary(&bin[..]).is_err());
    }
}
