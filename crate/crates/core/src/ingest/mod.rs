//! Flow-record ingestion: CSV parsing, feature preprocessing and label
//! encoding.

mod features;
mod labels;

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{
    port_class, CategoricalColumn, FeatureMatrix, FeatureSpec, NumericColumn, PreprocessConfig, FEATURE_FORMAT_VERSION,
};
pub use labels::{encode_labels, LabelCodec, LABEL_FORMAT_VERSION};

use crate::error::{Error, Result};

/// One bidirectional flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    /// Milliseconds since the epoch.
    pub start_time: i64,
    pub duration_ms: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub pkts_in: u64,
    pub pkts_out: u64,
    pub tcp_flags: u8,
    pub label: Option<String>,
}

/// Protocols that carry port numbers (TCP, UDP, SCTP).
pub fn has_ports(protocol: u8) -> bool {
    matches!(protocol, 6 | 17 | 132)
}

/// Column names for each field. `label` may be absent from the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSchema {
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: String,
    pub dst_port: String,
    pub protocol: String,
    pub start_time: String,
    pub duration_ms: String,
    pub bytes_in: String,
    pub bytes_out: String,
    pub pkts_in: String,
    pub pkts_out: String,
    pub tcp_flags: String,
    pub label: String,
}

impl Default for FlowSchema {
    fn default() -> Self {
        Self {
            src_ip: "src_ip".into(),
            dst_ip: "dst_ip".into(),
            src_port: "src_port".into(),
            dst_port: "dst_port".into(),
            protocol: "protocol".into(),
            start_time: "start_time".into(),
            duration_ms: "duration_ms".into(),
            bytes_in: "bytes_in".into(),
            bytes_out: "bytes_out".into(),
            pkts_in: "pkts_in".into(),
            pkts_out: "pkts_out".into(),
            tcp_flags: "tcp_flags".into(),
            label: "label".into(),
        }
    }
}

impl FlowSchema {
    /// Column names used by the NetFlow v9 style `NF-*` dataset exports.
    pub fn netflow_v9() -> Self {
        Self {
            src_ip: "IPV4_SRC_ADDR".into(),
            dst_ip: "IPV4_DST_ADDR".into(),
            src_port: "L4_SRC_PORT".into(),
            dst_port: "L4_DST_PORT".into(),
            protocol: "PROTOCOL".into(),
            start_time: "FLOW_START_MILLISECONDS".into(),
            duration_ms: "FLOW_DURATION_MILLISECONDS".into(),
            bytes_in: "IN_BYTES".into(),
            bytes_out: "OUT_BYTES".into(),
            pkts_in: "IN_PKTS".into(),
            pkts_out: "OUT_PKTS".into(),
            tcp_flags: "TCP_FLAGS".into(),
            label: "Attack".into(),
        }
    }

    fn required(&self) -> [(&'static str, &str); 12] {
        [
            ("src_ip", &self.src_ip),
            ("dst_ip", &self.dst_ip),
            ("src_port", &self.src_port),
            ("dst_port", &self.dst_port),
            ("protocol", &self.protocol),
            ("start_time", &self.start_time),
            ("duration_ms", &self.duration_ms),
            ("bytes_in", &self.bytes_in),
            ("bytes_out", &self.bytes_out),
            ("pkts_in", &self.pkts_in),
            ("pkts_out", &self.pkts_out),
            ("tcp_flags", &self.tcp_flags),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedRow {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub records: Vec<FlowRecord>,
    pub malformed: Vec<MalformedRow>,
}

impl ParseOutcome {
    pub fn malformed_count(&self) -> usize {
        self.malformed.len()
    }
}

/// Parse a flow CSV file. Rows that fail to parse are reported in
/// [`ParseOutcome::malformed`]; more than half of the rows failing is an
/// error.
pub fn parse_flows(path: &Path, schema: &FlowSchema) -> Result<ParseOutcome> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_flows_from(file, schema)
}

pub fn parse_flows_from<R: Read>(reader: R, schema: &FlowSchema) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Schema("missing header row".into()));
    }
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut cols = [0usize; 12];
    let mut missing = Vec::new();
    for (slot, (field, column)) in cols.iter_mut().zip(schema.required()) {
        match position.get(column) {
            Some(&i) => *slot = i,
            None => missing.push(format!("{field} (column `{column}`)")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing required columns: {}",
            missing.join(", ")
        )));
    }
    let label_col = position.get(schema.label.as_str()).copied();

    let mut records = Vec::new();
    let mut malformed = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                malformed.push(MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&row, &cols, label_col) {
            Ok(rec) => records.push(rec),
            Err(reason) => malformed.push(MalformedRow { line, reason }),
        }
    }
    let total = records.len() + malformed.len();
    if malformed.len() * 2 > total {
        return Err(Error::CorruptInput {
            malformed: malformed.len(),
            total,
        });
    }
    Ok(ParseOutcome { records, malformed })
}

fn field<'a>(row: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str, String> {
    row.get(idx).ok_or_else(|| format!("row too short for `{name}`"))
}

fn num<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize, name: &str) -> Result<T, String> {
    let s = field(row, idx, name)?;
    s.parse::<T>().map_err(|_| format!("bad {name}: `{s}`"))
}

fn parse_row(row: &csv::StringRecord, cols: &[usize; 12], label_col: Option<usize>) -> Result<FlowRecord, String> {
    let src_ip = field(row, cols[0], "src_ip")?.to_string();
    let dst_ip = field(row, cols[1], "dst_ip")?.to_string();
    if src_ip.is_empty() || dst_ip.is_empty() {
        return Err("empty endpoint".into());
    }
    let protocol: u8 = num(row, cols[4], "protocol")?;
    let (mut src_port, mut dst_port): (u16, u16) = (num(row, cols[2], "src_port")?, num(row, cols[3], "dst_port")?);
    if !has_ports(protocol) {
        src_port = 0;
        dst_port = 0;
    }
    let label = match label_col {
        Some(i) => row.get(i).filter(|s| !s.is_empty()).map(str::to_string),
        None => None,
    };
    Ok(FlowRecord {
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        start_time: num(row, cols[5], "start_time")?,
        duration_ms: num(row, cols[6], "duration_ms")?,
        bytes_in: num(row, cols[7], "bytes_in")?,
        bytes_out: num(row, cols[8], "bytes_out")?,
        pkts_in: num(row, cols[9], "pkts_in")?,
        pkts_out: num(row, cols[10], "pkts_out")?,
        tcp_flags: num(row, cols[11], "tcp_flags")?,
        label,
    })
}

/// Write records with the default schema. The label column is emitted
/// only when `with_labels` is set.
pub fn write_flows<W: Write>(writer: W, records: &[FlowRecord], with_labels: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let s = FlowSchema::default();
    let mut header: Vec<&str> = s.required().iter().map(|(_, c)| *c).collect();
    if with_labels {
        header.push(&s.label);
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.src_ip.clone(),
            r.dst_ip.clone(),
            r.src_port.to_string(),
            r.dst_port.to_string(),
            r.protocol.to_string(),
            r.start_time.to_string(),
            r.duration_ms.to_string(),
            r.bytes_in.to_string(),
            r.bytes_out.to_string(),
            r.pkts_in.to_string(),
            r.pkts_out.to_string(),
            r.tcp_flags.to_string(),
        ];
        if with_labels {
            row.push(r.label.clone().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_flows_file(path: &Path, records: &[FlowRecord], with_labels: bool) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_flows(std::io::BufWriter::new(f), records, with_labels)
}

/// Stable sort by start time; equal timestamps keep input order.
pub fn sort_by_time(records: &mut [FlowRecord]) {
    records.sort_by_key(|r| r.start_time);
}
