use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FlowRecord;
use crate::error::{Error, Result};

pub const LABEL_FORMAT_VERSION: u32 = 1;

/// Bijection between class names and contiguous indices `0..K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCodec {
    class_names: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct LabelCodecFile {
    format_version: u32,
    class_names: Vec<String>,
}

impl LabelCodec {
    /// Classes are sorted lexicographically and deduplicated.
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        let class_names: Vec<String> = set.into_iter().collect();
        let index = class_names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { class_names, index }
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.class_names.get(index).map(String::as_str)
    }

    /// Encode labels of `records` with this codec.
    pub fn encode(&self, records: &[FlowRecord]) -> Result<Vec<usize>> {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let label = r
                    .label
                    .as_deref()
                    .ok_or_else(|| Error::InvalidInput(format!("record {i} has no label")))?;
                self.index(label)
                    .ok_or_else(|| Error::InvalidInput(format!("record {i}: unknown class `{label}`")))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&LabelCodecFile {
            format_version: LABEL_FORMAT_VERSION,
            class_names: self.class_names.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: LabelCodecFile = serde_json::from_str(s)?;
        if f.format_version != LABEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "label codec format_version {} unsupported",
                f.format_version
            )));
        }
        Ok(Self::new(f.class_names))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Build a codec from the labels present and encode every record.
pub fn encode_labels(records: &[FlowRecord]) -> Result<(LabelCodec, Vec<usize>)> {
    if let Some(i) = records.iter().position(|r| r.label.is_none()) {
        return Err(Error::InvalidInput(format!("record {i} has no label")));
    }
    let codec = LabelCodec::new(records.iter().filter_map(|r| r.label.clone()));
    let idx = codec.encode(records)?;
    Ok((codec, idx))
}
