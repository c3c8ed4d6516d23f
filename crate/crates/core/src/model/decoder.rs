use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::EdgeType;
use crate::nn::{ParamSet, Scalar, Tape, Var};

use super::encoder::Embeddings;

/// Candidate edges per type, in window-global indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeBatch {
    pub src: [Vec<u32>; 7],
    pub dst: [Vec<u32>; 7],
}

impl EdgeBatch {
    pub fn push(&mut self, t: EdgeType, src: u32, dst: u32) {
        self.src[t.index()].push(src);
        self.dst[t.index()].push(dst);
    }

    pub fn len(&self) -> usize {
        self.src.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, t: EdgeType) -> usize {
        self.src[t.index()].len()
    }
}

/// Logits (`n × 1`) for each non-empty edge type of a batch.
pub type EdgeScores = Vec<(EdgeType, Var)>;

/// Score candidate links with the per-type MLP decoders.
pub fn score_edges<T: Scalar>(
    tape: &mut Tape<T>,
    emb: &Embeddings,
    batch: &EdgeBatch,
    params: &ParamSet<T>,
) -> Result<EdgeScores> {
    let mut out = Vec::new();
    for t in EdgeType::ALL {
        let (src, dst) = (&batch.src[t.index()], &batch.dst[t.index()]);
        if src.len() != dst.len() {
            return Err(Error::InvalidInput(format!(
                "edge batch for {} has ragged endpoints",
                t.name()
            )));
        }
        if src.is_empty() {
            continue;
        }
        let hs = tape.row_gather(emb.of(t.src_type()), Arc::from(src.as_slice()))?;
        let hd = tape.row_gather(emb.of(t.dst_type()), Arc::from(dst.as_slice()))?;
        let x = tape.concat(&[hs, hd])?;
        let p = format!("decoder.{}", t.name());
        let w1 = tape.param_named(params, &format!("{p}.hidden.weight"))?;
        let b1 = tape.param_named(params, &format!("{p}.hidden.bias"))?;
        let w2 = tape.param_named(params, &format!("{p}.out.weight"))?;
        let b2 = tape.param_named(params, &format!("{p}.out.bias"))?;
        let z = tape.matmul(x, w1)?;
        let z = tape.add(z, b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, w2)?;
        out.push((t, tape.add(z, b2)?));
    }
    Ok(out)
}
