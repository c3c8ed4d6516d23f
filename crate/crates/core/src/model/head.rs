use crate::error::Result;
use crate::nn::{ParamSet, Scalar, Tape, Var};
use crate::seed;

use super::ModelConfig;

/// Classification logits (`rows × n_classes`) for flow embeddings.
pub fn classify_flows<T: Scalar>(
    tape: &mut Tape<T>,
    flow_emb: Var,
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    dropout: f64,
    training: bool,
    rng: &mut seed::Rng,
) -> Result<Var> {
    let mut x = flow_emb;
    let n_layers = cfg.head_hidden_dims.len() + 1;
    for i in 0..n_layers {
        x = tape.dropout(x, dropout, training, rng)?;
        let w = tape.param_named(params, &format!("head.layer{i}.weight"))?;
        let b = tape.param_named(params, &format!("head.layer{i}.bias"))?;
        x = tape.matmul(x, w)?;
        x = tape.add(x, b)?;
        if i + 1 < n_layers {
            x = tape.relu(x);
        }
    }
    Ok(x)
}
