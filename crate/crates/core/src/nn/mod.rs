//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Values are recorded on a [`Tape`] during the forward pass; calling
//! [`Tape::backward`] walks the tape in reverse and accumulates gradients
//! into the [`ParamSet`] the parameters were read from. All tape values are
//! row-major matrices; a vector parameter of shape `[d]` is seen as `1 × d`
//! and a scalar as `1 × 1`.
//!
//! Parameters and activations are `f32`. Reductions (sums, means, segment
//! means and the losses) accumulate in `f64`. The engine is generic over
//! [`Scalar`] so the same code can be instantiated at `f64` when checking
//! gradients against finite differences.

mod checkpoint;
mod init;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, ParamEntry,
    CHECKPOINT_FORMAT_VERSION,
};
pub use init::{glorot_uniform, zeros};
pub use optim::{AdamConfig, AdamState};
pub use params::{count_parameters, zero_grads, ParamId, ParamSet, Parameter};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
