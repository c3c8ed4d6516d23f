//! Flow-level traffic analysis with spatio-temporal heterogeneous graph
//! neural networks.
//!
//! The pipeline is:
//!
//! 1. [`ingest`]: parse NetFlow-style CSV records and turn them into
//!    fixed-width feature vectors and label indices.
//! 2. [`graph`]: cut the time-ordered records into windows of short
//!    snapshots. Every flow becomes a node linked to its source and
//!    destination IP nodes, flows sharing an endpoint are chained in time
//!    order, and recurring IPs are linked across consecutive snapshots.
//! 3. [`nn`]: a small reverse-mode autodiff engine with the layers, losses
//!    and optimizer the model needs.
//! 4. [`model`]: the heterogeneous GraphSAGE encoder, per-relation link
//!    decoders and the flow classification head.
//! 5. [`pretrain`]: self-supervised link prediction with negative sampling.
//! 6. [`finetune`]: supervised flow classification from a pretrained base or
//!    from scratch, with macro-F1 model selection.
//! 7. [`eval`]: metrics, the few-shot sweep, loss-curve averaging and a
//!    synthetic traffic generator.

pub mod error;
pub mod eval;
pub mod finetune;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod pretrain;
pub mod seed;

pub use error::{Error, Result};
