//! SGHormer: a desk-scale spiking graph transformer.
//!
//! The crate bundles everything needed to train and profile small spiking
//! graph transformers on synthetic graph-level tasks:
//!
//! - [`tensor`] / [`tape`] — a compact reverse-mode autodiff engine with an
//!   arctangent surrogate gradient for the non-differentiable spike.
//! - [`neurons`] — rate-coded integrate-and-fire neuron layers (IF / LIF /
//!   PLIF) stepped over discrete time.
//! - [`graph`] — graph containers, batching, JSONL persistence, synthetic
//!   task generators, and Laplacian / random-walk positional encodings.
//! - [`blocks`] — model building blocks: rate encoder, spiking rectify
//!   block, binarized popcount self-attention, and a message-passing layer.
//! - [`model`] — the full spiking model, a conventional full-precision
//!   transformer baseline, checkpointing, and attention export.
//! - [`energy`] — a theoretical FLOP/SOP energy model with per-block
//!   accounting and spiking-vs-baseline comparison reports.
//! - [`train`] / [`cli`] — training loop, metrics, and the command-line
//!   front end.
//!
//! See the crate examples for end-to-end usage of each capability.

pub mod blocks;
pub mod cli;
pub mod config;
pub mod encodings;
pub mod energy;
pub mod graph;
pub mod model;
pub mod neurons;
pub mod optim;
pub mod synthetic;
pub mod tape;
pub mod train;
pub mod tensor;

pub use tape::{arctan_surrogate, arctan_surrogate_deriv, grad_check, Blocks, EdgeList, Tape, BN_EPS};
pub use tensor::{AutodiffError, Tensor};
