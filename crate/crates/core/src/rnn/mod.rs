//! Reference gated RNN with head-wise block-diagonal recurrence.
//!
//! Each step computes gate pre-activations
//! `g_j = x_j + R_j h_{t-1} + b_j` and new states `s_t = P(s_{t-1}, g)` through a
//! variant's element-wise map, where `h` is state 0. `R_j` is block diagonal
//! with one `head_dim x head_dim` block per head. The backward pass runs the
//! chain rule through `P` and the recurrent product, accumulating
//! `dR_j += dg_j h_{t-1}^T`.
//!
//! All sums run in ascending index order, so results are bit-reproducible.

mod checks;
mod engine;
mod io;
mod variant;

pub use checks::{
    blockdiag_deviation, gradcheck, gradcheck_random, percentile, precision_drift, random_batch,
    random_instance, random_params, DriftPoint, GradcheckReport, InitScales,
};
pub use engine::{
    backward, backward_full, backward_in, forward, forward_in, forward_with, Bf16Emulated,
    ClipPolicy, F16Emulated, ForwardTrace, Gradients, Precision, RnnParams, SequenceBatch, F32,
    F64,
};
pub use io::{
    params_from_json, params_to_json, tensor_from_json, tensor_to_json, TensorFile, IO_VERSION,
};
pub use variant::{log_sigmoid, sigmoid, slstm_exponents, CellVariant, Jacobians, MAX_SLOTS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RnnError {
    #[error("unknown cell variant `{0}` (expected elman, lstm, gru or slstm)")]
    UnknownVariant(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("clip magnitude must be positive, got {0}")]
    InvalidClip(f64),
    #[error("malformed tensor file: {0}")]
    Format(String),
}
