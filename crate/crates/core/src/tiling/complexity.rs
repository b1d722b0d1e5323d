use serde::{Deserialize, Serialize};

use super::RnnShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    /// Recurrent matmul flops, a multiply-add counting as two.
    pub flops: u128,
    /// Bytes of state carried between steps at inference.
    pub inference_state_bytes: u128,
    /// Bytes of states kept for the backward pass over `T` steps.
    pub training_state_bytes: u128,
}

pub fn complexity_estimate(shape: &RnnShape, seq_len: u64) -> Complexity {
    let t = seq_len as u128;
    let heads = shape.num_heads as u128;
    let dh = shape.head_dim as u128;
    let b = shape.batch_size as u128;
    let e = shape.dtype.bytes() as u128;
    let state = shape.num_states as u128 * heads * dh * b * e;
    Complexity {
        flops: 2 * t * heads * shape.num_gates as u128 * dh * dh * b,
        inference_state_bytes: state,
        training_state_bytes: (t + 1) * state,
    }
}
