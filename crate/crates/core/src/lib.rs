//! Integer constraint solving, fused-RNN tiling plans and a reference gated-RNN engine.

pub mod csp;
pub mod hardware;
pub mod parity;
pub mod rnn;
pub mod tiling;
