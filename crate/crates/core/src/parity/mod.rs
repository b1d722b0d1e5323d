//! Parity task with length extrapolation: train on short bit strings, evaluate
//! on longer ones.

mod data;
mod model;
mod train;

pub use data::{parity, parity_batch, ParityBatch};
pub use model::{bce_with_logit, BatchStats, ModelDims, ParityGrads, ParityModel};
pub use train::{
    evaluate, train, train_model, train_sweep, Adam, EvalPoint, ParityConfig, TrainError,
    TrainReport, TrainRun,
};
