//! Hybrid cross-entropy + supervised-contrastive objective, Adam, and the
//! training / evaluation / leave-one-participant-out loops.

mod adam;
mod loss;
mod train;

pub use adam::Adam;
pub use loss::{cross_entropy, hybrid_loss, supervised_contrastive, HybridLossConfig};
pub use train::{evaluate, lopo_run, train, EpochLog, Evaluation, LopoSummary, TrainConfig, TrainReport};

#[cfg(test)]
mod tests;
