//! Distributed UWB radar activity recognition.
//!
//! Each radar node encodes its polar fast-time × slow-time window with a
//! shared lightweight CNN; a multi-head self-attention block fuses the node
//! features and exposes a node-to-node attention matrix whose column sums
//! rank node importance. Training combines cross-entropy with a supervised
//! contrastive term on the fused embedding.
//!
//! Modules:
//! - [`tensor`]: dense tensors with a reverse-mode computation record
//! - [`radar`]: synthetic signal generation, windowing, splits, recording files
//! - [`model`]: encoder / fusion / classifier and checkpoints
//! - [`learning`]: losses, Adam, the training loop and LOPO evaluation
//! - [`comms`]: feature compression vs downsampling over an AWGN channel
//! - [`interpret`]: attention-derived node importance and node ablation
//! - [`config`], [`cli`]: flat key-value run configuration and the command set

pub mod cli;
pub mod comms;
pub mod config;
pub mod error;
pub mod interpret;
pub mod learning;
pub mod model;
pub mod radar;
mod seed;
pub mod tensor;

pub use error::{Error, Result};
