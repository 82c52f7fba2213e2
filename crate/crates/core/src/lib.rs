//! Recurrent language models (RNN, LSTM, GRU) trained from scratch, with
//! pruning, 8-bit quantization, low-rank and tensor-train compression,
//! parameter and size accounting, perplexity evaluation and an inference
//! benchmark harness.

pub mod bench;
pub mod cells;
pub mod error;
pub mod gradcheck;
pub mod langmodel;
pub mod lowrank;
pub mod numkit;
pub mod pipeline;
pub mod sparse;
pub mod tensortrain;

pub use error::{Error, Result};
