//! Memory-augmented neural networks built on a small dense autodiff tape:
//! the Neural Turing Machine and the Differentiable Neural Computer with
//! feedforward, Elman, and LSTM controllers, including partially
//! non-recurrent variants whose output path skips the recurrent state.

pub mod controllers;
pub mod dnc;
pub mod error;
pub mod graph;
pub mod harness;
pub mod memory;
pub mod model;
pub mod ntm;
pub mod tasks;

pub use error::{Error, Result};
