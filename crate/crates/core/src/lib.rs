//! Hadamard updated transformation (HUT) adapters for dense layers.
//!
//! A HUT adapter rewrites a frozen weight `W0` as a rank-1 elementwise
//! modulation `(m_A m_B) ⊙ W0` followed by a per-column scale and shift.
//! The crate provides the adapter itself, a LoRA baseline behind the same
//! [`adapter::WeightAdapter`] contract, exact gradients, merge into a plain
//! dense layer, FLOP accounting, and a single-block toy transformer with
//! synthetic tasks for fine-tuning and ablation sweeps.

pub mod adapter;
pub mod block;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod hut;
pub mod lora;
pub mod optim;
pub mod sweep;
pub mod task;
pub mod tensor;
pub mod train;
pub mod validate;

pub use adapter::{Adapter, MergedLayer, Method, WeightAdapter};
pub use error::{HutError, Result};
pub use hut::{HutAdapterState, HutGradients};
pub use lora::{LoraAdapterState, LoraGradients};
pub use tensor::{DenseMatrix, FlopScope};
