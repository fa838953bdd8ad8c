//! Reverse-mode differentiation, optimization, and parameter persistence.

pub mod check;
pub mod checkpoint;
pub mod optim;
pub mod params;
pub mod tape;

pub use check::{finite_diff_check, FiniteDiffReport};
pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint, CHECKPOINT_FORMAT};
pub use optim::{AdamW, TrainConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, NodeId, Tape};
