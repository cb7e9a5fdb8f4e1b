//! Learning binary hash codes from imbalanced pairwise similarity.
//!
//! An encoder network maps features to `tanh(beta z)` codes, trained with a
//! class-balanced pairwise cross-entropy loss over a sequence of growing
//! `beta` so the codes become exactly binary. Retrieval ranks bit-packed sign
//! codes by Hamming distance.

pub mod checkpoint;
pub mod codes;
pub mod config;
pub mod continuation;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod loss;
pub mod pairdata;
pub mod retrieval;

pub use codes::{BinaryCode, ContinuousCode};
pub use continuation::{train, train_ablation, TrainConfig, TrainLog, Variant};
pub use error::{Error, Result};
