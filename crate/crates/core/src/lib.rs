//! Frequency-decoupled cross-modal feature distillation.
//!
//! Feature vectors produced by two modality encoders are split into a low and a
//! high frequency band with a real-input DFT and binary spectral masks. The low
//! band is distilled with a plain MSE, the high band with a log-compressed MSE,
//! both optionally after per-vector standardization, and a pair of classifiers
//! shared across modalities pulls both feature spaces into one decision space.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: seeded RNG streams, the real DFT, cosine similarity.
//! - [`frequency`]: band splitting, DC filtering and standardization.
//! - [`losses`]: every training objective together with its gradient.
//! - [`models`]: MLP encoders, linear heads, SGD with poly decay, checkpoints.
//! - [`data`]: the synthetic paired-modality benchmark and feature CSV files.
//! - [`train`]: unimodal teacher training and distillation.
//! - [`analysis`]: cross-modal similarity, mean profiles and ablation grids.

pub mod analysis;
pub mod data;
pub mod error;
pub mod frequency;
pub mod kv;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod train;
pub mod util;

pub use error::{Error, Result};
