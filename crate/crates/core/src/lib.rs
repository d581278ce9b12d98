//! Bioacoustic call-sequence classification.
//!
//! End-to-end pipeline: WAV ingestion and DSP preprocessing, synthetic
//! multi-species mixing, a small ConvNet-Transformer hybrid for multi-label
//! species classification, asymmetric-loss / sharpness-aware training,
//! evaluation metrics and gradient-based activation maps.

pub mod dsp;
pub mod error;

pub use error::{Error, Result};
