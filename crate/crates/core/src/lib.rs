//! Desk-scale end-to-end speech recognition laboratory.
//!
//! A fully convolutional character-level CTC recognizer with a deterministic
//! toy synthesizer for generating training speech, natural/synthetic mixing,
//! traditional augmentation baselines, n-gram language model fusion for beam
//! search, and a reproducible training loop with layer-wise adaptive rate
//! clipping.

pub mod audio;
pub mod augment;
pub mod ctc;
pub mod dataset;
pub mod lm;
pub mod metrics;
pub mod net;
pub mod synth;
pub mod train;

pub use ctc::Charset;
