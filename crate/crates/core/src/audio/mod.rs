//! Audio I/O and log-mel feature extraction.

mod features;
mod wav;

pub use features::{
    compute_logmel, hz_to_mel, mel_to_hz, normalize_features, FeatureConfig, FeatureExtractor,
    FeatureMatrix,
};
pub use wav::{read_wav, write_wav};

use thiserror::Error;

/// Mono audio samples with a sample rate. Amplitudes are nominally in
/// `[-1, 1]`; 16-bit PCM maps to `raw / 32768.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        Waveform {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed wav: {0}")]
    MalformedWav(String),
    #[error("unsupported wav encoding: format tag {0} (only PCM is supported)")]
    NotPcm(u16),
    #[error("unsupported wav layout: {0} channels (only mono is supported)")]
    NotMono(u16),
    #[error("unsupported wav sample width: {0} bits (only 16-bit is supported)")]
    Not16Bit(u16),
    #[error("invalid feature config: {0}")]
    InvalidFeatureConfig(String),
    #[error("waveform of {len} samples is shorter than one window ({window} samples)")]
    WaveformTooShort { len: usize, window: usize },
}
