//! Log-mel spectrogram extraction: Hann window, magnitude spectrum,
//! triangular mel filterbank, natural-log compression.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use super::{AudioError, Waveform};

/// Front-end parameters. Defaults are a 16 kHz / 20 ms / 10 ms / 64-bin
/// configuration with full-band mel coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate_hz: u32,
    pub window_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate_hz: 16000,
            window_samples: 320,
            hop_samples: 160,
            fft_size: 512,
            mel_bins: 64,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-20,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(0.0 <= self.fmin_hz && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(AudioError::InvalidFeatureConfig(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= nyquist ({})",
                self.fmin_hz, self.fmax_hz, nyquist
            )));
        }
        if !(self.hop_samples <= self.window_samples && self.window_samples <= self.fft_size) {
            return Err(AudioError::InvalidFeatureConfig(format!(
                "need hop ({}) <= window ({}) <= fft ({})",
                self.hop_samples, self.window_samples, self.fft_size
            )));
        }
        if self.hop_samples == 0 {
            return Err(AudioError::InvalidFeatureConfig("hop must be > 0".into()));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(AudioError::InvalidFeatureConfig(format!(
                "fft size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.mel_bins == 0 {
            return Err(AudioError::InvalidFeatureConfig("mel_bins must be > 0".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(AudioError::InvalidFeatureConfig(
                "log_floor must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Number of frames produced for a waveform of `len` samples, without
    /// edge padding: `1 + floor((len - window) / hop)`.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if len < self.window_samples {
            return None;
        }
        Some(1 + (len - self.window_samples) / self.hop_samples)
    }
}

/// Time-major `T x M` matrix of natural-log mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    frames: usize,
    mel_bins: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f32>, frames: usize, mel_bins: usize) -> Self {
        assert_eq!(data.len(), frames * mel_bins);
        FeatureMatrix {
            data,
            frames,
            mel_bins,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.mel_bins..(t + 1) * self.mel_bins]
    }

    pub fn at(&self, t: usize, m: usize) -> f32 {
        self.data[t * self.mel_bins + m]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// HTK mel scale: `2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Reusable extractor: owns the FFT plan, Hann window and sparse filterbank.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    // per mel bin: (first fft bin, triangle weights)
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self, AudioError> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let n = cfg.window_samples;
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let (filters, centers_hz) = build_filterbank(&cfg);
        Ok(FeatureExtractor {
            cfg,
            fft,
            window,
            filters,
            centers_hz,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Center frequency of each mel filter, in Hz.
    pub fn filter_centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn compute(&self, w: &Waveform) -> Result<FeatureMatrix, AudioError> {
        let cfg = &self.cfg;
        let frames = cfg
            .frame_count(w.samples.len())
            .ok_or(AudioError::WaveformTooShort {
                len: w.samples.len(),
                window: cfg.window_samples,
            })?;
        let half = cfg.fft_size / 2 + 1;
        let mut out = vec![0f32; frames * cfg.mel_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut mags = vec![0f64; half];

        for t in 0..frames {
            let start = t * cfg.hop_samples;
            for i in 0..cfg.fft_size {
                let sample = if i < cfg.window_samples {
                    w.samples[start + i] as f64 * self.window[i]
                } else {
                    0.0
                };
                buf[i] = Complex::new(sample, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, m) in mags.iter_mut().enumerate() {
                *m = buf[k].norm();
            }
            let row = &mut out[t * cfg.mel_bins..(t + 1) * cfg.mel_bins];
            for (m, (first, weights)) in self.filters.iter().enumerate() {
                let mut energy = 0.0;
                for (j, &wgt) in weights.iter().enumerate() {
                    energy += wgt * mags[first + j];
                }
                row[m] = energy.max(cfg.log_floor).ln() as f32;
            }
        }
        Ok(FeatureMatrix::new(out, frames, cfg.mel_bins))
    }
}

fn build_filterbank(cfg: &FeatureConfig) -> (Vec<(usize, Vec<f64>)>, Vec<f64>) {
    let m = cfg.mel_bins;
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(cfg.fmax_hz);
    // m + 2 edges, equally spaced in mel
    let edges_hz: Vec<f64> = (0..m + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (m + 1) as f64))
        .collect();
    let centers = edges_hz[1..=m].to_vec();
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
    let half = cfg.fft_size / 2 + 1;

    let mut filters = Vec::with_capacity(m);
    for i in 0..m {
        let (left, center, right) = (edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]);
        let mut first = None;
        let mut weights = Vec::new();
        for k in 0..half {
            let f = k as f64 * bin_hz;
            let wgt = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if wgt > 0.0 {
                if first.is_none() {
                    first = Some(k);
                }
                weights.push(wgt);
            } else if first.is_some() {
                break;
            }
        }
        // Narrow filters can miss every FFT bin; keep the nearest bin so the
        // row still sums to a positive value.
        if weights.is_empty() {
            let k = ((center / bin_hz).round() as usize).min(half - 1);
            first = Some(k);
            weights.push(1.0);
        }
        filters.push((first.unwrap(), weights));
    }
    (filters, centers)
}

/// One-shot convenience for [`FeatureExtractor`].
pub fn compute_logmel(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix, AudioError> {
    FeatureExtractor::new(cfg.clone())?.compute(w)
}

/// Per-bin normalization over time: subtract the mean, divide by
/// (population stddev + 1e-5).
pub fn normalize_features(f: &FeatureMatrix) -> FeatureMatrix {
    let (t_len, m_len) = (f.frames(), f.mel_bins());
    assert!(t_len >= 1);
    let mut out = vec![0f32; t_len * m_len];
    for m in 0..m_len {
        let mut mean = 0f64;
        for t in 0..t_len {
            mean += f.at(t, m) as f64;
        }
        mean /= t_len as f64;
        let mut var = 0f64;
        for t in 0..t_len {
            let d = f.at(t, m) as f64 - mean;
            var += d * d;
        }
        var /= t_len as f64;
        let denom = var.sqrt() + 1e-5;
        for t in 0..t_len {
            out[t * m_len + m] = ((f.at(t, m) as f64 - mean) / denom) as f32;
        }
    }
    FeatureMatrix::new(out, t_len, m_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, len: usize, sr: u32) -> Waveform {
        let samples = (0..len)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32 * 0.5)
            .collect();
        Waveform::new(samples, sr)
    }

    /// Reference O(n^2) DFT magnitude, independent of the fft crate path.
    fn naive_dft_mag(x: &[f64], fft_size: usize) -> Vec<f64> {
        let half = fft_size / 2 + 1;
        let mut out = vec![0.0; half];
        for (k, o) in out.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * k as f64 * n as f64 / fft_size as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            *o = (re * re + im * im).sqrt();
        }
        out
    }

    #[test]
    fn mel_scale_anchor_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        // 2595 * log10(2), evaluated in f64
        let expected = 2595.0 * std::f64::consts::LOG10_2;
        assert!((hz_to_mel(700.0) - expected).abs() < 1e-9);
        assert!((hz_to_mel(700.0) - 781.17284).abs() < 1e-4);
        // inverse
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn zero_waveform_is_all_floor() {
        let cfg = FeatureConfig::default();
        let w = Waveform::new(vec![0.0; 3200], 16000);
        let f = compute_logmel(&w, &cfg).unwrap();
        let floor = (cfg.log_floor as f64).ln() as f32;
        assert!(f.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn frame_count_example() {
        let cfg = FeatureConfig {
            window_samples: 320,
            hop_samples: 160,
            ..FeatureConfig::default()
        };
        assert_eq!(cfg.frame_count(3200), Some(19));
        let w = Waveform::new(vec![0.1; 3200], 16000);
        assert_eq!(compute_logmel(&w, &cfg).unwrap().frames(), 19);
    }

    #[test]
    fn too_short_waveform_errors() {
        let cfg = FeatureConfig::default();
        let w = Waveform::new(vec![0.0; 100], 16000);
        assert!(matches!(
            compute_logmel(&w, &cfg),
            Err(AudioError::WaveformTooShort { len: 100, .. })
        ));
    }

    #[test]
    fn sine_at_filter_center_peaks_in_that_filter() {
        let cfg = FeatureConfig::default();
        let ex = FeatureExtractor::new(cfg.clone()).unwrap();
        // pick a mid filter; very low filters are narrower than a DFT bin
        let m = 20;
        let freq = ex.filter_centers_hz()[m];
        let w = sine(freq, 3200, 16000);
        let f = ex.compute(&w).unwrap();
        for t in 1..f.frames() - 1 {
            let row = f.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(
                (argmax as i64 - m as i64).abs() <= 1,
                "frame {t}: peak at {argmax}, expected near {m}"
            );
        }
        // and the center frame peaks exactly at m
        let mid = f.row(f.frames() / 2);
        let argmax = mid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, m);
    }

    #[test]
    fn fft_matches_naive_dft_on_windowed_sine() {
        let cfg = FeatureConfig::default();
        let ex = FeatureExtractor::new(cfg.clone()).unwrap();
        let w = sine(440.0, 320, 16000);
        let windowed: Vec<f64> = (0..320)
            .map(|i| w.samples[i] as f64 * ex.window[i])
            .collect();
        let reference = naive_dft_mag(&windowed, cfg.fft_size);

        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        for (i, &v) in windowed.iter().enumerate() {
            buf[i] = Complex::new(v, 0.0);
        }
        ex.fft.process(&mut buf);
        for k in 0..cfg.fft_size / 2 + 1 {
            assert!(
                (buf[k].norm() - reference[k]).abs() < 1e-8,
                "bin {k}: fft {} vs naive {}",
                buf[k].norm(),
                reference[k]
            );
        }
    }

    #[test]
    fn logmel_is_deterministic() {
        let cfg = FeatureConfig::default();
        let w = sine(523.0, 4000, 16000);
        let a = compute_logmel(&w, &cfg).unwrap();
        let b = compute_logmel(&w, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn filterbank_rows_positive_and_overlapping() {
        let cfg = FeatureConfig::default();
        let (filters, _) = build_filterbank(&cfg);
        assert_eq!(filters.len(), cfg.mel_bins);
        for (first, weights) in &filters {
            assert!(weights.iter().sum::<f64>() > 0.0);
            assert!(first + weights.len() <= cfg.fft_size / 2 + 1);
        }
        // every fft bin between the first and last filter peak is covered
        let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
        let (filters, centers) = build_filterbank(&cfg);
        let lo_bin = (centers[0] / bin_hz).ceil() as usize;
        let hi_bin = (centers[cfg.mel_bins - 1] / bin_hz).floor() as usize;
        let mut covered = vec![false; cfg.fft_size / 2 + 1];
        for (first, weights) in &filters {
            for (j, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    covered[first + j] = true;
                }
            }
        }
        for k in lo_bin..=hi_bin {
            assert!(covered[k], "fft bin {k} not covered by any filter");
        }
    }

    #[test]
    fn normalize_constant_matrix_is_zero() {
        let f = FeatureMatrix::new(vec![3.5; 40], 10, 4);
        let n = normalize_features(&f);
        assert!(n.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_two_values() {
        let f = FeatureMatrix::new(vec![1.0, 3.0], 2, 1);
        let n = normalize_features(&f);
        let s = 1.0 / (1.0 + 1e-5);
        assert!((n.at(0, 0) as f64 + s).abs() < 1e-7);
        assert!((n.at(1, 0) as f64 - s).abs() < 1e-7);
    }

    #[test]
    fn normalize_zero_means() {
        let cfg = FeatureConfig::default();
        let w = sine(333.0, 3200, 16000);
        let f = compute_logmel(&w, &cfg).unwrap();
        let n = normalize_features(&f);
        for m in 0..n.mel_bins() {
            let mean: f64 =
                (0..n.frames()).map(|t| n.at(t, m) as f64).sum::<f64>() / n.frames() as f64;
            assert!(mean.abs() < 1e-6, "bin {m} mean {mean}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mel_is_monotone(f1 in 0.0f64..7999.0, delta in 0.001f64..1000.0) {
            prop_assert!(hz_to_mel(f1) < hz_to_mel(f1 + delta));
        }

        #[test]
        fn frame_count_formula(
            window in 2usize..512,
            hop_div in 1usize..4,
            extra in 0usize..2000,
        ) {
            let hop = (window / hop_div).max(1);
            let len = window + extra;
            let cfg = FeatureConfig {
                window_samples: window,
                hop_samples: hop,
                fft_size: 512,
                ..FeatureConfig::default()
            };
            prop_assert_eq!(cfg.frame_count(len), Some(1 + (len - window) / hop));
        }
    }
}
