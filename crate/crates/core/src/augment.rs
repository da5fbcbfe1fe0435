//! Traditional augmentation baselines: additive uniform noise at a random
//! dB level and time stretch by linear-interpolation resampling.

use rand::Rng;

use crate::audio::Waveform;

/// Augmentation switches and ranges. dB levels are relative to digital
/// full scale (1.0).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub noise_enabled: bool,
    pub noise_db_range: (f64, f64),
    pub stretch_enabled: bool,
    pub stretch_factor: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_enabled: false,
            noise_db_range: (-90.0, -60.0),
            stretch_enabled: false,
            stretch_factor: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig::default()
    }

    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.noise_db_range;
        if lo > hi {
            return Err(format!("noise range lo ({lo}) > hi ({hi})"));
        }
        if !(0.0..1.0).contains(&self.stretch_factor) {
            return Err(format!(
                "stretch factor {} outside [0, 1)",
                self.stretch_factor
            ));
        }
        Ok(())
    }

    pub fn any_enabled(&self) -> bool {
        self.noise_enabled || self.stretch_enabled
    }
}

/// Add i.i.d. uniform noise in `[-a, a]` where `a = 10^(L/20)` and `L` is
/// drawn uniformly from `[lo_db, hi_db]`. Output is clamped to `[-1, 1]`.
pub fn add_noise<R: Rng>(w: &Waveform, range: (f64, f64), rng: &mut R) -> Waveform {
    let (lo, hi) = range;
    debug_assert!(lo <= hi);
    let level_db = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let amp = 10f64.powf(level_db / 20.0);
    let samples = w
        .samples
        .iter()
        .map(|&s| {
            let n = rng.gen_range(-1.0f64..1.0) * amp;
            ((s as f64 + n).clamp(-1.0, 1.0)) as f32
        })
        .collect();
    Waveform::new(samples, w.sample_rate_hz)
}

/// Resample by a rate drawn uniformly from `[1-s, 1+s]`. Output sample `i`
/// is the linear interpolation of the input at `i * (N-1) / (N'-1)`.
pub fn time_stretch<R: Rng>(w: &Waveform, s: f64, rng: &mut R) -> Waveform {
    debug_assert!((0.0..1.0).contains(&s));
    debug_assert!(w.len() >= 2);
    let rate = if s == 0.0 {
        1.0
    } else {
        rng.gen_range(1.0 - s..1.0 + s)
    };
    stretch_by_rate(w, rate)
}

fn stretch_by_rate(w: &Waveform, rate: f64) -> Waveform {
    let n = w.len();
    let out_len = ((n as f64) / rate).round().max(1.0) as usize;
    if out_len == 1 {
        return Waveform::new(vec![w.samples[0]], w.sample_rate_hz);
    }
    let scale = (n - 1) as f64 / (out_len - 1) as f64;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            (w.samples[lo] as f64 * (1.0 - frac) + w.samples[hi] as f64 * frac) as f32
        })
        .collect();
    Waveform::new(samples, w.sample_rate_hz)
}

/// Apply the enabled transforms to a waveform: stretch first, then noise,
/// so noise statistics do not depend on the drawn rate.
pub fn augment_waveform<R: Rng>(w: &Waveform, cfg: &AugmentConfig, rng: &mut R) -> Waveform {
    let mut out = if cfg.stretch_enabled && w.len() >= 2 {
        time_stretch(w, cfg.stretch_factor, rng)
    } else {
        w.clone()
    };
    if cfg.noise_enabled {
        out = add_noise(&out, cfg.noise_db_range, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| (i as f32 / n as f32) * 0.8 - 0.4).collect(), 16000)
    }

    #[test]
    fn noise_amplitude_at_fixed_level() {
        // level pinned by lo == hi
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Waveform::new(vec![0.0; 100_000], 16000);
        let out = add_noise(&w, (-90.0, -90.0), &mut rng);
        let a = 10f64.powf(-90.0 / 20.0);
        assert!((a - 3.1623e-5).abs() < 1e-9);
        let max = out.samples.iter().map(|s| s.abs()).fold(0f32, f32::max);
        assert!(max as f64 <= a);
        assert!(max as f64 > 0.5 * a, "uniform noise should come close to its bound");
    }

    #[test]
    fn vanishing_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Waveform::new(vec![0.0; 1000], 16000);
        let out = add_noise(&w, (-200.0, -200.0), &mut rng);
        for (a, b) in w.samples.iter().zip(&out.samples) {
            assert!((a - b).abs() <= 1e-10);
        }
        // on nonzero samples f32 quantization adds up to half an ulp
        let w = ramp(1000);
        let out = add_noise(&w, (-200.0, -200.0), &mut rng);
        for (a, b) in w.samples.iter().zip(&out.samples) {
            assert!((a - b).abs() <= 2.5e-10);
        }
    }

    #[test]
    fn noise_is_deterministic_under_seed() {
        let w = ramp(4096);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = add_noise(&w, (-90.0, -60.0), &mut r1);
        let b = add_noise(&w, (-90.0, -60.0), &mut r2);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn noise_mean_is_unbiased() {
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Waveform::new(vec![0.0; n], 16000);
        let out = add_noise(&w, (-20.0, -20.0), &mut rng);
        let amp = 10f64.powf(-20.0 / 20.0);
        let mean: f64 = out.samples.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
        // uniform on [-a, a]: sigma = a / sqrt(3)
        let sigma = amp / 3f64.sqrt();
        let bound = 3.0 * sigma / (n as f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} outside 3-sigma band {bound}");
    }

    #[test]
    fn stretch_zero_is_identity() {
        let w = ramp(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = time_stretch(&w, 0.0, &mut rng);
        assert_eq!(out.samples, w.samples);
    }

    #[test]
    fn stretch_rate_two_halves_length() {
        let w = ramp(1000);
        let out = stretch_by_rate(&w, 2.0);
        assert_eq!(out.len(), 500);
    }

    #[test]
    fn stretch_preserves_constant() {
        let w = Waveform::new(vec![0.25; 777], 16000);
        for rate in [0.9, 0.95, 1.0, 1.07, 1.1] {
            let out = stretch_by_rate(&w, rate);
            assert!(out.samples.iter().all(|&s| (s - 0.25).abs() < 1e-6));
        }
    }

    #[test]
    fn stretch_length_bound() {
        let w = ramp(12345);
        let s = 0.1;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = time_stretch(&w, s, &mut rng);
            let lo = ((12345f64) / (1.0 + s)).round() as usize;
            let hi = ((12345f64) / (1.0 - s)).round() as usize;
            assert!(out.len() >= lo && out.len() <= hi);
        }
    }

    #[test]
    fn table_row_config_changes_audio_within_bounds() {
        let cfg = AugmentConfig {
            noise_enabled: true,
            noise_db_range: (-90.0, -60.0),
            stretch_enabled: true,
            stretch_factor: 0.05,
        };
        cfg.validate().unwrap();
        let w = ramp(10000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment_waveform(&w, &cfg, &mut rng);
        assert_ne!(out.samples, w.samples);
        let lo = (10000f64 / 1.05).round() as usize;
        let hi = (10000f64 / 0.95).round() as usize;
        assert!(out.len() >= lo && out.len() <= hi);
    }

    #[test]
    fn disabled_config_is_identity() {
        let w = ramp(512);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = augment_waveform(&w, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(out.samples, w.samples);
    }
}
