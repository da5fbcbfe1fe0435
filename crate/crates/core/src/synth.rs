//! Deterministic toy text-to-speech: each character becomes a fixed-length
//! sine segment at a voice-specific frequency, spaces become silence, and a
//! tempo factor rescales segment durations. Three voices and three tempo
//! variants give a synthetic pool three times the transcript count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{write_wav, AudioError, Waveform};
use crate::ctc::{Charset, CharsetError};
use crate::dataset::{DatasetError, Manifest, Origin, Utterance};

/// One speaking style: character `k` is rendered at
/// `base_freq_hz + k * freq_step_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVoice {
    pub voice_id: u32,
    pub base_freq_hz: f64,
    pub freq_step_hz: f64,
}

/// Playback-speed variant; segment duration scales by `1 / tempo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoVariant {
    pub tempo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    /// Per-character segment length at tempo 1.0.
    pub base_dur_samples: usize,
    /// Length of the linear crossfade between adjacent segments.
    pub crossfade_samples: usize,
    pub amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate_hz: 16000,
            base_dur_samples: 1280, // 80 ms per character
            crossfade_samples: 80,  // 5 ms
            amplitude: 0.3,
        }
    }
}

/// The three default voices, one per speaking style. Base frequencies are
/// offset by 100 Hz with a 12 Hz character step, so no two (voice, char)
/// pairs share a frequency.
pub fn default_voices() -> Vec<SynthVoice> {
    vec![
        SynthVoice { voice_id: 0, base_freq_hz: 200.0, freq_step_hz: 12.0 },
        SynthVoice { voice_id: 1, base_freq_hz: 300.0, freq_step_hz: 12.0 },
        SynthVoice { voice_id: 2, base_freq_hz: 400.0, freq_step_hz: 12.0 },
    ]
}

/// The three default tempo variants used to triple a transcript set.
pub fn default_tempos() -> Vec<TempoVariant> {
    vec![
        TempoVariant { tempo: 1.00 },
        TempoVariant { tempo: 1.05 },
        TempoVariant { tempo: 1.10 },
    ]
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Charset(#[from] CharsetError),
    #[error("empty transcript")]
    EmptyTranscript,
    #[error("empty input list: {0}")]
    EmptyInput(&'static str),
    #[error("tempo {0} outside [0.5, 2.0]")]
    InvalidTempo(f64),
    #[error("voice {voice_id}: top frequency {top_hz} Hz reaches the Nyquist limit {nyquist} Hz")]
    VoiceAliases { voice_id: u32, top_hz: f64, nyquist: f64 },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn validate_voice(v: &SynthVoice, cfg: &SynthConfig, charset: &Charset) -> Result<(), SynthError> {
    let nyquist = cfg.sample_rate_hz as f64 / 2.0;
    let top = v.base_freq_hz + charset.symbol_count() as f64 * v.freq_step_hz;
    if v.base_freq_hz <= 0.0 || top >= nyquist {
        return Err(SynthError::VoiceAliases {
            voice_id: v.voice_id,
            top_hz: top,
            nyquist,
        });
    }
    Ok(())
}

fn validate_tempo(t: &TempoVariant) -> Result<(), SynthError> {
    if !(0.5..=2.0).contains(&t.tempo) {
        return Err(SynthError::InvalidTempo(t.tempo));
    }
    Ok(())
}

// A segment is a pure tone or silence; sampled from its local time origin.
#[derive(Clone, Copy)]
struct Segment {
    freq_hz: f64, // 0 means silence
    len: usize,
}

fn segment_sample(seg: &Segment, i: usize, cfg: &SynthConfig) -> f64 {
    if seg.freq_hz == 0.0 {
        return 0.0;
    }
    let t = i as f64 / cfg.sample_rate_hz as f64;
    cfg.amplitude * (2.0 * std::f64::consts::PI * seg.freq_hz * t).sin()
}

/// Render a transcript as a waveform. The output length is exactly the sum
/// of per-segment lengths `round(base_dur / tempo)`; crossfades overlap the
/// boundary by extending the earlier segment, so they never change length.
pub fn synthesize(
    text: &str,
    voice: &SynthVoice,
    variant: &TempoVariant,
    cfg: &SynthConfig,
    charset: &Charset,
) -> Result<Waveform, SynthError> {
    if text.is_empty() {
        return Err(SynthError::EmptyTranscript);
    }
    validate_voice(voice, cfg, charset)?;
    validate_tempo(variant)?;

    let seg_len = (cfg.base_dur_samples as f64 / variant.tempo).round() as usize;
    let space = charset.space_id();
    let mut segments = Vec::new();
    for c in text.chars() {
        let id = charset.id_of(c).ok_or(CharsetError::UnknownChar(c))?;
        let freq_hz = if id == space {
            0.0
        } else {
            voice.base_freq_hz + id as f64 * voice.freq_step_hz
        };
        segments.push(Segment {
            freq_hz,
            len: seg_len,
        });
    }

    let total: usize = segments.iter().map(|s| s.len).sum();
    let mut samples = vec![0f32; total];
    let mut start = 0usize;
    for seg in &segments {
        for i in 0..seg.len {
            samples[start + i] = segment_sample(seg, i, cfg) as f32;
        }
        start += seg.len;
    }

    // linear crossfade at each boundary: previous segment continues past its
    // end while the next one fades in
    let mut boundary = 0usize;
    for w in segments.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        boundary += prev.len;
        let fade = cfg.crossfade_samples.min(prev.len).min(next.len);
        for j in 0..fade {
            let weight = (j + 1) as f64 / (fade + 1) as f64;
            let tail = segment_sample(prev, prev.len + j, cfg);
            let head = segment_sample(next, j, cfg);
            samples[boundary + j] = ((1.0 - weight) * tail + weight * head) as f32;
        }
    }

    Ok(Waveform::new(samples, cfg.sample_rate_hz))
}

/// Synthesize every transcript at every tempo (transcript-major order),
/// assigning a uniformly random voice per entry under `seed`, and write one
/// WAV per entry into `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn build_synthetic_manifest(
    transcripts: &[String],
    voices: &[SynthVoice],
    tempos: &[TempoVariant],
    out_dir: impl AsRef<Path>,
    seed: u64,
    origin: Origin,
    cfg: &SynthConfig,
    charset: &Charset,
) -> Result<Manifest, SynthError> {
    if transcripts.is_empty() {
        return Err(SynthError::EmptyInput("transcripts"));
    }
    if voices.is_empty() {
        return Err(SynthError::EmptyInput("voices"));
    }
    if tempos.is_empty() {
        return Err(SynthError::EmptyInput("tempos"));
    }
    for v in voices {
        validate_voice(v, cfg, charset)?;
    }
    for t in tempos {
        validate_tempo(t)?;
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(AudioError::Io)?;

    // voice assignments are drawn up front so parallel synthesis cannot
    // perturb them
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::with_capacity(transcripts.len() * tempos.len());
    for (ti, text) in transcripts.iter().enumerate() {
        if text.is_empty() {
            return Err(SynthError::EmptyTranscript);
        }
        for (pi, tempo) in tempos.iter().enumerate() {
            let voice = &voices[rng.gen_range(0..voices.len())];
            plan.push((ti, pi, text.as_str(), voice, *tempo));
        }
    }

    let entries: Result<Vec<Utterance>, SynthError> = plan
        .par_iter()
        .map(|&(ti, pi, text, voice, tempo)| {
            let wave = synthesize(text, voice, &tempo, cfg, charset)?;
            let path = out_dir.join(format!("utt{ti:05}_t{pi}_v{}.wav", voice.voice_id));
            write_wav(&wave, &path)?;
            Ok(Utterance {
                audio_path: path,
                transcript: text.to_string(),
                origin,
                duration_s: wave.duration_s(),
            })
        })
        .collect();

    Ok(Manifest::new(entries?)?)
}
