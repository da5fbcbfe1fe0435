//! Manifest handling, the natural/synthetic mixing sampler, and batch
//! assembly for training.
//!
//! Manifest files are UTF-8, one record per line, tab-separated:
//! `audio_path \t transcript \t origin \t duration_s`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::audio::{read_wav, AudioError, FeatureExtractor, FeatureMatrix};
use crate::augment::{augment_waveform, AugmentConfig};
use crate::ctc::{Charset, CharsetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Natural,
    Synthetic,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Natural => write!(f, "natural"),
            Origin::Synthetic => write!(f, "synthetic"),
        }
    }
}

impl FromStr for Origin {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "natural" => Ok(Origin::Natural),
            "synthetic" => Ok(Origin::Synthetic),
            other => Err(format!("unknown origin {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub audio_path: PathBuf,
    pub transcript: String,
    pub origin: Origin,
    pub duration_s: f64,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Charset(#[from] CharsetError),
    #[error("manifest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate audio path in manifest: {0}")]
    DuplicatePath(String),
    #[error("both sampling pools are empty")]
    BothPoolsEmpty,
    #[error("p_natural = {p} but the {pool} pool is empty")]
    EmptyPool { pool: &'static str, p: f64 },
    #[error("mix ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error("cannot build a batch from an empty utterance list")]
    EmptyBatch,
}

/// Ordered list of utterances with distinct audio paths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<Utterance>,
}

impl Manifest {
    pub fn new(entries: Vec<Utterance>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for u in &entries {
            if !seen.insert(u.audio_path.clone()) {
                return Err(DatasetError::DuplicatePath(
                    u.audio_path.display().to_string(),
                ));
            }
        }
        Ok(Manifest { entries })
    }

    pub fn entries(&self) -> &[Utterance] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse a manifest file, validating origin values, charset membership
    /// and path uniqueness. Line numbers in errors are 1-based.
    pub fn load(path: impl AsRef<Path>, charset: &Charset) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 4 {
                return Err(DatasetError::Parse {
                    line,
                    msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let origin = fields[2]
                .parse::<Origin>()
                .map_err(|msg| DatasetError::Parse { line, msg })?;
            let duration_s = fields[3].parse::<f64>().map_err(|e| DatasetError::Parse {
                line,
                msg: format!("bad duration {:?}: {e}", fields[3]),
            })?;
            if !(duration_s > 0.0) {
                return Err(DatasetError::Parse {
                    line,
                    msg: format!("duration must be > 0, got {duration_s}"),
                });
            }
            let transcript = fields[1].to_string();
            if transcript.is_empty() {
                return Err(DatasetError::Parse {
                    line,
                    msg: "empty transcript".into(),
                });
            }
            charset.validate(&transcript).map_err(|e| DatasetError::Parse {
                line,
                msg: e.to_string(),
            })?;
            entries.push(Utterance {
                audio_path: PathBuf::from(fields[0]),
                transcript,
                origin,
                duration_s,
            });
        }
        Manifest::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut out = String::new();
        for u in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                u.audio_path.display(),
                u.transcript,
                u.origin,
                u.duration_s
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Probability of drawing from the natural pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixRatio {
    pub p_natural: f64,
}

impl MixRatio {
    pub fn new(p_natural: f64) -> Result<Self, DatasetError> {
        if !(0.0..=1.0).contains(&p_natural) {
            return Err(DatasetError::InvalidRatio(p_natural));
        }
        Ok(MixRatio { p_natural })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Natural,
    Synthetic,
}

/// Draw the next (pool, index) pair: a Bernoulli coin picks the pool, then
/// an index is drawn uniformly with replacement.
pub fn next_index<R: Rng>(
    natural_len: usize,
    synthetic_len: usize,
    ratio: MixRatio,
    rng: &mut R,
) -> Result<(Pool, usize), DatasetError> {
    if natural_len == 0 && synthetic_len == 0 {
        return Err(DatasetError::BothPoolsEmpty);
    }
    if ratio.p_natural > 0.0 && natural_len == 0 {
        return Err(DatasetError::EmptyPool {
            pool: "natural",
            p: ratio.p_natural,
        });
    }
    if ratio.p_natural < 1.0 && synthetic_len == 0 {
        return Err(DatasetError::EmptyPool {
            pool: "synthetic",
            p: ratio.p_natural,
        });
    }
    let coin: f64 = rng.gen();
    if coin < ratio.p_natural {
        Ok((Pool::Natural, rng.gen_range(0..natural_len)))
    } else {
        Ok((Pool::Synthetic, rng.gen_range(0..synthetic_len)))
    }
}

pub fn next_sample<'a, R: Rng>(
    natural: &'a Manifest,
    synthetic: &'a Manifest,
    ratio: MixRatio,
    rng: &mut R,
) -> Result<&'a Utterance, DatasetError> {
    let (pool, idx) = next_index(natural.len(), synthetic.len(), ratio, rng)?;
    Ok(match pool {
        Pool::Natural => &natural.entries[idx],
        Pool::Synthetic => &synthetic.entries[idx],
    })
}

/// A padded feature batch with exact per-item lengths: `B x T_max x M`
/// features (item-major, row-major frames) and encoded label sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<f32>,
    pub batch: usize,
    pub t_max: usize,
    pub mel_bins: usize,
    pub lengths: Vec<usize>,
    pub labels: Vec<Vec<u32>>,
}

impl Batch {
    pub fn item(&self, b: usize) -> &[f32] {
        let stride = self.t_max * self.mel_bins;
        &self.features[b * stride..(b + 1) * stride]
    }
}

/// Pad per-item features to the longest frame count at `pad_value` and
/// collect label sequences. Lengths record the unpadded frame counts.
pub fn assemble_batch(
    items: Vec<(FeatureMatrix, Vec<u32>)>,
    pad_value: f32,
) -> Result<Batch, DatasetError> {
    if items.is_empty() {
        return Err(DatasetError::EmptyBatch);
    }
    let mel_bins = items[0].0.mel_bins();
    let t_max = items.iter().map(|(f, _)| f.frames()).max().unwrap();
    let batch = items.len();
    let mut features = vec![pad_value; batch * t_max * mel_bins];
    let mut lengths = Vec::with_capacity(batch);
    let mut labels = Vec::with_capacity(batch);
    for (b, (f, ids)) in items.into_iter().enumerate() {
        assert_eq!(f.mel_bins(), mel_bins, "mixed mel dimensions in batch");
        let base = b * t_max * mel_bins;
        features[base..base + f.frames() * mel_bins].copy_from_slice(f.data());
        lengths.push(f.frames());
        labels.push(ids);
    }
    Ok(Batch {
        features,
        batch,
        t_max,
        mel_bins,
        lengths,
        labels,
    })
}

/// Load, optionally augment, featurize, normalize and pad a batch.
pub fn make_batch<R: Rng>(
    utts: &[Utterance],
    extractor: &FeatureExtractor,
    augment: Option<(&AugmentConfig, &mut R)>,
    charset: &Charset,
) -> Result<Batch, DatasetError> {
    if utts.is_empty() {
        return Err(DatasetError::EmptyBatch);
    }
    let mut aug = augment;
    let mut items = Vec::with_capacity(utts.len());
    for u in utts {
        let mut wave = read_wav(&u.audio_path)?;
        if let Some((cfg, rng)) = aug.as_mut() {
            wave = augment_waveform(&wave, cfg, *rng);
        }
        let feats = crate::audio::normalize_features(&extractor.compute(&wave)?);
        let ids = charset.encode(&u.transcript)?;
        items.push((feats, ids));
    }
    let pad = (extractor.config().log_floor.ln()) as f32;
    assemble_batch(items, pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn utt(path: &str, text: &str, origin: Origin) -> Utterance {
        Utterance {
            audio_path: PathBuf::from(path),
            transcript: text.to_string(),
            origin,
            duration_s: 1.0,
        }
    }

    fn manifest_of(n: usize, origin: Origin) -> Manifest {
        let entries = (0..n)
            .map(|i| utt(&format!("{origin}_{i}.wav"), "a b", origin))
            .collect();
        Manifest::new(entries).unwrap()
    }

    #[test]
    fn empty_file_is_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.tsv");
        fs::write(&p, "").unwrap();
        let m = Manifest::load(&p, &Charset::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn load_save_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let m = Manifest::new(vec![
            utt("a.wav", "hello world", Origin::Natural),
            utt("b.wav", "it's here", Origin::Synthetic),
        ])
        .unwrap();
        m.save(&p).unwrap();
        let r = Manifest::load(&p, &Charset::default()).unwrap();
        assert_eq!(r.entries()[0].transcript, "hello world");
        assert_eq!(r.entries()[1].origin, Origin::Synthetic);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tsv");
        fs::write(&p, "a.wav\thello\tnatural\t1.0\nb.wav\thi\tbogus\t1.0\n").unwrap();
        match Manifest::load(&p, &Charset::default()) {
            Err(DatasetError::Parse { line: 2, msg }) => assert!(msg.contains("bogus")),
            other => panic!("expected parse error on line 2, got {other:?}"),
        }
    }

    #[test]
    fn out_of_charset_transcript_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tsv");
        fs::write(&p, "a.wav\thello!\tnatural\t1.0\n").unwrap();
        match Manifest::load(&p, &Charset::default()) {
            Err(DatasetError::Parse { line: 1, msg }) => assert!(msg.contains('!')),
            other => panic!("expected charset error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_path_names_the_path() {
        let err = Manifest::new(vec![
            utt("same.wav", "a", Origin::Natural),
            utt("same.wav", "b", Origin::Natural),
        ])
        .unwrap_err();
        match err {
            DatasetError::DuplicatePath(p) => assert_eq!(p, "same.wav"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pure_pools_sample_only_their_origin() {
        let nat = manifest_of(5, Origin::Natural);
        let syn = manifest_of(7, Origin::Synthetic);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let u = next_sample(&nat, &syn, MixRatio::new(1.0).unwrap(), &mut rng).unwrap();
            assert_eq!(u.origin, Origin::Natural);
        }
        for _ in 0..200 {
            let u = next_sample(&nat, &syn, MixRatio::new(0.0).unwrap(), &mut rng).unwrap();
            assert_eq!(u.origin, Origin::Synthetic);
        }
    }

    #[test]
    fn one_third_ratio_lands_in_band() {
        let nat = manifest_of(3, Origin::Natural);
        let syn = manifest_of(3, Origin::Synthetic);
        let ratio = MixRatio::new(1.0 / 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut naturals = 0usize;
        for _ in 0..n {
            if next_sample(&nat, &syn, ratio, &mut rng).unwrap().origin == Origin::Natural {
                naturals += 1;
            }
        }
        let frac = naturals as f64 / n as f64;
        assert!((0.323..=0.343).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn sampler_is_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let ratio = MixRatio::new(0.5).unwrap();
        for _ in 0..100 {
            let x = next_index(10, 20, ratio, &mut a).unwrap();
            let y = next_index(10, 20, ratio, &mut b).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn empty_pool_errors() {
        let empty = Manifest::default();
        let syn = manifest_of(3, Origin::Synthetic);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            next_sample(&empty, &empty, MixRatio::new(0.5).unwrap(), &mut rng),
            Err(DatasetError::BothPoolsEmpty)
        ));
        assert!(matches!(
            next_sample(&empty, &syn, MixRatio::new(0.5).unwrap(), &mut rng),
            Err(DatasetError::EmptyPool { pool: "natural", .. })
        ));
        // p = 0 with empty natural pool is fine
        assert!(next_sample(&empty, &syn, MixRatio::new(0.0).unwrap(), &mut rng).is_ok());
    }

    #[test]
    fn assemble_pads_at_floor_value() {
        let pad = (1e-20f64).ln() as f32;
        let a = FeatureMatrix::new(vec![1.0; 10 * 4], 10, 4);
        let b = FeatureMatrix::new(vec![2.0; 7 * 4], 7, 4);
        let batch = assemble_batch(vec![(a, vec![0]), (b, vec![1, 2])], pad).unwrap();
        assert_eq!(batch.t_max, 10);
        assert_eq!(batch.lengths, vec![10, 7]);
        let second = batch.item(1);
        assert!(second[..7 * 4].iter().all(|&v| v == 2.0));
        assert!(second[7 * 4..].iter().all(|&v| v == pad));
    }

    #[test]
    fn single_item_has_no_padding() {
        let a = FeatureMatrix::new(vec![1.5; 6 * 2], 6, 2);
        let batch = assemble_batch(vec![(a, vec![3])], -99.0).unwrap();
        assert_eq!(batch.t_max, 6);
        assert!(batch.features.iter().all(|&v| v == 1.5));
    }

    #[test]
    fn labels_encode_with_space() {
        let cs = Charset::default();
        assert_eq!(cs.encode("ab c").unwrap(), vec![0, 1, 26, 2]);
    }
}
