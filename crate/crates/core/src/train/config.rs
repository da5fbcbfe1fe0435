//! Flat `key = value` run configuration: featurization, model topology and
//! training knobs. The same text format lives in config files and inside
//! checkpoints, so a checkpoint alone can rebuild its network and front
//! end. Unknown keys are rejected.

use std::collections::BTreeMap;

use crate::audio::FeatureConfig;
use crate::augment::AugmentConfig;
use crate::net::{ConvBlockSpec, LayerSpec, ModelConfig};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumericMode {
    /// Single precision, the training default.
    Fast,
    /// Double precision for gradient checks and reproducibility tests.
    Check,
}

impl NumericMode {
    fn as_str(&self) -> &'static str {
        match self {
            NumericMode::Fast => "fast",
            NumericMode::Check => "check",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub larc_eta: f64,
    pub dropout_keep_factor: f64,
    pub p_natural: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub eval_interval: u64,
    pub checkpoint_interval: u64,
    pub numeric_mode: NumericMode,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            larc_eta: 0.02,
            dropout_keep_factor: 1.0,
            p_natural: 0.5,
            batch_size: 8,
            steps: 1000,
            seed: 0,
            eval_interval: 100,
            checkpoint_interval: 500,
            numeric_mode: NumericMode::Fast,
            augment: AugmentConfig::disabled(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::BadConfig("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::BadConfig("momentum must be in [0, 1)".into()));
        }
        if self.larc_eta <= 0.0 {
            return Err(TrainError::BadConfig("larc eta must be > 0".into()));
        }
        if !(self.dropout_keep_factor > 0.0 && self.dropout_keep_factor <= 1.0) {
            return Err(TrainError::BadConfig(
                "dropout keep factor must be in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_natural) {
            return Err(TrainError::BadConfig("mix ratio must be in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be >= 1".into()));
        }
        self.augment
            .validate()
            .map_err(TrainError::BadConfig)?;
        Ok(())
    }
}

/// Everything a run needs: front end, topology, training knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub feature: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are fine.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, TrainError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            TrainError::BadConfig(format!("line {}: expected key = value, got {raw:?}", i + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, TrainError> {
    match map.remove(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| TrainError::BadConfig(format!("bad value for {key}: {v:?}"))),
    }
}

fn take_required<T: std::str::FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
) -> Result<T, TrainError> {
    let v = map
        .remove(key)
        .ok_or_else(|| TrainError::BadConfig(format!("missing required key {key}")))?;
    v.parse()
        .map_err(|_| TrainError::BadConfig(format!("bad value for {key}: {v:?}")))
}

/// Mix ratios accept the named table rows as well as a bare probability.
pub fn parse_ratio(v: &str) -> Result<f64, TrainError> {
    match v {
        "natural" => Ok(1.0),
        "synthetic" => Ok(0.0),
        "50/50" => Ok(0.5),
        "33/66" => Ok(1.0 / 3.0),
        other => other
            .parse::<f64>()
            .map_err(|_| TrainError::BadConfig(format!("bad mix ratio {other:?}"))),
    }
}

impl RunConfig {
    /// Consume this config's keys from a parsed map. Callers that own extra
    /// keys remove them first; leftovers afterwards are unknown keys.
    pub fn from_map(map: &mut BTreeMap<String, String>) -> Result<RunConfig, TrainError> {
        let fd = FeatureConfig::default();
        let feature = FeatureConfig {
            sample_rate_hz: take(map, "feature.sample_rate", fd.sample_rate_hz)?,
            window_samples: take(map, "feature.window", fd.window_samples)?,
            hop_samples: take(map, "feature.hop", fd.hop_samples)?,
            fft_size: take(map, "feature.fft", fd.fft_size)?,
            mel_bins: take(map, "feature.mel_bins", fd.mel_bins)?,
            fmin_hz: take(map, "feature.fmin", fd.fmin_hz)?,
            fmax_hz: take(map, "feature.fmax", fd.fmax_hz)?,
            log_floor: take(map, "feature.log_floor", fd.log_floor)?,
        };

        let class_count = take(map, "model.class_count", 29usize)?;
        let model = if let Some(preset) = map.remove("model.preset") {
            ModelConfig::preset(&preset, feature.mel_bins, class_count).ok_or_else(|| {
                TrainError::BadConfig(format!("unknown model preset {preset:?}"))
            })?
        } else {
            let block_count: usize = take_required(map, "model.blocks")?;
            let mut blocks = Vec::with_capacity(block_count);
            for i in 0..block_count {
                blocks.push(ConvBlockSpec {
                    repeats: take_required(map, &format!("model.block{i}.repeats"))?,
                    channels: take_required(map, &format!("model.block{i}.channels"))?,
                    kernel_width: take_required(map, &format!("model.block{i}.kernel"))?,
                    stride: take(map, &format!("model.block{i}.stride"), 1)?,
                    dropout_keep: take(map, &format!("model.block{i}.keep"), 1.0)?,
                });
            }
            let layer = |map: &mut BTreeMap<String, String>,
                         name: &str,
                         def_k: usize|
             -> Result<LayerSpec, TrainError> {
                Ok(LayerSpec {
                    channels: take_required(map, &format!("model.{name}.channels"))?,
                    kernel_width: take(map, &format!("model.{name}.kernel"), def_k)?,
                    stride: take(map, &format!("model.{name}.stride"), 1)?,
                    dropout_keep: take(map, &format!("model.{name}.keep"), 1.0)?,
                })
            };
            let preproc = LayerSpec {
                stride: take(map, "model.preproc.stride", 2)?,
                ..layer(map, "preproc", 11)?
            };
            let post0 = layer(map, "post0", 29)?;
            let post1 = layer(map, "post1", 1)?;
            let mut post2 = layer(map, "post2", 1)?;
            post2.dropout_keep = 1.0;
            ModelConfig {
                preproc,
                blocks,
                postproc: [post0, post1, post2],
                mel_bins: feature.mel_bins,
                class_count,
            }
        };

        let td = TrainConfig::default();
        let ratio = match map.remove("train.ratio") {
            Some(v) => parse_ratio(&v)?,
            None => td.p_natural,
        };
        let mode = match map
            .remove("train.numeric_mode")
            .unwrap_or_else(|| td.numeric_mode.as_str().into())
            .as_str()
        {
            "fast" => NumericMode::Fast,
            "check" => NumericMode::Check,
            other => {
                return Err(TrainError::BadConfig(format!(
                    "bad numeric mode {other:?} (fast|check)"
                )))
            }
        };
        let train = TrainConfig {
            learning_rate: take(map, "train.lr", td.learning_rate)?,
            momentum: take(map, "train.momentum", td.momentum)?,
            larc_eta: take(map, "train.larc_eta", td.larc_eta)?,
            dropout_keep_factor: take(map, "train.keep_factor", td.dropout_keep_factor)?,
            p_natural: ratio,
            batch_size: take(map, "train.batch_size", td.batch_size)?,
            steps: take(map, "train.steps", td.steps)?,
            seed: take(map, "train.seed", td.seed)?,
            eval_interval: take(map, "train.eval_interval", td.eval_interval)?,
            checkpoint_interval: take(map, "train.checkpoint_interval", td.checkpoint_interval)?,
            numeric_mode: mode,
            augment: AugmentConfig {
                noise_enabled: take(map, "augment.noise.enabled", false)?,
                noise_db_range: (
                    take(map, "augment.noise.low_db", -90.0)?,
                    take(map, "augment.noise.high_db", -60.0)?,
                ),
                stretch_enabled: take(map, "augment.stretch.enabled", false)?,
                stretch_factor: take(map, "augment.stretch.factor", 0.05)?,
            },
        };

        let cfg = RunConfig {
            feature,
            model,
            train,
        };
        cfg.feature
            .validate()
            .map_err(|e| TrainError::BadConfig(e.to_string()))?;
        cfg.model
            .validate()
            .map_err(|e| TrainError::BadConfig(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Parse from text, rejecting any unknown key.
    pub fn parse(text: &str) -> Result<RunConfig, TrainError> {
        let mut map = parse_kv(text)?;
        let cfg = RunConfig::from_map(&mut map)?;
        if let Some(key) = map.keys().next() {
            return Err(TrainError::BadConfig(format!("unknown key {key:?}")));
        }
        Ok(cfg)
    }

    /// Canonical text rendering; topology is written out explicitly so the
    /// text is self-contained.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let f = &self.feature;
        s.push_str(&format!("feature.sample_rate = {}\n", f.sample_rate_hz));
        s.push_str(&format!("feature.window = {}\n", f.window_samples));
        s.push_str(&format!("feature.hop = {}\n", f.hop_samples));
        s.push_str(&format!("feature.fft = {}\n", f.fft_size));
        s.push_str(&format!("feature.mel_bins = {}\n", f.mel_bins));
        s.push_str(&format!("feature.fmin = {}\n", f.fmin_hz));
        s.push_str(&format!("feature.fmax = {}\n", f.fmax_hz));
        s.push_str(&format!("feature.log_floor = {}\n", f.log_floor));

        let m = &self.model;
        s.push_str(&format!("model.class_count = {}\n", m.class_count));
        s.push_str(&format!(
            "model.preproc.channels = {}\nmodel.preproc.kernel = {}\nmodel.preproc.stride = {}\nmodel.preproc.keep = {}\n",
            m.preproc.channels, m.preproc.kernel_width, m.preproc.stride, m.preproc.dropout_keep
        ));
        s.push_str(&format!("model.blocks = {}\n", m.blocks.len()));
        for (i, b) in m.blocks.iter().enumerate() {
            s.push_str(&format!(
                "model.block{i}.repeats = {}\nmodel.block{i}.channels = {}\nmodel.block{i}.kernel = {}\nmodel.block{i}.stride = {}\nmodel.block{i}.keep = {}\n",
                b.repeats, b.channels, b.kernel_width, b.stride, b.dropout_keep
            ));
        }
        for (i, p) in m.postproc.iter().enumerate() {
            s.push_str(&format!(
                "model.post{i}.channels = {}\nmodel.post{i}.kernel = {}\nmodel.post{i}.stride = {}\nmodel.post{i}.keep = {}\n",
                p.channels, p.kernel_width, p.stride, p.dropout_keep
            ));
        }

        let t = &self.train;
        s.push_str(&format!("train.lr = {}\n", t.learning_rate));
        s.push_str(&format!("train.momentum = {}\n", t.momentum));
        s.push_str(&format!("train.larc_eta = {}\n", t.larc_eta));
        s.push_str(&format!("train.keep_factor = {}\n", t.dropout_keep_factor));
        s.push_str(&format!("train.ratio = {}\n", t.p_natural));
        s.push_str(&format!("train.batch_size = {}\n", t.batch_size));
        s.push_str(&format!("train.steps = {}\n", t.steps));
        s.push_str(&format!("train.seed = {}\n", t.seed));
        s.push_str(&format!("train.eval_interval = {}\n", t.eval_interval));
        s.push_str(&format!(
            "train.checkpoint_interval = {}\n",
            t.checkpoint_interval
        ));
        s.push_str(&format!("train.numeric_mode = {}\n", t.numeric_mode.as_str()));
        s.push_str(&format!("augment.noise.enabled = {}\n", t.augment.noise_enabled));
        s.push_str(&format!("augment.noise.low_db = {}\n", t.augment.noise_db_range.0));
        s.push_str(&format!("augment.noise.high_db = {}\n", t.augment.noise_db_range.1));
        s.push_str(&format!(
            "augment.stretch.enabled = {}\n",
            t.augment.stretch_enabled
        ));
        s.push_str(&format!(
            "augment.stretch.factor = {}\n",
            t.augment.stretch_factor
        ));
        s
    }
}
