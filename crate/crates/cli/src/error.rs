//! One-line diagnostics with a stable prefix per error kind.

use std::fmt;

use w2lp_core::audio::AudioError;
use w2lp_core::ctc::{CharsetError, CtcError};
use w2lp_core::dataset::DatasetError;
use w2lp_core::lm::LmError;
use w2lp_core::net::NetError;
use w2lp_core::synth::SynthError;
use w2lp_core::train::TrainError;

pub struct CliError {
    kind: &'static str,
    msg: String,
}

impl CliError {
    pub fn new(kind: &'static str, msg: impl Into<String>) -> Self {
        CliError {
            kind,
            msg: msg.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::new("config", msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind, self.msg)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::Io(inner) => CliError::new("io", inner.to_string()),
            other => CliError::new("audio", other.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(inner) => CliError::new("io", inner.to_string()),
            DatasetError::Audio(inner) => inner.into(),
            other => CliError::new("data", other.to_string()),
        }
    }
}

impl From<CharsetError> for CliError {
    fn from(e: CharsetError) -> Self {
        CliError::new("data", e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Audio(inner) => inner.into(),
            SynthError::Dataset(inner) => inner.into(),
            other => CliError::new("synth", other.to_string()),
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Io(inner) => CliError::new("io", inner.to_string()),
            other => CliError::new("lm", other.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::new("model", e.to_string())
    }
}

impl From<CtcError> for CliError {
    fn from(e: CtcError) -> Self {
        CliError::new("decode", e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(inner) => CliError::new("io", inner.to_string()),
            TrainError::Dataset(inner) => inner.into(),
            TrainError::Audio(inner) => inner.into(),
            TrainError::Net(inner) => inner.into(),
            TrainError::Ctc(inner) => inner.into(),
            TrainError::BadConfig(msg) => CliError::new("config", msg),
            e @ (TrainError::CheckpointFormat(_) | TrainError::CheckpointVersion(_)) => {
                CliError::new("ckpt", e.to_string())
            }
            e @ (TrainError::Diverged { .. } | TrainError::NonFiniteGradient { .. }) => {
                CliError::new("train", e.to_string())
            }
        }
    }
}
