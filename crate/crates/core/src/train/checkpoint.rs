//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic  "W2LPCKPT"
//! u32    version (= 1)
//! u64    step
//! u32    config text length, then UTF-8 run-configuration text
//! u32    tensor count
//! per tensor:
//!   u16  name length, then name bytes
//!   u8   rank
//!   u64  dims (rank of them)
//!   f32  values (product of dims)
//! u32    RNG word count, then u64 state words
//! ```
//!
//! Tensors hold the model parameters and batchnorm running statistics;
//! momentum buffers follow the same scheme under names suffixed `.v`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::net::{Network, Scalar, Tensor};

use super::TrainError;

pub const CKPT_MAGIC: &[u8; 8] = b"W2LPCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

/// Everything needed to restart a run exactly: parameters, optimizer
/// momentum, step counter and RNG state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config_text: String,
    pub tensors: Vec<NamedTensor>,
    pub rng_words: Vec<u64>,
}

fn fmt_err(msg: impl Into<String>) -> TrainError {
    TrainError::CheckpointFormat(msg.into())
}

impl Checkpoint {
    /// Snapshot a network, its momentum buffers and the training RNG.
    pub fn capture<S: Scalar>(
        step: u64,
        config_text: String,
        net: &Network<S>,
        velocity: &[Tensor<S>],
        rng: &ChaCha8Rng,
    ) -> Checkpoint {
        let mut tensors = Vec::new();
        let mut push = |name: String, t: &Tensor<S>| {
            tensors.push(NamedTensor {
                name,
                dims: t.shape().to_vec(),
                values: t.data.iter().map(|v| v.to_f64() as f32).collect(),
            });
        };
        let names = net.param_names();
        for (name, t) in names.iter().zip(net.params()) {
            push(name.clone(), t);
        }
        for (name, t) in net.state_names().iter().zip(net.states()) {
            push(name.clone(), t);
        }
        for (name, v) in names.iter().zip(velocity) {
            push(format!("{name}.v"), v);
        }
        Checkpoint {
            version: CKPT_VERSION,
            step,
            config_text,
            tensors,
            rng_words: rng_to_words(rng),
        }
    }

    fn find(&self, name: &str) -> Result<&NamedTensor, TrainError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| fmt_err(format!("checkpoint is missing tensor {name:?}")))
    }

    /// Write parameters and running stats into a freshly built network and
    /// return the momentum buffers and RNG. Dimensions must match.
    pub fn restore<S: Scalar>(
        &self,
        net: &mut Network<S>,
    ) -> Result<(Vec<Tensor<S>>, ChaCha8Rng), TrainError> {
        let names = net.param_names();
        let state_names = net.state_names();
        let mut velocity = Vec::with_capacity(names.len());
        for (name, p) in names.iter().zip(net.params_mut()) {
            copy_into(self.find(name)?, p)?;
        }
        for (name, s) in state_names.iter().zip(net.states_mut()) {
            copy_into(self.find(name)?, s)?;
        }
        for (name, p) in names.iter().zip(net.params()) {
            let v = self.find(&format!("{name}.v"))?;
            let mut t = Tensor::<S>::zeros(p.shape());
            copy_into(v, &mut t)?;
            velocity.push(t);
        }
        let rng = words_to_rng(&self.rng_words)?;
        Ok((velocity, rng))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        let cfg = self.config_text.as_bytes();
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(cfg)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(t.dims.len() as u8).to_le_bytes())?;
            for &d in &t.dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let expect: usize = t.dims.iter().product();
            assert_eq!(expect, t.values.len(), "tensor {} dims vs data", t.name);
            for &v in &t.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.rng_words.len() as u32).to_le_bytes())?;
        for &word in &self.rng_words {
            w.write_all(&word.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| fmt_err("file too short for magic"))?;
        if &magic != CKPT_MAGIC {
            return Err(fmt_err("bad magic bytes"));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(TrainError::CheckpointVersion(version));
        }
        let step = read_u64(&mut r)?;
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)
            .map_err(|_| fmt_err("truncated config block"))?;
        let config_text =
            String::from_utf8(cfg).map_err(|_| fmt_err("config block is not UTF-8"))?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|_| fmt_err("truncated tensor name"))?;
            let name = String::from_utf8(name).map_err(|_| fmt_err("tensor name not UTF-8"))?;
            let rank = read_u8(&mut r)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u64(&mut r)? as usize);
            }
            let len: usize = dims.iter().product();
            let mut raw = vec![0u8; len * 4];
            r.read_exact(&mut raw)
                .map_err(|_| fmt_err(format!("truncated values for tensor {name:?}")))?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(NamedTensor { name, dims, values });
        }
        let words = read_u32(&mut r)? as usize;
        let mut rng_words = Vec::with_capacity(words);
        for _ in 0..words {
            rng_words.push(read_u64(&mut r)?);
        }
        Ok(Checkpoint {
            version,
            step,
            config_text,
            tensors,
            rng_words,
        })
    }
}

fn copy_into<S: Scalar>(src: &NamedTensor, dst: &mut Tensor<S>) -> Result<(), TrainError> {
    if src.dims != dst.shape() {
        return Err(fmt_err(format!(
            "tensor {:?}: checkpoint dims {:?} do not match model dims {:?}",
            src.name,
            src.dims,
            dst.shape()
        )));
    }
    for (d, &v) in dst.data.iter_mut().zip(&src.values) {
        *d = S::from_f64(v as f64);
    }
    Ok(())
}

/// ChaCha8 state as words: 4 seed words, the stream id, and the 128-bit
/// word position split low/high.
fn rng_to_words(rng: &ChaCha8Rng) -> Vec<u64> {
    let seed = rng.get_seed();
    let mut words = Vec::with_capacity(7);
    for chunk in seed.chunks_exact(8) {
        words.push(u64::from_le_bytes(chunk.try_into().unwrap()));
    }
    words.push(rng.get_stream());
    let pos = rng.get_word_pos();
    words.push(pos as u64);
    words.push((pos >> 64) as u64);
    words
}

fn words_to_rng(words: &[u64]) -> Result<ChaCha8Rng, TrainError> {
    if words.len() != 7 {
        return Err(fmt_err(format!(
            "expected 7 RNG state words, found {}",
            words.len()
        )));
    }
    let mut seed = [0u8; 32];
    for (i, w) in words[..4].iter().enumerate() {
        seed[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(words[4]);
    let pos = (words[5] as u128) | ((words[6] as u128) << 64);
    rng.set_word_pos(pos);
    Ok(rng)
}

fn read_u8(r: &mut impl Read) -> Result<u8, TrainError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|_| fmt_err("truncated file"))?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16, TrainError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(|_| fmt_err("truncated file"))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, TrainError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| fmt_err("truncated file"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, TrainError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| fmt_err("truncated file"))?;
    Ok(u64::from_le_bytes(b))
}
