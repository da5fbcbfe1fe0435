//! The optimization loop: mixed sampling, optional augmentation,
//! featurization, CTC, LARC-clipped momentum SGD, periodic evaluation and
//! checkpointing. Fully reproducible under a seed, including resume.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{Checkpoint, NamedTensor, CKPT_MAGIC, CKPT_VERSION};
pub use config::{parse_kv, parse_ratio, NumericMode, RunConfig, TrainConfig};
pub use optim::{effective_keep, larc_scale, sgd_momentum_step, LARC_EPS};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{
    normalize_features, read_wav, AudioError, FeatureExtractor, FeatureMatrix, Waveform,
};
use crate::augment::augment_waveform;
use crate::ctc::{ctc_loss, greedy_decode, prefix_beam_search, Charset, CtcError, DecodeParams};
use crate::dataset::{assemble_batch, next_index, DatasetError, Manifest, MixRatio, Pool};
use crate::metrics;
use crate::net::{build_model, Gradients, NetError, Network, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("bad checkpoint: {0}")]
    CheckpointFormat(String),
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: u64 },
    #[error("non-finite gradient at step {step}; update aborted")]
    NonFiniteGradient { step: u64 },
}

pub struct TrainInputs<'a> {
    pub natural: &'a Manifest,
    pub synthetic: &'a Manifest,
    pub dev: Option<&'a Manifest>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics_lines: Vec<String>,
    pub steps_run: u64,
    pub final_train_loss: f64,
    pub final_dev_wer: Option<f64>,
    pub final_dev_cer: Option<f64>,
    pub skipped_items: u64,
    pub larc_violations: u64,
    pub update_norm_violations: u64,
}

/// Run (or resume) training. `cfg.train.steps` is the total step target;
/// resuming continues from the checkpoint's step counter to that target.
pub fn train_run(
    inputs: &TrainInputs,
    cfg: &RunConfig,
    charset: &Charset,
    out_dir: impl AsRef<Path>,
    resume: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    match cfg.train.numeric_mode {
        NumericMode::Fast => run_generic::<f32>(inputs, cfg, charset, out_dir.as_ref(), resume),
        NumericMode::Check => run_generic::<f64>(inputs, cfg, charset, out_dir.as_ref(), resume),
    }
}

/// Cached per-pool training data. Features are precomputed unless
/// augmentation is on, in which case decoded waveforms are kept instead
/// and featurized per draw.
struct PoolData {
    labels: Vec<Vec<u32>>,
    refs: Vec<String>,
    feats: Vec<FeatureMatrix>,
    waves: Vec<Waveform>,
}

impl PoolData {
    fn build(
        manifest: &Manifest,
        extractor: &FeatureExtractor,
        keep_waves: bool,
        charset: &Charset,
    ) -> Result<PoolData, TrainError> {
        let entries = manifest.entries();
        let loaded: Result<Vec<(Waveform, FeatureMatrix)>, TrainError> = entries
            .par_iter()
            .map(|u| {
                let w = read_wav(&u.audio_path)?;
                let f = normalize_features(&extractor.compute(&w)?);
                Ok((w, f))
            })
            .collect();
        let mut waves = Vec::new();
        let mut feats = Vec::new();
        for (w, f) in loaded? {
            if keep_waves {
                waves.push(w);
            } else {
                feats.push(f);
            }
        }
        let labels = entries
            .iter()
            .map(|u| charset.encode(&u.transcript))
            .collect::<Result<_, _>>()
            .map_err(DatasetError::from)?;
        Ok(PoolData {
            labels,
            refs: entries.iter().map(|u| u.transcript.clone()).collect(),
            feats,
            waves,
        })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

fn run_generic<S: Scalar>(
    inputs: &TrainInputs,
    cfg: &RunConfig,
    charset: &Charset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    cfg.train.validate()?;
    if cfg.model.class_count != charset.class_count() {
        return Err(TrainError::BadConfig(format!(
            "model has {} classes but the charset defines {}",
            cfg.model.class_count,
            charset.class_count()
        )));
    }
    let tc = &cfg.train;
    if tc.p_natural > 0.0 && inputs.natural.is_empty() {
        return Err(TrainError::Dataset(DatasetError::EmptyPool {
            pool: "natural",
            p: tc.p_natural,
        }));
    }
    if tc.p_natural < 1.0 && inputs.synthetic.is_empty() {
        return Err(TrainError::Dataset(DatasetError::EmptyPool {
            pool: "synthetic",
            p: tc.p_natural,
        }));
    }
    std::fs::create_dir_all(out_dir)?;

    let extractor = FeatureExtractor::new(cfg.feature.clone())?;
    let augmenting = tc.augment.any_enabled();
    let natural = PoolData::build(inputs.natural, &extractor, augmenting, charset)?;
    let synthetic = PoolData::build(inputs.synthetic, &extractor, augmenting, charset)?;
    let dev = inputs
        .dev
        .map(|m| PoolData::build(m, &extractor, false, charset))
        .transpose()?;

    let mut net: Network<S> = build_model(&cfg.model, tc.seed)?;
    let mut velocity: Vec<Tensor<S>>;
    let mut rng: ChaCha8Rng;
    let start_step: u64;
    match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let (v, r) = ck.restore(&mut net)?;
            velocity = v;
            rng = r;
            start_step = ck.step;
        }
        None => {
            velocity = net
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect();
            rng = ChaCha8Rng::seed_from_u64(tc.seed);
            rng.set_stream(1); // decoupled from the weight-init stream
            start_step = 0;
        }
    }
    if start_step > tc.steps {
        return Err(TrainError::BadConfig(format!(
            "checkpoint is at step {start_step}, beyond the configured {} steps",
            tc.steps
        )));
    }

    let metrics_path = out_dir.join("metrics.tsv");
    let mut metrics_file = std::fs::File::create(&metrics_path)?;
    let mut metrics_lines = Vec::new();

    let ratio = MixRatio::new(tc.p_natural)?;
    let warmup_steps = ((tc.steps as f64 * 0.05).ceil() as u64).max(1);
    let pad = S::from_f64(cfg.feature.log_floor.ln());
    let blank = charset.blank_id();
    let class_count = charset.class_count();

    let mut skipped_items = 0u64;
    let mut larc_violations = 0u64;
    let mut update_norm_violations = 0u64;
    let mut interval_loss_sum = 0.0f64;
    let mut interval_loss_count = 0u64;
    let mut final_train_loss = f64::NAN;
    let mut final_dev = (None, None);

    for step in start_step..tc.steps {
        let lr_t = tc.learning_rate * ((step + 1) as f64 / warmup_steps as f64).min(1.0);

        // fixed draw order per step: picks, then (optionally) an
        // augmentation seed, then the dropout seed
        let mut picks = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            picks.push(next_index(natural.len(), synthetic.len(), ratio, &mut rng)?);
        }
        let aug_seed = augmenting.then(|| rng.next_u64());
        let dropout_seed = rng.next_u64();

        let items: Result<Vec<(FeatureMatrix, Vec<u32>)>, TrainError> = picks
            .par_iter()
            .enumerate()
            .map(|(slot, &(pool, idx))| {
                let data = match pool {
                    Pool::Natural => &natural,
                    Pool::Synthetic => &synthetic,
                };
                let labels = data.labels[idx].clone();
                let feats = if let Some(seed) = aug_seed {
                    let mut item_rng =
                        ChaCha8Rng::seed_from_u64(seed.wrapping_add(slot as u64));
                    let wave = augment_waveform(&data.waves[idx], &tc.augment, &mut item_rng);
                    normalize_features(&extractor.compute(&wave)?)
                } else {
                    data.feats[idx].clone()
                };
                Ok((feats, labels))
            })
            .collect();
        let batch = assemble_batch(items?, pad.to_f64() as f32)?;

        let x: Vec<S> = batch.features.iter().map(|&v| S::from_f64(v as f64)).collect();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let fwd = net.forward_train(
            &x,
            batch.batch,
            batch.t_max,
            &batch.lengths,
            &mut drop_rng,
            tc.dropout_keep_factor,
        )?;

        // per-item CTC on the valid frames only
        let ctc_results: Result<Vec<_>, CtcError> = (0..batch.batch)
            .into_par_iter()
            .map(|b| {
                let lp = fwd.out.item_logprobs(b);
                ctc_loss(
                    &lp,
                    fwd.out.out_lengths[b],
                    class_count,
                    &batch.labels[b],
                    blank,
                )
            })
            .collect();
        let ctc_results = ctc_results?;
        let feasible: Vec<usize> = (0..batch.batch)
            .filter(|&b| ctc_results[b].is_feasible())
            .collect();
        skipped_items += (batch.batch - feasible.len()) as u64;

        let step_loss = if feasible.is_empty() {
            f64::NAN
        } else {
            feasible.iter().map(|&b| ctc_results[b].loss).sum::<f64>() / feasible.len() as f64
        };
        if !feasible.is_empty() && !step_loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        if step_loss.is_finite() {
            interval_loss_sum += step_loss;
            interval_loss_count += 1;
            final_train_loss = step_loss;
        }

        if !feasible.is_empty() {
            // mean reduction: each item's gradient is scaled by 1/n
            let scale = 1.0 / feasible.len() as f64;
            let stride = fwd.out.t_out * class_count;
            let mut upstream = vec![S::ZERO; fwd.out.logprobs.len()];
            for &b in &feasible {
                let grad = &ctc_results[b].grad;
                let dst = &mut upstream[b * stride..b * stride + grad.len()];
                for (d, &g) in dst.iter_mut().zip(grad) {
                    *d = S::from_f64(g * scale);
                }
            }
            let grads = net.backward(&fwd, &upstream)?;
            if !grads.all_finite() {
                return Err(TrainError::NonFiniteGradient { step });
            }
            let (lv, uv) = apply_update(&mut net, grads, &mut velocity, lr_t, tc);
            larc_violations += lv;
            update_norm_violations += uv;
        }

        let step_done = step + 1;
        let at_interval = tc.eval_interval > 0 && step_done % tc.eval_interval == 0;
        if at_interval || step_done == tc.steps {
            let interval_loss = if interval_loss_count > 0 {
                interval_loss_sum / interval_loss_count as f64
            } else {
                f64::NAN
            };
            let (dev_wer, dev_cer) = match &dev {
                Some(pool) => {
                    let (w, c) = eval_pool(&net, pool, charset, tc.batch_size)?;
                    (w, c)
                }
                None => (f64::NAN, f64::NAN),
            };
            final_dev = (
                dev_wer.is_finite().then_some(dev_wer),
                dev_cer.is_finite().then_some(dev_cer),
            );
            let line = format!(
                "{step_done}\t{interval_loss}\t{dev_wer}\t{dev_cer}\t{skipped_items}"
            );
            writeln!(metrics_file, "{line}")?;
            metrics_lines.push(line);
            interval_loss_sum = 0.0;
            interval_loss_count = 0;
        }

        if tc.checkpoint_interval > 0
            && step_done % tc.checkpoint_interval == 0
            && step_done != tc.steps
        {
            let ck = Checkpoint::capture(step_done, cfg.to_text(), &net, &velocity, &rng);
            ck.save(out_dir.join(format!("ckpt_{step_done:07}.ckpt")))?;
        }
    }

    let final_path = out_dir.join("final.ckpt");
    Checkpoint::capture(tc.steps, cfg.to_text(), &net, &velocity, &rng).save(&final_path)?;
    metrics_file.flush()?;

    Ok(TrainReport {
        final_checkpoint: final_path,
        metrics_path,
        metrics_lines,
        steps_run: tc.steps - start_step,
        final_train_loss,
        final_dev_wer: final_dev.0,
        final_dev_cer: final_dev.1,
        skipped_items,
        larc_violations,
        update_norm_violations,
    })
}

/// LARC-scale each tensor's gradient, then take a momentum step. Returns
/// counts of (clip-bound, update-norm) violations, which should be zero.
fn apply_update<S: Scalar>(
    net: &mut Network<S>,
    mut grads: Gradients<S>,
    velocity: &mut [Tensor<S>],
    lr: f64,
    tc: &TrainConfig,
) -> (u64, u64) {
    let mut larc_violations = 0;
    let mut update_violations = 0;
    {
        let params = net.params();
        for (p, g) in params.iter().zip(grads.tensors.iter_mut()) {
            let w_norm = p.l2_norm();
            let g_norm = g.l2_norm();
            let scale = larc_scale(w_norm, g_norm, lr, tc.larc_eta);
            if lr * scale * g_norm > tc.larc_eta * (w_norm + LARC_EPS) * (1.0 + 1e-9) {
                larc_violations += 1;
            }
            if scale < 1.0 {
                let s = S::from_f64(scale);
                for v in g.data.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
    let mut params = net.params_mut();
    sgd_momentum_step(&mut params, &grads.tensors, velocity, lr, tc.momentum);
    // the applied update is exactly -lr * v per element
    for v in velocity.iter() {
        let v_norm = v.l2_norm();
        let update_norm = v
            .data
            .iter()
            .map(|x| {
                let u = lr * x.to_f64();
                u * u
            })
            .sum::<f64>()
            .sqrt();
        if update_norm > lr * v_norm * (1.0 + 1e-9) + 1e-300 {
            update_violations += 1;
        }
    }
    (larc_violations, update_violations)
}

fn eval_pool<S: Scalar>(
    net: &Network<S>,
    pool: &PoolData,
    charset: &Charset,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    let hyps = transcribe_features(net, &pool.feats, charset, None, batch_size)?;
    let pairs: Vec<(&str, &str)> = pool
        .refs
        .iter()
        .map(|r| r.as_str())
        .zip(hyps.iter().map(|h| h.as_str()))
        .collect();
    Ok((
        metrics::wer(&pairs).unwrap_or(f64::NAN),
        metrics::cer(&pairs).unwrap_or(f64::NAN),
    ))
}

/// Decode precomputed (normalized) feature matrices with a network:
/// greedy when `decode` is `None`, otherwise beam search.
pub fn transcribe_features<S: Scalar>(
    net: &Network<S>,
    feats: &[FeatureMatrix],
    charset: &Charset,
    decode: Option<&DecodeParams>,
    batch_size: usize,
) -> Result<Vec<String>, TrainError> {
    let pad = S::ZERO; // normalized space; padding is masked away anyway
    let mut out = Vec::with_capacity(feats.len());
    for chunk in feats.chunks(batch_size.max(1)) {
        let t_max = chunk.iter().map(|f| f.frames()).max().unwrap();
        let m = chunk[0].mel_bins();
        let mut x = vec![pad; chunk.len() * t_max * m];
        let mut lengths = Vec::with_capacity(chunk.len());
        for (b, f) in chunk.iter().enumerate() {
            let dst = &mut x[b * t_max * m..b * t_max * m + f.frames() * m];
            for (d, &v) in dst.iter_mut().zip(f.data()) {
                *d = S::from_f64(v as f64);
            }
            lengths.push(f.frames());
        }
        let inf = net.forward_infer(&x, chunk.len(), t_max, &lengths)?;
        let hyps: Result<Vec<String>, CtcError> = (0..chunk.len())
            .into_par_iter()
            .map(|b| {
                let lp = inf.item_logprobs(b);
                match decode {
                    None => Ok(greedy_decode(&lp, inf.out_lengths[b], charset)),
                    Some(params) => {
                        prefix_beam_search(&lp, inf.out_lengths[b], charset, params)
                            .map(|r| r.transcript)
                    }
                }
            })
            .collect();
        out.extend(hyps?);
    }
    Ok(out)
}

/// Featurize waveforms and decode them.
pub fn transcribe_waveforms<S: Scalar>(
    net: &Network<S>,
    extractor: &FeatureExtractor,
    waves: &[Waveform],
    charset: &Charset,
    decode: Option<&DecodeParams>,
    batch_size: usize,
) -> Result<Vec<String>, TrainError> {
    let feats: Result<Vec<FeatureMatrix>, AudioError> = waves
        .par_iter()
        .map(|w| Ok(normalize_features(&extractor.compute(w)?)))
        .collect();
    transcribe_features(net, &feats?, charset, decode, batch_size)
}
