//! The fully convolutional acoustic model: a strided pre-processing layer,
//! residual blocks of repeated convolutions, and three post-processing
//! layers ending in a linear map to the charset followed by log-softmax.
//! Every layer is conv -> batchnorm -> ReLU -> dropout except the final
//! linear one; each block adds a 1-wide projection of its input to the
//! block output before the last ReLU.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::ops;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::train::effective_keep;

const BN_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub channels: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub dropout_keep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockSpec {
    pub repeats: usize,
    pub channels: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub dropout_keep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub preproc: LayerSpec,
    pub blocks: Vec<ConvBlockSpec>,
    pub postproc: [LayerSpec; 3],
    pub mel_bins: usize,
    pub class_count: usize,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in the forward pass (training diverged?)")]
    NonFinite,
}

impl ModelConfig {
    /// Total convolutional layers: 1 pre-processing + all block repeats +
    /// 3 post-processing. Residual projections are not counted.
    pub fn total_layers(&self) -> usize {
        1 + self.blocks.iter().map(|b| b.repeats).sum::<usize>() + 3
    }

    /// Named presets: `w2lp-19/24/34/44/54` and the desk-scale `w2lp-tiny`.
    pub fn preset(name: &str, mel_bins: usize, class_count: usize) -> Option<ModelConfig> {
        let (b, r, ch, post_ch) = match name {
            "w2lp-19" => (5, 3, 256, (512, 1024)),
            "w2lp-24" => (5, 4, 256, (512, 1024)),
            "w2lp-34" => (10, 3, 256, (512, 1024)),
            "w2lp-44" => (10, 4, 256, (512, 1024)),
            "w2lp-54" => (10, 5, 256, (512, 1024)),
            "w2lp-tiny" => (2, 2, 32, (64, 128)),
            _ => return None,
        };
        // kernel widths widen across blocks; ten-block variants repeat each
        let five = [11usize, 13, 17, 21, 25];
        let kernel = |i: usize| -> usize {
            if b > 5 {
                five[(i / 2).min(4)]
            } else {
                five[i.min(4)]
            }
        };
        let keep = if name == "w2lp-tiny" { 0.9 } else { 0.8 };
        let blocks = (0..b)
            .map(|i| ConvBlockSpec {
                repeats: r,
                channels: ch,
                kernel_width: kernel(i),
                stride: 1,
                dropout_keep: keep,
            })
            .collect();
        Some(ModelConfig {
            preproc: LayerSpec {
                channels: ch,
                kernel_width: 11,
                stride: 2,
                dropout_keep: keep,
            },
            blocks,
            postproc: [
                LayerSpec {
                    channels: post_ch.0,
                    kernel_width: 29,
                    stride: 1,
                    dropout_keep: keep,
                },
                LayerSpec {
                    channels: post_ch.1,
                    kernel_width: 1,
                    stride: 1,
                    dropout_keep: keep,
                },
                LayerSpec {
                    channels: class_count,
                    kernel_width: 1,
                    stride: 1,
                    dropout_keep: 1.0,
                },
            ],
            mel_bins,
            class_count,
        })
    }

    pub fn validate(&self) -> Result<(), NetError> {
        fn check_layer(
            name: &str,
            ch: usize,
            k: usize,
            stride: usize,
            keep: f64,
        ) -> Result<(), NetError> {
            if ch == 0 {
                return Err(NetError::InvalidConfig(format!("{name}: zero channels")));
            }
            if k % 2 == 0 {
                return Err(NetError::InvalidConfig(format!(
                    "{name}: kernel width {k} must be odd"
                )));
            }
            if stride == 0 {
                return Err(NetError::InvalidConfig(format!("{name}: zero stride")));
            }
            if !(keep > 0.0 && keep <= 1.0) {
                return Err(NetError::InvalidConfig(format!(
                    "{name}: dropout keep {keep} outside (0, 1]"
                )));
            }
            Ok(())
        }
        check_layer(
            "preproc",
            self.preproc.channels,
            self.preproc.kernel_width,
            self.preproc.stride,
            self.preproc.dropout_keep,
        )?;
        if self.blocks.is_empty() {
            return Err(NetError::InvalidConfig("no convolutional blocks".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.repeats == 0 {
                return Err(NetError::InvalidConfig(format!("block {i}: zero repeats")));
            }
            check_layer(
                &format!("block {i}"),
                b.channels,
                b.kernel_width,
                b.stride,
                b.dropout_keep,
            )?;
        }
        for (i, p) in self.postproc.iter().enumerate() {
            check_layer(
                &format!("post {i}"),
                p.channels,
                p.kernel_width,
                p.stride,
                p.dropout_keep,
            )?;
        }
        if self.mel_bins == 0 || self.class_count < 2 {
            return Err(NetError::InvalidConfig(
                "need mel_bins >= 1 and class_count >= 2".into(),
            ));
        }
        if self.postproc[2].channels != self.class_count {
            return Err(NetError::InvalidConfig(format!(
                "declared class count {} does not match the final layer's {} channels",
                self.class_count, self.postproc[2].channels
            )));
        }
        Ok(())
    }
}

struct Bn<S> {
    gamma: Tensor<S>,
    beta: Tensor<S>,
    running_mean: Tensor<S>,
    running_var: Tensor<S>,
}

struct Unit<S> {
    name: String,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    w: Tensor<S>,
    bias: Tensor<S>,
    bn: Option<Bn<S>>,
    relu: bool,
    dropout_keep: f64,
}

struct Block<S> {
    layers: Vec<Unit<S>>,
    proj: Unit<S>,
}

pub struct Network<S> {
    cfg: ModelConfig,
    preproc: Unit<S>,
    blocks: Vec<Block<S>>,
    post: Vec<Unit<S>>,
}

#[allow(clippy::too_many_arguments)]
fn init_unit<S: Scalar>(
    name: String,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    with_bn: bool,
    relu: bool,
    dropout_keep: f64,
    rng: &mut ChaCha8Rng,
) -> Unit<S> {
    let limit = (6.0 / (k as f64 * c_in as f64 + k as f64 * c_out as f64)).sqrt();
    let w = Tensor::from_vec(
        &[c_out, k, c_in],
        (0..c_out * k * c_in)
            .map(|_| S::from_f64(rng.gen_range(-limit..limit)))
            .collect(),
    );
    let bn = with_bn.then(|| Bn {
        gamma: Tensor::filled(&[c_out], S::ONE),
        beta: Tensor::zeros(&[c_out]),
        running_mean: Tensor::zeros(&[c_out]),
        running_var: Tensor::filled(&[c_out], S::ONE),
    });
    Unit {
        name,
        c_in,
        c_out,
        k,
        stride,
        w,
        bias: Tensor::zeros(&[c_out]),
        bn,
        relu,
        dropout_keep,
    }
}

/// Build a network with Xavier-uniform conv weights, zero biases and unit
/// batchnorm scales. Identical seeds give bit-identical parameters.
pub fn build_model<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Network<S>, NetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preproc = init_unit(
        "preproc".into(),
        cfg.mel_bins,
        cfg.preproc.channels,
        cfg.preproc.kernel_width,
        cfg.preproc.stride,
        true,
        true,
        cfg.preproc.dropout_keep,
        &mut rng,
    );
    let mut blocks = Vec::with_capacity(cfg.blocks.len());
    let mut c_prev = cfg.preproc.channels;
    for (i, spec) in cfg.blocks.iter().enumerate() {
        let mut layers = Vec::with_capacity(spec.repeats);
        let mut c_in = c_prev;
        for r in 0..spec.repeats {
            // only the first layer of a block may stride
            let stride = if r == 0 { spec.stride } else { 1 };
            layers.push(init_unit(
                format!("block{i}.layer{r}"),
                c_in,
                spec.channels,
                spec.kernel_width,
                stride,
                true,
                true,
                spec.dropout_keep,
                &mut rng,
            ));
            c_in = spec.channels;
        }
        let proj = init_unit(
            format!("block{i}.proj"),
            c_prev,
            spec.channels,
            1,
            spec.stride,
            false,
            false,
            1.0,
            &mut rng,
        );
        blocks.push(Block { layers, proj });
        c_prev = spec.channels;
    }
    let mut post = Vec::with_capacity(3);
    for (i, spec) in cfg.postproc.iter().enumerate() {
        let last = i == 2;
        post.push(init_unit(
            format!("post{i}"),
            c_prev,
            spec.channels,
            spec.kernel_width,
            spec.stride,
            !last,
            !last,
            if last { 1.0 } else { spec.dropout_keep },
            &mut rng,
        ));
        c_prev = spec.channels;
    }
    Ok(Network {
        cfg: cfg.clone(),
        preproc,
        blocks,
        post,
    })
}

/// Log-probabilities and per-item output lengths.
pub struct Inference<S> {
    pub logprobs: Vec<S>,
    pub batch: usize,
    pub t_out: usize,
    pub class_count: usize,
    pub out_lengths: Vec<usize>,
}

impl<S: Scalar> Inference<S> {
    /// One item's valid frames as an f64 `t x c` matrix.
    pub fn item_logprobs(&self, b: usize) -> Vec<f64> {
        let stride = self.t_out * self.class_count;
        self.logprobs[b * stride..b * stride + self.out_lengths[b] * self.class_count]
            .iter()
            .map(|v| v.to_f64())
            .collect()
    }
}

struct UnitCache<S> {
    x: Vec<S>,
    t_in: usize,
    lens_out: Vec<usize>,
    bn: Option<ops::BnCache<S>>,
    relu_out: Option<Vec<S>>,
    dropout_mask: Option<Vec<S>>,
}

struct BlockCache<S> {
    units: Vec<UnitCache<S>>,
    proj_x: Vec<S>,
    proj_t_in: usize,
    relu_out: Vec<S>,
    dropout_mask: Option<Vec<S>>,
    lens_out: Vec<usize>,
}

struct ModelCache<S> {
    preproc: UnitCache<S>,
    blocks: Vec<BlockCache<S>>,
    post: Vec<UnitCache<S>>,
    logprobs: Vec<S>,
}

pub struct TrainForward<S> {
    pub out: Inference<S>,
    cache: ModelCache<S>,
}

/// Parameter gradients, parallel to [`Network::param_names`].
pub struct Gradients<S> {
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}

fn ceil_lens(lens: &[usize], stride: usize) -> Vec<usize> {
    lens.iter().map(|&l| l.div_ceil(stride)).collect()
}

/// Running-statistics writeback produced by a train-mode forward, keyed by
/// the unit's position in the [`Network::units`] enumeration.
struct BnUpdate<S> {
    unit_idx: usize,
    running_mean: Vec<S>,
    running_var: Vec<S>,
}

struct TrainCtx<'r> {
    rng: &'r mut ChaCha8Rng,
    keep_factor: f64,
}

impl<S: Scalar> Network<S> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn conv_layer_count(&self) -> usize {
        1 + self.blocks.iter().map(|b| b.layers.len()).sum::<usize>() + self.post.len()
    }

    fn units(&self) -> Vec<&Unit<S>> {
        let mut out = vec![&self.preproc];
        for b in &self.blocks {
            out.extend(b.layers.iter());
            out.push(&b.proj);
        }
        out.extend(self.post.iter());
        out
    }

    fn units_mut(&mut self) -> Vec<&mut Unit<S>> {
        let mut out: Vec<&mut Unit<S>> = vec![&mut self.preproc];
        for b in &mut self.blocks {
            out.extend(b.layers.iter_mut());
            out.push(&mut b.proj);
        }
        out.extend(self.post.iter_mut());
        out
    }

    /// Trainable parameter names, in the fixed enumeration order shared by
    /// [`Network::params`], [`Network::params_mut`] and [`Gradients`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for u in self.units() {
            names.push(format!("{}.w", u.name));
            names.push(format!("{}.b", u.name));
            if u.bn.is_some() {
                names.push(format!("{}.bn.gamma", u.name));
                names.push(format!("{}.bn.beta", u.name));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for u in self.units() {
            out.push(&u.w);
            out.push(&u.bias);
            if let Some(bn) = &u.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for u in self.units_mut() {
            out.push(&mut u.w);
            out.push(&mut u.bias);
            if let Some(bn) = &mut u.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Batchnorm running statistics (state, not trained parameters).
    pub fn state_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for u in self.units() {
            if u.bn.is_some() {
                names.push(format!("{}.bn.rmean", u.name));
                names.push(format!("{}.bn.rvar", u.name));
            }
        }
        names
    }

    pub fn states(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for u in self.units() {
            if let Some(bn) = &u.bn {
                out.push(&bn.running_mean);
                out.push(&bn.running_var);
            }
        }
        out
    }

    pub fn states_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for u in self.units_mut() {
            if let Some(bn) = &mut u.bn {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }

    /// Output frame count for an input length: the composition of per-layer
    /// ceil divisions by stride.
    pub fn output_len(&self, input_len: usize) -> usize {
        self.units()
            .iter()
            .filter(|u| !u.name.ends_with(".proj"))
            .fold(input_len, |l, u| l.div_ceil(u.stride))
    }

    /// Pure inference forward using running statistics, no dropout.
    pub fn forward_infer(
        &self,
        x: &[S],
        batch: usize,
        t_in: usize,
        lengths: &[usize],
    ) -> Result<Inference<S>, NetError> {
        let (out, _, _) = self.forward_impl(x, batch, t_in, lengths, None)?;
        Ok(out)
    }

    /// Train-mode forward: batch statistics, dropout, cached intermediates
    /// for [`Network::backward`], and running-statistics updates.
    pub fn forward_train(
        &mut self,
        x: &[S],
        batch: usize,
        t_in: usize,
        lengths: &[usize],
        rng: &mut ChaCha8Rng,
        keep_factor: f64,
    ) -> Result<TrainForward<S>, NetError> {
        let (out, cache, updates) =
            self.forward_impl(x, batch, t_in, lengths, Some(TrainCtx { rng, keep_factor }))?;
        let mut units = self.units_mut();
        for u in updates {
            let unit = &mut units[u.unit_idx];
            let bn = unit.bn.as_mut().expect("update only for bn units");
            bn.running_mean.data.copy_from_slice(&u.running_mean);
            bn.running_var.data.copy_from_slice(&u.running_var);
        }
        Ok(TrainForward {
            out,
            cache: cache.expect("train mode always builds a cache"),
        })
    }

    #[allow(clippy::type_complexity)]
    fn forward_impl(
        &self,
        x: &[S],
        batch: usize,
        t_in: usize,
        lengths: &[usize],
        mut train: Option<TrainCtx>,
    ) -> Result<(Inference<S>, Option<ModelCache<S>>, Vec<BnUpdate<S>>), NetError> {
        if x.len() != batch * t_in * self.cfg.mel_bins {
            return Err(NetError::ShapeMismatch(format!(
                "features: expected {}x{}x{}, got {} values",
                batch,
                t_in,
                self.cfg.mel_bins,
                x.len()
            )));
        }
        if lengths.len() != batch || lengths.iter().any(|&l| l == 0 || l > t_in) {
            return Err(NetError::ShapeMismatch(format!(
                "lengths {lengths:?} inconsistent with batch {batch} x t {t_in}"
            )));
        }
        let caching = train.is_some();
        let mut updates = Vec::new();
        let mut unit_idx = 0usize;

        let mut cur = x.to_vec();
        let mut t = t_in;
        let mut lens = lengths.to_vec();
        ops::mask_frames(&mut cur, batch, t, self.cfg.mel_bins, &lens);

        let (y, cache_pre) = unit_forward(
            &self.preproc,
            unit_idx,
            cur,
            batch,
            t,
            &lens,
            &mut train,
            &mut updates,
            true,
        )?;
        unit_idx += 1;
        cur = y.out;
        t = y.t_out;
        lens = y.lens_out;

        let mut cache_blocks = Vec::new();
        for block in &self.blocks {
            let block_in = cur;
            let block_t = t;
            let mut units_cache = Vec::new();
            let mut body = block_in.clone();
            let mut blens = lens.clone();
            let repeats = block.layers.len();
            for (r, layer) in block.layers.iter().enumerate() {
                let with_act = r < repeats - 1; // the last layer stops at batchnorm
                let (y, c) = unit_forward(
                    layer,
                    unit_idx,
                    body,
                    batch,
                    t,
                    &blens,
                    &mut train,
                    &mut updates,
                    with_act,
                )?;
                unit_idx += 1;
                body = y.out;
                t = y.t_out;
                blens = y.lens_out;
                if let Some(c) = c {
                    units_cache.push(c);
                }
            }
            let (proj_out, proj_t) = ops::conv1d_forward(
                &block_in,
                batch,
                block_t,
                block.proj.c_in,
                &block.proj.w.data,
                &block.proj.bias.data,
                block.proj.c_out,
                block.proj.k,
                block.proj.stride,
            );
            unit_idx += 1; // the projection is a unit without bn
            debug_assert_eq!(proj_t, t, "projection and body frame counts differ");
            let mut sum = body;
            for (s, p) in sum.iter_mut().zip(&proj_out) {
                *s += *p;
            }
            ops::relu_forward(&mut sum);
            let relu_out = if caching { sum.clone() } else { Vec::new() };
            let dropout_mask = match &mut train {
                Some(ctx) => {
                    let keep = effective_keep(
                        block.layers.last().unwrap().dropout_keep,
                        ctx.keep_factor,
                    );
                    (keep < 1.0).then(|| ops::dropout_forward(&mut sum, keep, ctx.rng))
                }
                None => None,
            };
            ops::mask_frames(&mut sum, batch, t, block.proj.c_out, &blens);
            if caching {
                cache_blocks.push(BlockCache {
                    units: units_cache,
                    proj_x: block_in,
                    proj_t_in: block_t,
                    relu_out,
                    dropout_mask,
                    lens_out: blens.clone(),
                });
            }
            cur = sum;
            lens = blens;
        }

        let mut cache_post = Vec::new();
        for (i, unit) in self.post.iter().enumerate() {
            let with_act = i < 2; // the final layer is the plain linear map
            let (y, c) = unit_forward(
                unit,
                unit_idx,
                cur,
                batch,
                t,
                &lens,
                &mut train,
                &mut updates,
                with_act,
            )?;
            unit_idx += 1;
            cur = y.out;
            t = y.t_out;
            lens = y.lens_out;
            if let Some(c) = c {
                cache_post.push(c);
            }
        }

        let c = self.cfg.class_count;
        ops::log_softmax(&mut cur, c);
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(NetError::NonFinite);
        }

        let out = Inference {
            logprobs: cur.clone(),
            batch,
            t_out: t,
            class_count: c,
            out_lengths: lens,
        };
        let cache = caching.then(|| ModelCache {
            preproc: cache_pre.unwrap(),
            blocks: cache_blocks,
            post: cache_post,
            logprobs: cur,
        });
        Ok((out, cache, updates))
    }

    /// Exact reverse-mode gradients for every trainable parameter, given
    /// the upstream gradient on the log-probabilities.
    pub fn backward(
        &self,
        fwd: &TrainForward<S>,
        upstream: &[S],
    ) -> Result<Gradients<S>, NetError> {
        let cache = &fwd.cache;
        let c = self.cfg.class_count;
        let batch = fwd.out.batch;
        if upstream.len() != fwd.out.logprobs.len() {
            return Err(NetError::ShapeMismatch(format!(
                "upstream gradient has {} values, logprobs have {}",
                upstream.len(),
                fwd.out.logprobs.len()
            )));
        }

        let mut store: std::collections::HashMap<String, Vec<Tensor<S>>> = Default::default();
        let mut dy = upstream.to_vec();
        ops::log_softmax_backward(&mut dy, &cache.logprobs, c);

        for (i, unit) in self.post.iter().enumerate().rev() {
            let (dx, grads) = unit_backward(unit, &cache.post[i], &mut dy, batch, i < 2)?;
            store.insert(unit.name.clone(), grads);
            dy = dx;
        }

        for (bi, block) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[bi];
            let c_out = block.proj.c_out;
            let bt = dy.len() / (batch * c_out);
            ops::mask_frames(&mut dy, batch, bt, c_out, &bc.lens_out);
            if let Some(mask) = &bc.dropout_mask {
                ops::dropout_backward(&mut dy, mask);
            }
            ops::relu_backward(&mut dy, &bc.relu_out);

            // skip path
            let (dx_proj, dw_proj, db_proj) = ops::conv1d_backward(
                &dy,
                &bc.proj_x,
                &block.proj.w.data,
                batch,
                bc.proj_t_in,
                block.proj.c_in,
                block.proj.c_out,
                block.proj.k,
                block.proj.stride,
            );
            store.insert(
                block.proj.name.clone(),
                vec![
                    Tensor::from_vec(block.proj.w.shape(), dw_proj),
                    Tensor::from_vec(block.proj.bias.shape(), db_proj),
                ],
            );

            // body path; its last layer stopped at batchnorm in the forward
            let repeats = block.layers.len();
            for (r, layer) in block.layers.iter().enumerate().rev() {
                let (dx, grads) =
                    unit_backward(layer, &bc.units[r], &mut dy, batch, r < repeats - 1)?;
                store.insert(layer.name.clone(), grads);
                dy = dx;
            }

            for (g, p) in dy.iter_mut().zip(&dx_proj) {
                *g += *p;
            }
        }

        let (_, grads) = unit_backward(&self.preproc, &cache.preproc, &mut dy, batch, true)?;
        store.insert(self.preproc.name.clone(), grads);

        let mut tensors = Vec::new();
        for u in self.units() {
            let gs = store
                .remove(&u.name)
                .unwrap_or_else(|| panic!("missing gradients for {}", u.name));
            tensors.extend(gs);
        }
        Ok(Gradients { tensors })
    }
}

struct UnitOut<S> {
    out: Vec<S>,
    t_out: usize,
    lens_out: Vec<usize>,
}

/// conv -> mask -> batchnorm [-> ReLU -> dropout -> mask when `with_act`].
/// Block-final layers run with `with_act = false` and resume at the block's
/// residual add.
#[allow(clippy::too_many_arguments)]
fn unit_forward<S: Scalar>(
    unit: &Unit<S>,
    unit_idx: usize,
    x: Vec<S>,
    batch: usize,
    t_in: usize,
    lens_in: &[usize],
    train: &mut Option<TrainCtx>,
    updates: &mut Vec<BnUpdate<S>>,
    with_act: bool,
) -> Result<(UnitOut<S>, Option<UnitCache<S>>), NetError> {
    let caching = train.is_some();
    let (mut y, t_out) = ops::conv1d_forward(
        &x,
        batch,
        t_in,
        unit.c_in,
        &unit.w.data,
        &unit.bias.data,
        unit.c_out,
        unit.k,
        unit.stride,
    );
    let lens_out = ceil_lens(lens_in, unit.stride);
    ops::mask_frames(&mut y, batch, t_out, unit.c_out, &lens_out);

    let mut bn_cache = None;
    if let Some(bn) = &unit.bn {
        if caching {
            let mut rm = bn.running_mean.data.clone();
            let mut rv = bn.running_var.data.clone();
            let (out, cache) = ops::batchnorm_train(
                &y,
                batch,
                t_out,
                unit.c_out,
                &bn.gamma.data,
                &bn.beta.data,
                &mut rm,
                &mut rv,
                BN_MOMENTUM,
                BN_EPS,
            );
            y = out;
            bn_cache = Some(cache);
            updates.push(BnUpdate {
                unit_idx,
                running_mean: rm,
                running_var: rv,
            });
        } else {
            y = ops::batchnorm_infer(
                &y,
                unit.c_out,
                &bn.gamma.data,
                &bn.beta.data,
                &bn.running_mean.data,
                &bn.running_var.data,
                BN_EPS,
            );
        }
    }

    let mut relu_out = None;
    let mut dropout_mask = None;
    if with_act {
        if unit.relu {
            ops::relu_forward(&mut y);
            if caching {
                relu_out = Some(y.clone());
            }
        }
        if let Some(ctx) = train {
            let keep = effective_keep(unit.dropout_keep, ctx.keep_factor);
            if keep < 1.0 {
                dropout_mask = Some(ops::dropout_forward(&mut y, keep, ctx.rng));
            }
        }
        ops::mask_frames(&mut y, batch, t_out, unit.c_out, &lens_out);
    }

    let cache = caching.then(|| UnitCache {
        x,
        t_in,
        lens_out: lens_out.clone(),
        bn: bn_cache,
        relu_out,
        dropout_mask,
    });
    Ok((
        UnitOut {
            out: y,
            t_out,
            lens_out,
        },
        cache,
    ))
}

/// Mirror of [`unit_forward`]. Returns the input gradient and the unit's
/// parameter gradients in (w, b, gamma, beta) order.
fn unit_backward<S: Scalar>(
    unit: &Unit<S>,
    uc: &UnitCache<S>,
    dy: &mut Vec<S>,
    batch: usize,
    with_act: bool,
) -> Result<(Vec<S>, Vec<Tensor<S>>), NetError> {
    let t_out = dy.len() / (batch * unit.c_out);
    if with_act {
        ops::mask_frames(dy, batch, t_out, unit.c_out, &uc.lens_out);
        if let Some(mask) = &uc.dropout_mask {
            ops::dropout_backward(dy, mask);
        }
        if let Some(relu_out) = &uc.relu_out {
            ops::relu_backward(dy, relu_out);
        }
    }
    let mut bn_grads = Vec::new();
    if let Some(bn) = &unit.bn {
        let cache = uc.bn.as_ref().expect("bn cache present when bn exists");
        let (dx, dgamma, dbeta) = ops::batchnorm_backward(dy, cache, unit.c_out, &bn.gamma.data);
        *dy = dx;
        bn_grads.push(Tensor::from_vec(bn.gamma.shape(), dgamma));
        bn_grads.push(Tensor::from_vec(bn.beta.shape(), dbeta));
    }
    // mirror of the post-conv mask in the forward pass
    ops::mask_frames(dy, batch, t_out, unit.c_out, &uc.lens_out);
    let (dx, dw, db) = ops::conv1d_backward(
        dy,
        &uc.x,
        &unit.w.data,
        batch,
        uc.t_in,
        unit.c_in,
        unit.c_out,
        unit.k,
        unit.stride,
    );
    let mut grads = vec![
        Tensor::from_vec(unit.w.shape(), dw),
        Tensor::from_vec(unit.bias.shape(), db),
    ];
    grads.extend(bn_grads);
    Ok((dx, grads))
}
