//! Forward and backward kernels. Layouts: activations are `[B, T, C]`
//! row-major, conv weights `[C_out, K, C_in]`. Accumulation order per
//! output element is fixed, so results do not depend on the thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::scalar::Scalar;

/// SAME-padded strided 1-d convolution over time:
/// `y[b,t,o] = bias[o] + sum_{k,i} w[o,k,i] * x[b, t*stride + k - pad, i]`
/// with zeros outside the frame range. `t_out = ceil(t_in / stride)`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    t_in: usize,
    c_in: usize,
    w: &[S],
    bias: &[S],
    c_out: usize,
    k: usize,
    stride: usize,
) -> (Vec<S>, usize) {
    assert_eq!(x.len(), batch * t_in * c_in);
    assert_eq!(w.len(), c_out * k * c_in);
    assert_eq!(bias.len(), c_out);
    assert!(k % 2 == 1, "kernel width must be odd for SAME padding");
    assert!(stride >= 1);
    let pad = (k - 1) / 2;
    let t_out = t_in.div_ceil(stride);
    let mut y = vec![S::ZERO; batch * t_out * c_out];

    y.par_chunks_mut(t_out * c_out)
        .enumerate()
        .for_each(|(b, yb)| {
            let xb = &x[b * t_in * c_in..(b + 1) * t_in * c_in];
            for t in 0..t_out {
                let t0 = (t * stride) as isize - pad as isize;
                // clip the kernel to the valid frame range
                let k_lo = (-t0).max(0) as usize;
                let k_hi = k.min((t_in as isize - t0).max(0) as usize);
                let row = &mut yb[t * c_out..(t + 1) * c_out];
                for (o, out) in row.iter_mut().enumerate() {
                    let mut acc = bias[o];
                    let wo = &w[o * k * c_in..(o + 1) * k * c_in];
                    for kk in k_lo..k_hi {
                        let xi = (t0 + kk as isize) as usize * c_in;
                        let wrow = &wo[kk * c_in..(kk + 1) * c_in];
                        let xrow = &xb[xi..xi + c_in];
                        let mut dot = S::ZERO;
                        for i in 0..c_in {
                            dot += wrow[i] * xrow[i];
                        }
                        acc += dot;
                    }
                    *out = acc;
                }
            }
        });
    (y, t_out)
}

/// Gradients of [`conv1d_forward`]: returns `(dx, dw, dbias)`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<S: Scalar>(
    dy: &[S],
    x: &[S],
    w: &[S],
    batch: usize,
    t_in: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let pad = (k - 1) / 2;
    let t_out = t_in.div_ceil(stride);
    assert_eq!(dy.len(), batch * t_out * c_out);

    // weight and bias gradients: parallel over output channels, serial over
    // batch and time inside, so the accumulation order is fixed
    let mut dw = vec![S::ZERO; c_out * k * c_in];
    let mut db = vec![S::ZERO; c_out];
    dw.par_chunks_mut(k * c_in)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(o, (dwo, dbo))| {
            for b in 0..batch {
                let xb = &x[b * t_in * c_in..(b + 1) * t_in * c_in];
                for t in 0..t_out {
                    let g = dy[b * t_out * c_out + t * c_out + o];
                    if g == S::ZERO {
                        continue;
                    }
                    *dbo += g;
                    let t0 = (t * stride) as isize - pad as isize;
                    let k_lo = (-t0).max(0) as usize;
                    let k_hi = k.min((t_in as isize - t0).max(0) as usize);
                    for kk in k_lo..k_hi {
                        let xi = (t0 + kk as isize) as usize * c_in;
                        let dwrow = &mut dwo[kk * c_in..(kk + 1) * c_in];
                        let xrow = &xb[xi..xi + c_in];
                        for i in 0..c_in {
                            dwrow[i] += g * xrow[i];
                        }
                    }
                }
            }
        });

    // input gradient: parallel over batch items
    let mut dx = vec![S::ZERO; batch * t_in * c_in];
    dx.par_chunks_mut(t_in * c_in)
        .enumerate()
        .for_each(|(b, dxb)| {
            for t in 0..t_out {
                let t0 = (t * stride) as isize - pad as isize;
                let k_lo = (-t0).max(0) as usize;
                let k_hi = k.min((t_in as isize - t0).max(0) as usize);
                for o in 0..c_out {
                    let g = dy[b * t_out * c_out + t * c_out + o];
                    if g == S::ZERO {
                        continue;
                    }
                    let wo = &w[o * k * c_in..(o + 1) * k * c_in];
                    for kk in k_lo..k_hi {
                        let xi = (t0 + kk as isize) as usize * c_in;
                        let wrow = &wo[kk * c_in..(kk + 1) * c_in];
                        let drow = &mut dxb[xi..xi + c_in];
                        for i in 0..c_in {
                            drow[i] += g * wrow[i];
                        }
                    }
                }
            }
        });

    (dx, dw, db)
}

pub struct BnCache<S> {
    pub xhat: Vec<S>,
    pub inv_std: Vec<S>,
}

/// Train-mode batch normalization over the batch x time extent of each
/// channel, with population statistics. Updates the running estimates as
/// `running = momentum * running + (1 - momentum) * batch_stat`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train<S: Scalar>(
    x: &[S],
    batch: usize,
    t: usize,
    c: usize,
    gamma: &[S],
    beta: &[S],
    running_mean: &mut [S],
    running_var: &mut [S],
    momentum: f64,
    eps: f64,
) -> (Vec<S>, BnCache<S>) {
    let n = batch * t;
    assert!(n >= 2, "train-mode batchnorm needs at least 2 positions");
    let mut mean = vec![S::ZERO; c];
    for b in 0..batch {
        for ti in 0..t {
            let row = &x[(b * t + ti) * c..(b * t + ti + 1) * c];
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    let inv_n = S::from_f64(1.0 / n as f64);
    for m in mean.iter_mut() {
        *m *= inv_n;
    }
    let mut var = vec![S::ZERO; c];
    for b in 0..batch {
        for ti in 0..t {
            let row = &x[(b * t + ti) * c..(b * t + ti + 1) * c];
            for (ci, &v) in row.iter().enumerate() {
                let d = v - mean[ci];
                var[ci] += d * d;
            }
        }
    }
    for v in var.iter_mut() {
        *v *= inv_n;
    }

    let mom = S::from_f64(momentum);
    let one_minus = S::from_f64(1.0 - momentum);
    for ci in 0..c {
        running_mean[ci] = mom * running_mean[ci] + one_minus * mean[ci];
        running_var[ci] = mom * running_var[ci] + one_minus * var[ci];
    }

    let inv_std: Vec<S> = var
        .iter()
        .map(|&v| S::ONE / (v + S::from_f64(eps)).sqrt())
        .collect();
    let mut y = vec![S::ZERO; x.len()];
    let mut xhat = vec![S::ZERO; x.len()];
    for p in 0..n {
        let base = p * c;
        for ci in 0..c {
            let h = (x[base + ci] - mean[ci]) * inv_std[ci];
            xhat[base + ci] = h;
            y[base + ci] = gamma[ci] * h + beta[ci];
        }
    }
    (y, BnCache { xhat, inv_std })
}

/// Inference-mode batch normalization with running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_infer<S: Scalar>(
    x: &[S],
    c: usize,
    gamma: &[S],
    beta: &[S],
    running_mean: &[S],
    running_var: &[S],
    eps: f64,
) -> Vec<S> {
    let inv_std: Vec<S> = running_var
        .iter()
        .map(|&v| S::ONE / (v + S::from_f64(eps)).sqrt())
        .collect();
    let mut y = vec![S::ZERO; x.len()];
    for (p, row) in x.chunks_exact(c).enumerate() {
        let out = &mut y[p * c..(p + 1) * c];
        for ci in 0..c {
            out[ci] = gamma[ci] * (row[ci] - running_mean[ci]) * inv_std[ci] + beta[ci];
        }
    }
    y
}

/// Backward through train-mode batchnorm, batch-statistics path included:
/// `dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))`.
pub fn batchnorm_backward<S: Scalar>(
    dy: &[S],
    cache: &BnCache<S>,
    c: usize,
    gamma: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let n = dy.len() / c;
    let mut dgamma = vec![S::ZERO; c];
    let mut dbeta = vec![S::ZERO; c];
    let mut sum_dxhat = vec![S::ZERO; c];
    let mut sum_dxhat_xhat = vec![S::ZERO; c];
    for p in 0..n {
        let base = p * c;
        for ci in 0..c {
            let g = dy[base + ci];
            let h = cache.xhat[base + ci];
            dgamma[ci] += g * h;
            dbeta[ci] += g;
            let dxhat = g * gamma[ci];
            sum_dxhat[ci] += dxhat;
            sum_dxhat_xhat[ci] += dxhat * h;
        }
    }
    let inv_n = S::from_f64(1.0 / n as f64);
    let mut dx = vec![S::ZERO; dy.len()];
    for p in 0..n {
        let base = p * c;
        for ci in 0..c {
            let dxhat = dy[base + ci] * gamma[ci];
            dx[base + ci] = cache.inv_std[ci]
                * (dxhat
                    - sum_dxhat[ci] * inv_n
                    - cache.xhat[base + ci] * (sum_dxhat_xhat[ci] * inv_n));
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward<S: Scalar>(x: &mut [S]) {
    for v in x.iter_mut() {
        *v = v.maximum(S::ZERO);
    }
}

/// Backward using the forward output: zero where the activation was zero.
pub fn relu_backward<S: Scalar>(dy: &mut [S], y: &[S]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= S::ZERO {
            *g = S::ZERO;
        }
    }
}

/// Inverted dropout: keep with probability `keep` and scale by `1 / keep`.
/// Returns the mask applied (0 or 1/keep per element). Always draws one
/// uniform per element so the RNG stream does not depend on the data.
pub fn dropout_forward<S: Scalar>(x: &mut [S], keep: f64, rng: &mut ChaCha8Rng) -> Vec<S> {
    debug_assert!(keep > 0.0 && keep <= 1.0);
    let scale = S::from_f64(1.0 / keep);
    let mut mask = vec![S::ZERO; x.len()];
    for (v, m) in x.iter_mut().zip(mask.iter_mut()) {
        if rng.gen::<f64>() < keep {
            *m = scale;
            *v *= scale;
        } else {
            *v = S::ZERO;
        }
    }
    mask
}

pub fn dropout_backward<S: Scalar>(dy: &mut [S], mask: &[S]) {
    for (g, &m) in dy.iter_mut().zip(mask) {
        *g *= m;
    }
}

/// Log-softmax over the last axis of a `[rows, c]` buffer, in place.
pub fn log_softmax<S: Scalar>(x: &mut [S], c: usize) {
    for row in x.chunks_exact_mut(c) {
        let mut hi = row[0];
        for &v in row.iter() {
            hi = hi.maximum(v);
        }
        let mut sum = S::ZERO;
        for &v in row.iter() {
            sum += (v - hi).exp();
        }
        let lse = hi + sum.ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
}

/// Backward through log-softmax: `dx = dy - exp(y) * sum(dy)` per row,
/// where `y` is the forward output.
pub fn log_softmax_backward<S: Scalar>(dy: &mut [S], y: &[S], c: usize) {
    for (drow, yrow) in dy.chunks_exact_mut(c).zip(y.chunks_exact(c)) {
        let total: S = drow.iter().copied().sum();
        for (d, &v) in drow.iter_mut().zip(yrow) {
            *d -= v.exp() * total;
        }
    }
}

/// Zero every frame at or beyond each item's valid length.
pub fn mask_frames<S: Scalar>(x: &mut [S], batch: usize, t: usize, c: usize, lengths: &[usize]) {
    debug_assert_eq!(lengths.len(), batch);
    for (b, &len) in lengths.iter().enumerate() {
        if len < t {
            let start = (b * t + len) * c;
            let end = (b + 1) * t * c;
            x[start..end].iter_mut().for_each(|v| *v = S::ZERO);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_identity_kernel() {
        // K=1, stride=1, w = identity over channels
        let (b, t, c) = (2, 4, 3);
        let x: Vec<f64> = (0..b * t * c).map(|i| i as f64 * 0.1).collect();
        let mut w = vec![0.0; c * 1 * c];
        for o in 0..c {
            w[o * c + o] = 1.0;
        }
        let (y, t_out) = conv1d_forward(&x, b, t, c, &w, &vec![0.0; c], c, 1, 1);
        assert_eq!(t_out, t);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_hand_example() {
        // x = [1,2,3], w = [1,1,1], K=3, stride 1, zero pad -> [3,6,5]
        let x = vec![1.0, 2.0, 3.0];
        let w = vec![1.0, 1.0, 1.0];
        let (y, t_out) = conv1d_forward(&x, 1, 3, 1, &w, &[0.0], 1, 3, 1);
        assert_eq!(t_out, 3);
        assert_eq!(y, vec![3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_stride_output_length() {
        let x = vec![0.0; 5];
        let (_, t_out) = conv1d_forward(&x, 1, 5, 1, &[1.0], &[0.0], 1, 1, 2);
        assert_eq!(t_out, 3);
        for (t_in, stride, expect) in [(6, 2, 3), (7, 3, 3), (9, 3, 3), (10, 3, 4)] {
            let x = vec![0.0; t_in];
            let (_, t_out) = conv1d_forward(&x, 1, t_in, 1, &[1.0], &[0.0], 1, 1, stride);
            assert_eq!(t_out, expect, "t_in={t_in} stride={stride}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (batch, t_in, c_in, c_out, k, stride) = (2usize, 5usize, 3, 4, 3, 2);
        let t_out = t_in.div_ceil(stride);
        let x: Vec<f64> = (0..batch * t_in * c_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..c_out * k * c_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..batch * t_out * c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss = |x: &[f64], w: &[f64], bias: &[f64]| -> f64 {
            let (y, _) = conv1d_forward(x, batch, t_in, c_in, w, bias, c_out, k, stride);
            y.iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let (dx, dw, db) = conv1d_backward(&dy, &x, &w, batch, t_in, c_in, c_out, k, stride);

        let h = 1e-6;
        for idx in [0usize, 7, x.len() - 1] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&xp, &w, &bias) - loss(&xm, &w, &bias)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6, "dx[{idx}]: {fd} vs {}", dx[idx]);
        }
        for idx in [0usize, 5, w.len() - 1] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (loss(&x, &wp, &bias) - loss(&x, &wm, &bias)) / (2.0 * h);
            assert!((fd - dw[idx]).abs() < 1e-6, "dw[{idx}]: {fd} vs {}", dw[idx]);
        }
        for idx in 0..c_out {
            let mut bp = bias.clone();
            bp[idx] += h;
            let mut bm = bias.clone();
            bm[idx] -= h;
            let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
            assert!((fd - db[idx]).abs() < 1e-6, "db[{idx}]: {fd} vs {}", db[idx]);
        }
    }

    #[test]
    fn identity_projection_backward_is_the_identity() {
        // the skip path of a residual block: k=1 conv with identity weights
        // passes gradients through unchanged
        let (b, t, c) = (2usize, 5usize, 4usize);
        let x: Vec<f64> = (0..b * t * c).map(|i| i as f64 * 0.01).collect();
        let mut w = vec![0.0; c * c];
        for o in 0..c {
            w[o * c + o] = 1.0;
        }
        let dy: Vec<f64> = (0..b * t * c).map(|i| (i as f64).sin()).collect();
        let (dx, _, _) = conv1d_backward(&dy, &x, &w, b, t, c, c, 1, 1);
        assert_eq!(dx, dy);
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b, t, c) = (3, 7, 2);
        let x: Vec<f64> = (0..b * t * c).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let gamma = vec![1.0; c];
        let beta = vec![0.0; c];
        let mut rm = vec![0.0; c];
        let mut rv = vec![1.0; c];
        let (y, _) = batchnorm_train(&x, b, t, c, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-5);
        let n = (b * t) as f64;
        for ci in 0..c {
            let mean: f64 = (0..b * t).map(|p| y[p * c + ci]).sum::<f64>() / n;
            let var: f64 = (0..b * t).map(|p| (y[p * c + ci] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3); // eps slightly shrinks it
        }
    }

    #[test]
    fn batchnorm_constant_channel_gives_beta() {
        let (b, t, c) = (2, 3, 1);
        let x = vec![5.0; b * t * c];
        let gamma = vec![2.0];
        let beta = vec![0.25];
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        let (y, _) = batchnorm_train(&x, b, t, c, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-5);
        assert!(y.iter().all(|&v| (v - 0.25f64).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_infer_hand_example() {
        // m=1, v=4, eps=0, x=3, gamma=2, beta=0.5 -> 2.5
        let y = batchnorm_infer(&[3.0], 1, &[2.0], &[0.5], &[1.0], &[4.0], 0.0);
        assert!((y[0] - 2.5f64).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (b, t, c) = (2, 4, 3);
        let x: Vec<f64> = (0..b * t * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let dy: Vec<f64> = (0..b * t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |x: &[f64], gamma: &[f64], beta: &[f64]| -> f64 {
            let mut rm = vec![0.0; c];
            let mut rv = vec![1.0; c];
            let (y, _) = batchnorm_train(x, b, t, c, gamma, beta, &mut rm, &mut rv, 0.9, 1e-5);
            y.iter().zip(&dy).map(|(a, g)| a * g).sum()
        };
        let mut rm = vec![0.0; c];
        let mut rv = vec![1.0; c];
        let (_, cache) = batchnorm_train(&x, b, t, c, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-5);
        let (dx, dgamma, dbeta) = batchnorm_backward(&dy, &cache, c, &gamma);

        let h = 1e-6;
        for idx in [0usize, 5, 11, x.len() - 1] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (run(&xp, &gamma, &beta) - run(&xm, &gamma, &beta)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-5, "dx[{idx}]: {fd} vs {}", dx[idx]);
        }
        for ci in 0..c {
            let mut gp = gamma.clone();
            gp[ci] += h;
            let mut gm = gamma.clone();
            gm[ci] -= h;
            let fd = (run(&x, &gp, &beta) - run(&x, &gm, &beta)) / (2.0 * h);
            assert!((fd - dgamma[ci]).abs() < 1e-5);
            let mut bp = beta.clone();
            bp[ci] += h;
            let mut bm = beta.clone();
            bm[ci] -= h;
            let fd = (run(&x, &gamma, &bp) - run(&x, &gamma, &bm)) / (2.0 * h);
            assert!((fd - dbeta[ci]).abs() < 1e-5);
        }
    }

    #[test]
    fn dropout_scales_and_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = vec![1.0f64; 10_000];
        let mask = dropout_forward(&mut x, 0.8, &mut rng);
        let kept = x.iter().filter(|&&v| v != 0.0).count();
        assert!((kept as f64 / 10_000.0 - 0.8).abs() < 0.02);
        for (&v, &m) in x.iter().zip(&mask) {
            assert!(v == 0.0 || (v - 1.25).abs() < 1e-12);
            assert_eq!(v, m); // x was all ones
        }
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut x = vec![0.3f64, -1.0, 2.0, 0.0, 0.0, 0.0];
        log_softmax(&mut x, 3);
        for row in x.chunks_exact(3) {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_backward_is_identity_on_zero_sum() {
        let mut y = vec![0.2f64, -0.7, 1.1];
        log_softmax(&mut y, 3);
        // upstream grad that sums to zero passes through unchanged
        let mut dy = vec![0.5, -0.3, -0.2];
        let orig = dy.clone();
        log_softmax_backward(&mut dy, &y, 3);
        for (a, b) in dy.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_zeroes_padded_frames() {
        let (b, t, c) = (2, 4, 2);
        let mut x = vec![1.0f32; b * t * c];
        mask_frames(&mut x, b, t, c, &[4, 2]);
        assert!(x[..t * c].iter().all(|&v| v == 1.0));
        let second = &x[t * c..];
        assert!(second[..2 * c].iter().all(|&v| v == 1.0));
        assert!(second[2 * c..].iter().all(|&v| v == 0.0));
    }
}
