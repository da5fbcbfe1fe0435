//! CTC loss via the forward-backward algorithm over the blank-interleaved
//! label lattice, entirely in log space.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("logprob buffer of {got} values does not match T={t} x C={c}")]
    ShapeMismatch { got: usize, t: usize, c: usize },
    #[error("label id {0} is the blank or out of range")]
    BadLabel(u32),
    #[error("beam width must be >= 1")]
    ZeroWidth,
}

/// Loss and input gradient for one item. An alignment-infeasible item
/// (more required frames than available) carries an infinite loss and an
/// all-zero gradient so training can skip it.
#[derive(Debug, Clone)]
pub struct CtcLoss {
    pub loss: f64,
    /// `d loss / d logprob`, a T x C row-major matrix.
    pub grad: Vec<f64>,
}

impl CtcLoss {
    pub fn is_feasible(&self) -> bool {
        self.loss.is_finite()
    }
}

#[inline]
fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn logsumexp(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + values.iter().map(|v| (v - hi).exp()).sum::<f64>().ln()
}

/// CTC loss for a single item.
///
/// `logprobs` is a `t x c` row-major matrix of per-frame log distributions
/// (rows are renormalized internally, so the returned gradient is
/// `exp(logprob) - gamma` where `gamma` is the per-frame state posterior).
/// `labels` must not contain `blank`.
pub fn ctc_loss(
    logprobs: &[f64],
    t: usize,
    c: usize,
    labels: &[u32],
    blank: u32,
) -> Result<CtcLoss, CtcError> {
    if logprobs.len() != t * c {
        return Err(CtcError::ShapeMismatch {
            got: logprobs.len(),
            t,
            c,
        });
    }
    for &l in labels {
        if l >= c as u32 || l == blank {
            return Err(CtcError::BadLabel(l));
        }
    }

    // renormalize each frame; a no-op for already-normalized rows
    let mut lp = vec![0f64; t * c];
    for ti in 0..t {
        let row = &logprobs[ti * c..(ti + 1) * c];
        let lse = logsumexp(row);
        for ci in 0..c {
            lp[ti * c + ci] = row[ci] - lse;
        }
    }

    let l = labels.len();
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    if l + repeats > t {
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            grad: vec![0.0; t * c],
        });
    }

    // blank-interleaved lattice: s even -> blank, s odd -> labels[s/2]
    let s_len = 2 * l + 1;
    let sym = |s: usize| -> usize {
        if s % 2 == 0 {
            blank as usize
        } else {
            labels[s / 2] as usize
        }
    };
    let skip_allowed = |s: usize| -> bool { s % 2 == 1 && s >= 2 && labels[s / 2] != labels[s / 2 - 1] };

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t * s_len];
    alpha[0] = lp[blank as usize];
    if s_len > 1 {
        alpha[1] = lp[sym(1)];
    }
    for ti in 1..t {
        for s in 0..s_len {
            let mut acc = alpha[(ti - 1) * s_len + s];
            if s >= 1 {
                acc = logaddexp(acc, alpha[(ti - 1) * s_len + s - 1]);
            }
            if skip_allowed(s) {
                acc = logaddexp(acc, alpha[(ti - 1) * s_len + s - 2]);
            }
            alpha[ti * s_len + s] = acc + lp[ti * c + sym(s)];
        }
    }

    let mut log_p = alpha[(t - 1) * s_len + s_len - 1];
    if s_len > 1 {
        log_p = logaddexp(log_p, alpha[(t - 1) * s_len + s_len - 2]);
    }
    if log_p == f64::NEG_INFINITY {
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            grad: vec![0.0; t * c],
        });
    }

    let mut beta = vec![neg; t * s_len];
    beta[(t - 1) * s_len + s_len - 1] = lp[(t - 1) * c + sym(s_len - 1)];
    if s_len > 1 {
        beta[(t - 1) * s_len + s_len - 2] = lp[(t - 1) * c + sym(s_len - 2)];
    }
    for ti in (0..t - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(ti + 1) * s_len + s];
            if s + 1 < s_len {
                acc = logaddexp(acc, beta[(ti + 1) * s_len + s + 1]);
            }
            // the mirrored skip: s -> s + 2 when the target state allows it
            if s + 2 < s_len && skip_allowed(s + 2) {
                acc = logaddexp(acc, beta[(ti + 1) * s_len + s + 2]);
            }
            beta[ti * s_len + s] = acc + lp[ti * c + sym(s)];
        }
    }

    // gamma(t, c) = sum over states with symbol c of alpha*beta / y, over P
    let mut grad = vec![0f64; t * c];
    for ti in 0..t {
        let mut gamma = vec![neg; c];
        for s in 0..s_len {
            let y = lp[ti * c + sym(s)];
            let joint = alpha[ti * s_len + s] + beta[ti * s_len + s] - y;
            gamma[sym(s)] = logaddexp(gamma[sym(s)], joint);
        }
        for ci in 0..c {
            let g = if gamma[ci] == neg {
                0.0
            } else {
                (gamma[ci] - log_p).exp()
            };
            grad[ti * c + ci] = lp[ti * c + ci].exp() - g;
        }
    }

    Ok(CtcLoss {
        loss: -log_p,
        grad,
    })
}

/// Mean loss over a batch, skipping infeasible items. Returns the mean over
/// feasible items, per-item results, and the number skipped.
pub fn ctc_loss_batch(
    items: &[(&[f64], usize, &[u32])],
    c: usize,
    blank: u32,
) -> Result<(f64, Vec<CtcLoss>, usize), CtcError> {
    let mut results = Vec::with_capacity(items.len());
    let mut total = 0.0;
    let mut feasible = 0usize;
    for &(lp, t, labels) in items {
        let r = ctc_loss(lp, t, c, labels, blank)?;
        if r.is_feasible() {
            total += r.loss;
            feasible += 1;
        }
        results.push(r);
    }
    let mean = if feasible > 0 {
        total / feasible as f64
    } else {
        f64::INFINITY
    };
    Ok((mean, results, items.len() - feasible))
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force path enumeration, the independent reference for the
    //! forward-backward implementation.

    /// Collapse a frame-level path: merge adjacent repeats, drop blanks.
    pub fn collapse(path: &[u32], blank: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut prev = None;
        for &p in path {
            if Some(p) != prev && p != blank {
                out.push(p);
            }
            prev = Some(p);
        }
        out
    }

    /// -log of the summed probability of all paths collapsing to `labels`.
    pub fn enumerate_loss(logprobs: &[f64], t: usize, c: usize, labels: &[u32], blank: u32) -> f64 {
        let mut total = f64::NEG_INFINITY;
        let mut path = vec![0u32; t];
        enumerate_rec(logprobs, t, c, labels, blank, 0, 0.0, &mut path, &mut total);
        -total
    }

    fn enumerate_rec(
        lp: &[f64],
        t: usize,
        c: usize,
        labels: &[u32],
        blank: u32,
        depth: usize,
        acc: f64,
        path: &mut [u32],
        total: &mut f64,
    ) {
        if depth == t {
            if collapse(path, blank) == labels {
                *total = super::logaddexp(*total, acc);
            }
            return;
        }
        for ci in 0..c {
            path[depth] = ci as u32;
            enumerate_rec(
                lp,
                t,
                c,
                labels,
                blank,
                depth + 1,
                acc + lp[depth * c + ci],
                path,
                total,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(t: usize, c: usize) -> Vec<f64> {
        vec![(1.0 / c as f64).ln(); t * c]
    }

    fn random_logprobs<R: Rng>(t: usize, c: usize, rng: &mut R) -> Vec<f64> {
        let mut lp = vec![0f64; t * c];
        for ti in 0..t {
            let row: Vec<f64> = (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let lse = logsumexp(&row);
            for ci in 0..c {
                lp[ti * c + ci] = row[ci] - lse;
            }
        }
        lp
    }

    #[test]
    fn single_frame_single_label() {
        let r = ctc_loss(&uniform(1, 3), 1, 3, &[0], 2).unwrap();
        assert!((r.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_paths() {
        // C=2 with blank=1: paths {aa, a-, -a} collapse to [a], P = 3/4
        let r = ctc_loss(&uniform(2, 2), 2, 2, &[0], 1).unwrap();
        assert!((r.loss - -(0.75f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn repeat_needs_separating_blank() {
        let r = ctc_loss(&uniform(2, 3), 2, 3, &[0, 0], 2).unwrap();
        assert!(r.loss.is_infinite());
        assert!(r.grad.iter().all(|&g| g == 0.0));
        assert!(!r.is_feasible());
    }

    #[test]
    fn empty_labels_is_all_blank_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lp = random_logprobs(4, 3, &mut rng);
        let r = ctc_loss(&lp, 4, 3, &[], 2).unwrap();
        let expected: f64 = -(0..4).map(|t| lp[t * 3 + 2]).sum::<f64>();
        assert!((r.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_blank_in_labels_and_bad_shape() {
        assert!(matches!(
            ctc_loss(&uniform(2, 3), 2, 3, &[2], 2),
            Err(CtcError::BadLabel(2))
        ));
        assert!(matches!(
            ctc_loss(&uniform(2, 3), 3, 3, &[0], 2),
            Err(CtcError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let t = rng.gen_range(1..=5);
            let c = rng.gen_range(2..=4);
            let l = rng.gen_range(0..=3.min(t));
            let blank = c as u32 - 1;
            let labels: Vec<u32> = (0..l).map(|_| rng.gen_range(0..c as u32 - 1)).collect();
            let lp = random_logprobs(t, c, &mut rng);
            let fast = ctc_loss(&lp, t, c, &labels, blank).unwrap();
            let slow = oracle::enumerate_loss(&lp, t, c, &labels, blank);
            if slow.is_infinite() {
                assert!(fast.loss.is_infinite());
            } else {
                assert!(
                    (fast.loss - slow).abs() < 1e-9,
                    "t={t} c={c} labels={labels:?}: {} vs {}",
                    fast.loss,
                    slow
                );
            }
        }
    }

    #[test]
    fn gamma_sums_to_one_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, c) = (6, 4);
        let lp = random_logprobs(t, c, &mut rng);
        let r = ctc_loss(&lp, t, c, &[0, 1, 0], 3).unwrap();
        for ti in 0..t {
            let gamma_sum: f64 = (0..c)
                .map(|ci| lp[ti * c + ci].exp() - r.grad[ti * c + ci])
                .sum();
            assert!(
                (gamma_sum - 1.0).abs() < 1e-5,
                "frame {ti}: gamma sum {gamma_sum}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (t, c) = (5, 4);
        let labels = [1u32, 0];
        let blank = 3;
        let lp = random_logprobs(t, c, &mut rng);
        let r = ctc_loss(&lp, t, c, &labels, blank).unwrap();
        let h = 1e-6;
        for _ in 0..20 {
            let i = rng.gen_range(0..t * c);
            let mut plus = lp.clone();
            plus[i] += h;
            let mut minus = lp.clone();
            minus[i] -= h;
            let fd = (ctc_loss(&plus, t, c, &labels, blank).unwrap().loss
                - ctc_loss(&minus, t, c, &labels, blank).unwrap().loss)
                / (2.0 * h);
            let rel = (fd - r.grad[i]).abs() / fd.abs().max(r.grad[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "coord {i}: fd {fd} vs analytic {}", r.grad[i]);
        }
    }

    #[test]
    fn batch_loss_is_the_mean_and_counts_skips() {
        let lp1 = uniform(1, 3);
        let lp2 = uniform(2, 3);
        let lp3 = uniform(2, 3);
        let items: Vec<(&[f64], usize, &[u32])> = vec![
            (&lp1, 1, &[0u32][..]),
            (&lp2, 2, &[1u32][..]),
            (&lp3, 2, &[0u32, 0][..]), // infeasible
        ];
        let (mean, results, skipped) = ctc_loss_batch(&items, 3, 2).unwrap();
        assert_eq!(skipped, 1);
        let expected = (results[0].loss + results[1].loss) / 2.0;
        assert!((mean - expected).abs() < 1e-12);
    }
}
