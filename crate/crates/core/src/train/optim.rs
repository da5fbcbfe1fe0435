//! Layer-wise adaptive rate clipping and SGD with momentum.

use crate::net::{Scalar, Tensor};

pub const LARC_EPS: f64 = 1e-8;

/// Per-tensor gradient rescale factor in `(0, 1]`:
/// `min(1, eta * (|w| + eps) / (lr * (|g| + eps)))`. A scale of 1 leaves
/// the update unchanged; clipping never amplifies.
pub fn larc_scale(w_norm: f64, g_norm: f64, lr: f64, eta: f64) -> f64 {
    debug_assert!(lr > 0.0 && eta > 0.0);
    (eta * (w_norm + LARC_EPS) / (lr * (g_norm + LARC_EPS))).min(1.0)
}

/// Global multiplier on a layer's local dropout keep probability, clamped
/// below at 0.05 so no layer degenerates.
pub fn effective_keep(local_keep: f64, keep_factor: f64) -> f64 {
    debug_assert!(local_keep > 0.0 && local_keep <= 1.0);
    debug_assert!(keep_factor > 0.0 && keep_factor <= 1.0);
    (local_keep * keep_factor).max(0.05)
}

/// One momentum step over a parameter list: `v <- momentum * v + g`,
/// `p <- p - lr * v`. Shapes must line up pairwise.
pub fn sgd_momentum_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[Tensor<S>],
    velocity: &mut [Tensor<S>],
    lr: f64,
    momentum: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), velocity.len());
    let lr_s = S::from_f64(lr);
    let mom = S::from_f64(momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        assert_eq!(p.shape(), g.shape(), "parameter/gradient shape mismatch");
        assert_eq!(p.shape(), v.shape(), "parameter/velocity shape mismatch");
        for ((pv, &gv), vv) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
            *vv = mom * *vv + gv;
            *pv -= lr_s * *vv;
        }
    }
}
