//! Per-class contact probability head.
//!
//! Three pointwise conv+norm+ReLU blocks refine the fused features, a final
//! pointwise convolution produces one logit channel per class, and the logit
//! maps are upsampled bilinearly to input resolution *before* the sigmoid so
//! probabilities are interpolated consistently with the loss they feed.

use ndarray::Array3;

use crate::nn::{bilinear_upsample, bilinear_upsample_backward, real, sigmoid, Conv2d, ConvCache,
                GradStore, ParamInit, ParamStore, Real};

use super::backbone::{ConvBlock, ConvBlockCache};

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` so the
/// cross-entropy stays finite for saturated predictions.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct SegmentHead {
    blocks: Vec<ConvBlock>,
    final_conv: Conv2d,
}

pub struct HeadCache<F> {
    blocks: Vec<ConvBlockCache<F>>,
    final_conv: ConvCache<F>,
    feature_hw: (usize, usize),
    /// Sigmoid outputs before clamping, for the derivative and clamp mask.
    raw_probs: Array3<F>,
}

impl SegmentHead {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        init: &mut ParamInit,
        in_channels: usize,
        num_classes: usize,
    ) -> Self {
        let blocks = (0..3)
            .map(|i| {
                ConvBlock::new(
                    store,
                    init,
                    &format!("head.block{i}"),
                    in_channels,
                    in_channels,
                    1,
                    1,
                    0,
                )
            })
            .collect();
        let final_conv = Conv2d::new(store, init, "head.final", in_channels, num_classes, 1, 1, 0);
        Self { blocks, final_conv }
    }

    /// Maps fused features `(C, H/f, W/f)` to clamped per-class contact
    /// probabilities `(num_classes, out_h, out_w)`.
    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &Array3<F>,
        out_h: usize,
        out_w: usize,
    ) -> (Array3<F>, HeadCache<F>) {
        let mut cur = x.clone();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(store, &cur);
            block_caches.push(cache);
            cur = y;
        }
        let (logits, final_cache) = self.final_conv.forward(store, &cur);
        let feature_hw = (logits.shape()[1], logits.shape()[2]);
        let up = bilinear_upsample(&logits, out_h, out_w);
        let raw_probs = up.mapv(sigmoid);
        let lo = real::<F>(PROB_FLOOR);
        let hi = F::one() - lo;
        let probs = raw_probs.mapv(|p| p.max(lo).min(hi));
        (
            probs,
            HeadCache {
                blocks: block_caches,
                final_conv: final_cache,
                feature_hw,
                raw_probs,
            },
        )
    }

    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        cache: &HeadCache<F>,
        d_probs: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Array3<F> {
        let lo = real::<F>(PROB_FLOOR);
        let hi = F::one() - lo;
        // Clamped cells are flat, then the sigmoid contributes p * (1 - p).
        let mut d_up = d_probs.clone();
        ndarray::Zip::from(&mut d_up)
            .and(&cache.raw_probs)
            .for_each(|g, &p| {
                *g = if p > lo && p < hi {
                    *g * p * (F::one() - p)
                } else {
                    F::zero()
                };
            });
        let d_logits = bilinear_upsample_backward(&d_up, cache.feature_hw.0, cache.feature_hw.1);
        let mut d = self
            .final_conv
            .backward(store, &cache.final_conv, &d_logits, grads);
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = block.backward(store, bc, &d, grads);
        }
        d
    }
}
