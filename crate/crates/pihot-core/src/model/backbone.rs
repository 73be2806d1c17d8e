//! Shared-weight feature extractors.
//!
//! Both images in a pair (original and human-free) pass through the *same*
//! backbone object, so weight sharing is structural rather than a copy that
//! could drift. Two variants are provided: a small stack of stride-2 blocks
//! for fast experiments, and a bottleneck-residual stack matching the classic
//! 50-layer layout for full-scale runs.

use ndarray::Array3;

use crate::config::{Backbone as BackboneKind, ModelSettings};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Conv2d, ConvCache, GradStore, MaxPool2d, Norm2d, NormCache,
                ParamInit, ParamStore, PoolCache, Real};

/// Convolution + per-channel normalization + ReLU, the unit both backbones
/// and the prediction heads are assembled from.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv: Conv2d,
    norm: Norm2d,
}

#[derive(Debug)]
pub struct ConvBlockCache<F> {
    conv: ConvCache<F>,
    norm: NormCache<F>,
    /// Normalized pre-activation, kept for the ReLU derivative.
    pre_relu: Array3<F>,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        init: &mut ParamInit,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let conv = Conv2d::new(
            store,
            init,
            format!("{name}.conv"),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        );
        let norm = Norm2d::new(store, init, format!("{name}.norm"), out_channels);
        Self { conv, norm }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        self.conv.out_hw(h, w)
    }

    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &Array3<F>,
    ) -> (Array3<F>, ConvBlockCache<F>) {
        let (y, conv) = self.conv.forward(store, x);
        let (n, norm) = self.norm.forward(store, &y);
        let out = relu(&n);
        (
            out,
            ConvBlockCache {
                conv,
                norm,
                pre_relu: n,
            },
        )
    }

    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        cache: &ConvBlockCache<F>,
        dy: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Array3<F> {
        let dn = relu_backward(dy, &cache.pre_relu);
        let dc = self.norm.backward(store, &cache.norm, &dn, grads);
        self.conv.backward(store, &cache.conv, &dc, grads)
    }
}

/// Three-convolution residual unit (1x1 reduce, 3x3, 1x1 expand) with an
/// optional projection shortcut when the shape changes.
#[derive(Debug, Clone)]
struct Bottleneck {
    block1: ConvBlock,
    block2: ConvBlock,
    conv3: Conv2d,
    norm3: Norm2d,
    shortcut: Option<(Conv2d, Norm2d)>,
}

#[derive(Debug)]
pub struct BottleneckCache<F> {
    block1: ConvBlockCache<F>,
    block2: ConvBlockCache<F>,
    conv3: ConvCache<F>,
    norm3: NormCache<F>,
    shortcut: Option<(ConvCache<F>, NormCache<F>)>,
    /// Residual sum before the final ReLU.
    pre_relu: Array3<F>,
}

impl Bottleneck {
    fn new<F: Real>(
        store: &mut ParamStore<F>,
        init: &mut ParamInit,
        name: &str,
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Self {
        let block1 = ConvBlock::new(store, init, &format!("{name}.a"), in_channels, mid_channels, 1, 1, 0);
        let block2 = ConvBlock::new(
            store,
            init,
            &format!("{name}.b"),
            mid_channels,
            mid_channels,
            3,
            stride,
            1,
        );
        let conv3 = Conv2d::new(
            store,
            init,
            format!("{name}.c.conv"),
            mid_channels,
            out_channels,
            1,
            1,
            0,
        );
        let norm3 = Norm2d::new(store, init, format!("{name}.c.norm"), out_channels);
        let shortcut = if stride != 1 || in_channels != out_channels {
            let conv = Conv2d::new(
                store,
                init,
                format!("{name}.sc.conv"),
                in_channels,
                out_channels,
                1,
                stride,
                0,
            );
            let norm = Norm2d::new(store, init, format!("{name}.sc.norm"), out_channels);
            Some((conv, norm))
        } else {
            None
        };
        Self {
            block1,
            block2,
            conv3,
            norm3,
            shortcut,
        }
    }

    fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &Array3<F>,
    ) -> (Array3<F>, BottleneckCache<F>) {
        let (r1, c1) = self.block1.forward(store, x);
        let (r2, c2) = self.block2.forward(store, &r1);
        let (y3, c3) = self.conv3.forward(store, &r2);
        let (n3, cn3) = self.norm3.forward(store, &y3);
        let (residual, sc_cache) = match &self.shortcut {
            Some((conv, norm)) => {
                let (ys, cs) = conv.forward(store, x);
                let (ns, cns) = norm.forward(store, &ys);
                (ns, Some((cs, cns)))
            }
            None => (x.clone(), None),
        };
        let pre_relu = &n3 + &residual;
        let out = relu(&pre_relu);
        (
            out,
            BottleneckCache {
                block1: c1,
                block2: c2,
                conv3: c3,
                norm3: cn3,
                shortcut: sc_cache,
                pre_relu,
            },
        )
    }

    fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        cache: &BottleneckCache<F>,
        dy: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Array3<F> {
        let d_sum = relu_backward(dy, &cache.pre_relu);
        let dn3 = self.norm3.backward(store, &cache.norm3, &d_sum, grads);
        let dr2 = self.conv3.backward(store, &cache.conv3, &dn3, grads);
        let dr1 = self.block2.backward(store, &cache.block2, &dr2, grads);
        let mut dx = self.block1.backward(store, &cache.block1, &dr1, grads);
        match (&self.shortcut, &cache.shortcut) {
            (Some((conv, norm)), Some((cs, cns))) => {
                let dns = norm.backward(store, cns, &d_sum, grads);
                dx = dx + conv.backward(store, cs, &dns, grads);
            }
            (None, None) => dx = dx + &d_sum,
            _ => unreachable!("shortcut cache shape follows the layer"),
        }
        dx
    }
}

#[derive(Debug, Clone)]
enum Net {
    /// log2(downsample) stride-2 blocks (or one stride-1 block at factor 1).
    Tiny(Vec<ConvBlock>),
    /// 7x7 stem, 3x3 max pool, then bottleneck stages [3, 4, 6, 3].
    Residual {
        stem: ConvBlock,
        pool: MaxPool2d,
        stages: Vec<Bottleneck>,
    },
}

pub enum BackboneCache<F> {
    Tiny(Vec<ConvBlockCache<F>>),
    Residual {
        stem: ConvBlockCache<F>,
        pool: PoolCache,
        pooled_shape: (usize, usize, usize),
        stages: Vec<BottleneckCache<F>>,
    },
}

/// Image-to-feature-map encoder with a fixed spatial stride.
#[derive(Debug)]
pub struct Backbone {
    net: Net,
    out_channels: usize,
    downsample: usize,
}

/// Feature width and stride implied by the bottleneck-residual layout.
pub const RESIDUAL_CHANNELS: usize = 2048;
pub const RESIDUAL_DOWNSAMPLE: usize = 32;

impl Backbone {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        init: &mut ParamInit,
        model: &ModelSettings,
    ) -> Result<Self> {
        match model.backbone {
            BackboneKind::Tiny => {
                let levels = model.downsample.trailing_zeros() as usize;
                let mut blocks = Vec::new();
                if model.downsample == 1 {
                    blocks.push(ConvBlock::new(
                        store,
                        init,
                        "backbone.block0",
                        3,
                        model.out_channels,
                        3,
                        1,
                        1,
                    ));
                } else {
                    for level in 0..levels {
                        let in_c = if level == 0 { 3 } else { model.out_channels };
                        blocks.push(ConvBlock::new(
                            store,
                            init,
                            &format!("backbone.block{level}"),
                            in_c,
                            model.out_channels,
                            3,
                            2,
                            1,
                        ));
                    }
                }
                Ok(Self {
                    net: Net::Tiny(blocks),
                    out_channels: model.out_channels,
                    downsample: model.downsample,
                })
            }
            BackboneKind::Resnet50 => {
                if model.out_channels != RESIDUAL_CHANNELS {
                    return Err(Error::Config(format!(
                        "backbone resnet50 produces {RESIDUAL_CHANNELS} channels; \
                         model.out_channels is {}",
                        model.out_channels
                    )));
                }
                if model.downsample != RESIDUAL_DOWNSAMPLE {
                    return Err(Error::Config(format!(
                        "backbone resnet50 has stride {RESIDUAL_DOWNSAMPLE}; \
                         model.downsample is {}",
                        model.downsample
                    )));
                }
                let stem = ConvBlock::new(store, init, "backbone.stem", 3, 64, 7, 2, 3);
                let pool = MaxPool2d::new(3, 2, 1);
                let mut stages = Vec::new();
                let plan: [(usize, usize, usize, usize); 4] = [
                    (3, 64, 256, 1),
                    (4, 128, 512, 2),
                    (6, 256, 1024, 2),
                    (3, 512, 2048, 2),
                ];
                let mut in_c = 64;
                for (stage_idx, (depth, mid, out, stride)) in plan.into_iter().enumerate() {
                    for unit in 0..depth {
                        let s = if unit == 0 { stride } else { 1 };
                        stages.push(Bottleneck::new(
                            store,
                            init,
                            &format!("backbone.stage{stage_idx}.unit{unit}"),
                            in_c,
                            mid,
                            out,
                            s,
                        ));
                        in_c = out;
                    }
                }
                Ok(Self {
                    net: Net::Residual { stem, pool, stages },
                    out_channels: RESIDUAL_CHANNELS,
                    downsample: RESIDUAL_DOWNSAMPLE,
                })
            }
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn downsample(&self) -> usize {
        self.downsample
    }

    /// Maps an RGB image `(3, H, W)` to features `(C, H/f, W/f)`.
    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        image: &Array3<F>,
    ) -> (Array3<F>, BackboneCache<F>) {
        match &self.net {
            Net::Tiny(blocks) => {
                let mut x = image.clone();
                let mut caches = Vec::with_capacity(blocks.len());
                for block in blocks {
                    let (y, cache) = block.forward(store, &x);
                    caches.push(cache);
                    x = y;
                }
                (x, BackboneCache::Tiny(caches))
            }
            Net::Residual { stem, pool, stages } => {
                let (s, stem_cache) = stem.forward(store, image);
                let (p, pool_cache) = pool.forward(&s);
                let pooled_shape = (p.shape()[0], p.shape()[1], p.shape()[2]);
                let mut x = p;
                let mut caches = Vec::with_capacity(stages.len());
                for stage in stages {
                    let (y, cache) = stage.forward(store, &x);
                    caches.push(cache);
                    x = y;
                }
                (
                    x,
                    BackboneCache::Residual {
                        stem: stem_cache,
                        pool: pool_cache,
                        pooled_shape,
                        stages: caches,
                    },
                )
            }
        }
    }

    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        cache: &BackboneCache<F>,
        dy: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Array3<F> {
        match (&self.net, cache) {
            (Net::Tiny(blocks), BackboneCache::Tiny(caches)) => {
                let mut d = dy.clone();
                for (block, cache) in blocks.iter().zip(caches).rev() {
                    d = block.backward(store, cache, &d, grads);
                }
                d
            }
            (
                Net::Residual { stem, pool, stages },
                BackboneCache::Residual {
                    stem: stem_cache,
                    pool: pool_cache,
                    pooled_shape,
                    stages: stage_caches,
                },
            ) => {
                let mut d = dy.clone();
                for (stage, cache) in stages.iter().zip(stage_caches).rev() {
                    d = stage.backward(store, cache, &d, grads);
                }
                debug_assert_eq!(
                    d.shape(),
                    [pooled_shape.0, pooled_shape.1, pooled_shape.2]
                );
                let ds = pool.backward(pool_cache, &d);
                stem.backward(store, stem_cache, &ds, grads)
            }
            _ => unreachable!("cache variant follows the network variant"),
        }
    }
}
