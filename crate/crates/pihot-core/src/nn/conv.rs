//! 2-D convolution over single-image `C×H×W` tensors via im2col + GEMM.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use super::{GradStore, ParamInit, ParamStore, Real};

/// Convolution layer description. Weights live in the [`ParamStore`] under
/// `{name}.w` with shape `(out_channels, in_channels*k*k)` and `{name}.b`
/// with shape `(out_channels,)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct ConvCache<F> {
    cols: Array2<F>,
    in_dim: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        init: &mut ParamInit,
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let name = name.into();
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        store.register(
            &format!("{name}.w"),
            init.uniform(&[out_channels, fan_in], bound),
        );
        store.register(&format!("{name}.b"), init.zeros(&[out_channels]));
        Self {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &Array3<F>,
    ) -> (Array3<F>, ConvCache<F>) {
        let (c_in, h, w) = x.dim();
        assert_eq!(c_in, self.in_channels, "conv {} input channels", self.name);
        let (oh, ow) = self.out_hw(h, w);
        let cols = im2col(x, self.kernel, self.stride, self.pad, oh, ow);
        let weight = store.get2(&format!("{}.w", self.name));
        let bias = store.get(&format!("{}.b", self.name));
        let mut y2 = weight.dot(&cols);
        for (mut row, &b) in y2.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        let y = y2
            .into_shape_with_order((self.out_channels, oh, ow))
            .expect("conv output reshape");
        (
            y,
            ConvCache {
                cols,
                in_dim: (c_in, h, w),
                out_hw: (oh, ow),
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        cache: &ConvCache<F>,
        dy: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Array3<F> {
        let (oh, ow) = cache.out_hw;
        assert_eq!(dy.dim(), (self.out_channels, oh, ow));
        let dy2 = dy
            .view()
            .into_shape_with_order((self.out_channels, oh * ow))
            .expect("conv dy reshape");
        let dw = dy2.dot(&cache.cols.t());
        let db: Array1<F> = dy2.sum_axis(Axis(1));
        grads.accumulate(&format!("{}.w", self.name), dw.view().into_dyn());
        grads.accumulate(&format!("{}.b", self.name), db.view().into_dyn());

        let weight = store.get2(&format!("{}.w", self.name));
        let dcols = weight.t().dot(&dy2);
        col2im(
            dcols.view(),
            cache.in_dim,
            self.kernel,
            self.stride,
            self.pad,
            oh,
            ow,
        )
    }
}

fn im2col<F: Real>(
    x: &Array3<F>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<F> {
    let (c_in, h, w) = x.dim();
    let mut cols = Array2::zeros((c_in * k * k, oh * ow));
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[(row, oy * ow + ox)] = x[(c, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Real>(
    dcols: ArrayView2<'_, F>,
    in_dim: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<F> {
    let (c_in, h, w) = in_dim;
    let mut dx = Array3::zeros((c_in, h, w));
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(c, iy as usize, ix as usize)] =
                            dx[(c, iy as usize, ix as usize)] + dcols[(row, oy * ow + ox)];
                    }
                }
            }
        }
    }
    dx
}
