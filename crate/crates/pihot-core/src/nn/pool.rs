//! Max pooling (used by the resnet-shaped backbone stem).

use ndarray::Array3;

use super::Real;

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct PoolCache {
    /// Flat input index of the winning element per output site.
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn forward<F: Real>(&self, x: &Array3<F>) -> (Array3<F>, PoolCache) {
        let (c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let mut y = Array3::zeros((c, oh, ow));
        let mut argmax = vec![0usize; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0usize;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let v = x[(ci, iy as usize, ix as usize)];
                            if v > best {
                                best = v;
                                best_idx = (ci * h + iy as usize) * w + ix as usize;
                            }
                        }
                    }
                    y[(ci, oy, ox)] = best;
                    argmax[(ci * oh + oy) * ow + ox] = best_idx;
                }
            }
        }
        (
            y,
            PoolCache {
                argmax,
                in_dim: (c, h, w),
                out_hw: (oh, ow),
            },
        )
    }

    pub fn backward<F: Real>(&self, cache: &PoolCache, dy: &Array3<F>) -> Array3<F> {
        let (c, h, w) = cache.in_dim;
        let (oh, ow) = cache.out_hw;
        assert_eq!(dy.dim(), (c, oh, ow));
        let mut dx = Array3::zeros((c, h, w));
        let dx_flat = dx.as_slice_mut().expect("contiguous");
        for (o, &src) in cache.argmax.iter().enumerate() {
            let ci = o / (oh * ow);
            let rem = o % (oh * ow);
            dx_flat[src] = dx_flat[src] + dy[(ci, rem / ow, rem % ow)];
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;

    #[test]
    fn picks_window_maximum() {
        let x = arr3(&[[
            [1.0f64, 2.0, 3.0, 4.0],
            [5.0, 6.0, 7.0, 8.0],
            [9.0, 10.0, 11.0, 12.0],
            [13.0, 14.0, 15.0, 16.0],
        ]]);
        let pool = MaxPool2d::new(2, 2, 0);
        let (y, _) = pool.forward(&x);
        assert_eq!(y, arr3(&[[[6.0, 8.0], [14.0, 16.0]]]));
    }

    #[test]
    fn backward_routes_gradient_to_argmax() {
        let x = arr3(&[[[1.0f64, 2.0], [4.0, 3.0]]]);
        let pool = MaxPool2d::new(2, 2, 0);
        let (_, cache) = pool.forward(&x);
        let dy = arr3(&[[[5.0f64]]]);
        let dx = pool.backward(&cache, &dy);
        assert_eq!(dx, arr3(&[[[0.0, 0.0], [5.0, 0.0]]]));
    }
}
