//! Resolution changes: bilinear upsampling (with backward) for prediction
//! maps and area-average downsampling for taking the relative-position map
//! to feature resolution.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

use super::{real, Real};

/// Source coordinate and interpolation weights for one output index.
/// Half-pixel-centre convention; coordinates clamp at the borders.
fn lerp_coords(out_i: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = (out_i as f64 + 0.5) * scale - 0.5;
    if src <= 0.0 {
        return (0, 0, 0.0);
    }
    let max = (in_len - 1) as f64;
    if src >= max {
        return (in_len - 1, in_len - 1, 0.0);
    }
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear upsampling of a `C×H×W` tensor to `C×out_h×out_w`.
pub fn bilinear_upsample<F: Real>(x: &Array3<F>, out_h: usize, out_w: usize) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, out_h, out_w));
    for oy in 0..out_h {
        let (y0, y1, wy) = lerp_coords(oy, out_h, h);
        let wy = real::<F>(wy);
        for ox in 0..out_w {
            let (x0, x1, wx) = lerp_coords(ox, out_w, w);
            let wx = real::<F>(wx);
            for ci in 0..c {
                let top = x[(ci, y0, x0)] * (F::one() - wx) + x[(ci, y0, x1)] * wx;
                let bot = x[(ci, y1, x0)] * (F::one() - wx) + x[(ci, y1, x1)] * wx;
                y[(ci, oy, ox)] = top * (F::one() - wy) + bot * wy;
            }
        }
    }
    y
}

/// Backward of [`bilinear_upsample`]: scatters output gradients back through
/// the interpolation weights.
pub fn bilinear_upsample_backward<F: Real>(dy: &Array3<F>, in_h: usize, in_w: usize) -> Array3<F> {
    let (c, out_h, out_w) = dy.dim();
    let mut dx = Array3::zeros((c, in_h, in_w));
    for oy in 0..out_h {
        let (y0, y1, wy) = lerp_coords(oy, out_h, in_h);
        let wy = real::<F>(wy);
        for ox in 0..out_w {
            let (x0, x1, wx) = lerp_coords(ox, out_w, in_w);
            let wx = real::<F>(wx);
            for ci in 0..c {
                let d = dy[(ci, oy, ox)];
                dx[(ci, y0, x0)] = dx[(ci, y0, x0)] + d * (F::one() - wy) * (F::one() - wx);
                dx[(ci, y0, x1)] = dx[(ci, y0, x1)] + d * (F::one() - wy) * wx;
                dx[(ci, y1, x0)] = dx[(ci, y1, x0)] + d * wy * (F::one() - wx);
                dx[(ci, y1, x1)] = dx[(ci, y1, x1)] + d * wy * wx;
            }
        }
    }
    dx
}

/// Downsamples a map by averaging non-overlapping `factor×factor` blocks.
/// Both dimensions must be divisible by `factor`.
pub fn area_downsample<F: Real>(x: &Array2<F>, factor: usize) -> Result<Array2<F>> {
    let (h, w) = x.dim();
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "area_downsample",
            format!("dimensions divisible by {factor}"),
            format!("{h}x{w}"),
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = F::one() / real::<F>((factor * factor) as f64);
    let mut y = Array2::zeros((oh, ow));
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = F::zero();
            for dy in 0..factor {
                for dx in 0..factor {
                    acc = acc + x[(oy * factor + dy, ox * factor + dx)];
                }
            }
            y[(oy, ox)] = acc * inv;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upsample_of_constant_is_constant() {
        let x = Array3::from_elem((2, 3, 3), 0.7f64);
        let y = bilinear_upsample(&x, 9, 12);
        assert_eq!(y.dim(), (2, 9, 12));
        assert!(y.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn upsample_backward_is_adjoint_of_forward() {
        // <Ax, y> == <x, A^T y> for random x, y
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array3::from_shape_simple_fn((2, 4, 5), || rng.gen_range(-1.0..1.0));
        let y = Array3::from_shape_simple_fn((2, 8, 10), || rng.gen_range(-1.0..1.0));
        let ax = bilinear_upsample(&x, 8, 10);
        let aty = bilinear_upsample_backward(&y, 4, 5);
        let lhs: f64 = (&ax * &y).sum();
        let rhs = (&x * &aty).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn area_downsample_averages_blocks() {
        let x = arr2(&[
            [1.0f64, 3.0, 0.0, 0.0],
            [5.0, 7.0, 0.0, 4.0],
            [2.0, 2.0, 8.0, 8.0],
            [2.0, 2.0, 8.0, 8.0],
        ]);
        let y = area_downsample(&x, 2).unwrap();
        assert_eq!(y, arr2(&[[4.0, 1.0], [2.0, 8.0]]));
    }

    #[test]
    fn area_downsample_rejects_indivisible() {
        let x = Array2::<f64>::zeros((5, 4));
        assert!(area_downsample(&x, 2).is_err());
    }
}
