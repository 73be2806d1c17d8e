//! Low-level neural-network plumbing: parameter storage, convolution,
//! normalization, pooling, resampling and activations, each with a
//! hand-written backward pass. Everything is generic over [`Real`] so the
//! same code runs in `f32` (training, checkpoints) and `f64` (gradient
//! checks and oracles).

mod conv;
mod norm;
mod params;
mod pool;
mod resample;

pub use conv::{Conv2d, ConvCache};
pub use norm::{Norm2d, NormCache};
pub use params::{GradStore, ParamInit, ParamStore};
pub use pool::{MaxPool2d, PoolCache};
pub use resample::{area_downsample, bilinear_upsample, bilinear_upsample_backward};

use ndarray::Array3;

/// Floating-point element type the whole pipeline is generic over.
pub trait Real: ndarray::NdFloat {}
impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into the active element type.
pub fn real<F: Real>(x: f64) -> F {
    F::from(x).expect("constant representable in element type")
}

/// Elementwise ReLU.
pub fn relu<F: Real>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Backward of [`relu`] given the forward input.
pub fn relu_backward<F: Real>(dy: &Array3<F>, x: &Array3<F>) -> Array3<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;

    #[test]
    fn relu_zeroes_negatives_and_matches_backward_mask() {
        let x = arr3(&[[[-1.0f64, 0.0], [2.0, -0.5]]]);
        let y = relu(&x);
        assert_eq!(y, arr3(&[[[0.0, 0.0], [2.0, 0.0]]]));
        let dy = arr3(&[[[1.0, 1.0], [1.0, 1.0]]]);
        let dx = relu_backward(&dy, &x);
        assert_eq!(dx, arr3(&[[[0.0, 0.0], [1.0, 0.0]]]));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
