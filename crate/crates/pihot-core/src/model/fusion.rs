//! Fusion of contact features, attended object features, the relative
//! position gate, and attended depth features into one map.
//!
//! The combination is
//! `x = (x_c + alpha * o_a) * d_s + (x_c + alpha * o_a) + beta * d_a`,
//! evaluated with one shared scalar kernel so independent re-implementations
//! that follow the same operation order agree bit for bit.

use ndarray::{Array2, Array3, Zip};

use crate::config::ModelSettings;
use crate::error::{Error, Result};
use crate::nn::{real, Real};

/// Fusion mixing weights; both small so the contact stream dominates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub alpha: f64,
    pub beta: f64,
}

impl FusionParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() || alpha < 0.0 || beta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "fusion weights must be finite and non-negative, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn from_model(model: &ModelSettings) -> Result<Self> {
        Self::new(model.alpha, model.beta)
    }
}

/// The exact per-element arithmetic, shared by forward and any oracle.
#[inline]
pub fn fuse_scalar<F: Real>(x_c: F, o_a: F, d_s: F, d_a: F, alpha: F, beta: F) -> F {
    let s = x_c + alpha * o_a;
    s * d_s + s + beta * d_a
}

fn check_shapes<F: Real>(
    x_c: &Array3<F>,
    o_a: &Array3<F>,
    d_s: &Array2<F>,
    d_a: &Array3<F>,
) -> Result<()> {
    if o_a.shape() != x_c.shape() || d_a.shape() != x_c.shape() {
        return Err(Error::shape(
            "fusion feature maps",
            format!("{:?}", x_c.shape()),
            format!("o_a {:?}, d_a {:?}", o_a.shape(), d_a.shape()),
        ));
    }
    if [x_c.shape()[1], x_c.shape()[2]] != *d_s.shape() {
        return Err(Error::shape(
            "fusion position map",
            format!("{:?}", &x_c.shape()[1..]),
            format!("{:?}", d_s.shape()),
        ));
    }
    Ok(())
}

/// Fuses per channel, broadcasting the single-channel gate `d_s` over all
/// feature channels.
pub fn cpo_fuse<F: Real>(
    x_c: &Array3<F>,
    o_a: &Array3<F>,
    d_s: &Array2<F>,
    d_a: &Array3<F>,
    params: &FusionParams,
) -> Result<Array3<F>> {
    check_shapes(x_c, o_a, d_s, d_a)?;
    let alpha = real::<F>(params.alpha);
    let beta = real::<F>(params.beta);
    let mut out = Array3::zeros(x_c.raw_dim());
    for c in 0..x_c.shape()[0] {
        Zip::from(out.index_axis_mut(ndarray::Axis(0), c))
            .and(x_c.index_axis(ndarray::Axis(0), c))
            .and(o_a.index_axis(ndarray::Axis(0), c))
            .and(d_a.index_axis(ndarray::Axis(0), c))
            .and(d_s)
            .for_each(|out, &xc, &oa, &da, &ds| {
                *out = fuse_scalar(xc, oa, ds, da, alpha, beta);
            });
    }
    Ok(out)
}

/// Gradients of [`cpo_fuse`] with respect to the three feature inputs. The
/// gate `d_s` is data, not a learned quantity, so no gradient flows to it.
pub fn cpo_fuse_backward<F: Real>(
    dy: &Array3<F>,
    d_s: &Array2<F>,
    params: &FusionParams,
) -> (Array3<F>, Array3<F>, Array3<F>) {
    let alpha = real::<F>(params.alpha);
    let beta = real::<F>(params.beta);
    let mut d_xc = Array3::zeros(dy.raw_dim());
    for c in 0..dy.shape()[0] {
        Zip::from(d_xc.index_axis_mut(ndarray::Axis(0), c))
            .and(dy.index_axis(ndarray::Axis(0), c))
            .and(d_s)
            .for_each(|out, &g, &ds| *out = g * (F::one() + ds));
    }
    let d_oa = d_xc.mapv(|v| v * alpha);
    let d_da = dy.mapv(|v| v * beta);
    (d_xc, d_oa, d_da)
}
