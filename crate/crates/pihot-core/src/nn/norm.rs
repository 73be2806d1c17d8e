//! Per-channel spatial normalization with learnable scale and shift.
//!
//! The pipeline processes one image at a time, so batch normalization
//! degenerates to per-channel statistics over the spatial extent. The same
//! statistics are used in training and inference; there are no running
//! averages to carry around.

use ndarray::{Array3, Axis};

use super::{real, GradStore, ParamInit, ParamStore, Real};

#[derive(Debug, Clone)]
pub struct Norm2d {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
}

#[derive(Debug)]
pub struct NormCache<F> {
    normalized: Array3<F>,
    inv_std: Vec<F>,
}

impl Norm2d {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        init: &mut ParamInit,
        name: impl Into<String>,
        channels: usize,
    ) -> Self {
        let name = name.into();
        store.register(&format!("{name}.gamma"), init.ones(&[channels]));
        store.register(&format!("{name}.beta"), init.zeros(&[channels]));
        Self {
            name,
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &Array3<F>,
    ) -> (Array3<F>, NormCache<F>) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.channels, "norm {} channels", self.name);
        let gamma = store.get(&format!("{}.gamma", self.name));
        let beta = store.get(&format!("{}.beta", self.name));
        let n = real::<F>((h * w) as f64);
        let eps = real::<F>(self.eps);

        let mut normalized = Array3::zeros((c, h, w));
        let mut inv_std = Vec::with_capacity(c);
        let mut y = Array3::zeros((c, h, w));
        for ci in 0..c {
            let plane = x.index_axis(Axis(0), ci);
            let mean = plane.sum() / n;
            let var = plane.mapv(|v| (v - mean) * (v - mean)).sum() / n;
            let istd = F::one() / (var + eps).sqrt();
            inv_std.push(istd);
            let g = gamma[[ci]];
            let b = beta[[ci]];
            let mut norm_plane = normalized.index_axis_mut(Axis(0), ci);
            let mut y_plane = y.index_axis_mut(Axis(0), ci);
            for ((np, yp), &v) in norm_plane.iter_mut().zip(y_plane.iter_mut()).zip(plane) {
                let xhat = (v - mean) * istd;
                *np = xhat;
                *yp = g * xhat + b;
            }
        }
        (y, NormCache { normalized, inv_std })
    }

    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        cache: &NormCache<F>,
        dy: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Array3<F> {
        let (c, h, w) = dy.dim();
        let gamma = store.get(&format!("{}.gamma", self.name));
        let n = real::<F>((h * w) as f64);

        let mut dgamma = Vec::with_capacity(c);
        let mut dbeta = Vec::with_capacity(c);
        let mut dx = Array3::zeros((c, h, w));
        for ci in 0..c {
            let dyp = dy.index_axis(Axis(0), ci);
            let xhat = cache.normalized.index_axis(Axis(0), ci);
            let g = gamma[[ci]];
            let istd = cache.inv_std[ci];

            let sum_dy = dyp.sum();
            let sum_dy_xhat = dyp
                .iter()
                .zip(xhat.iter())
                .fold(F::zero(), |acc, (&d, &xh)| acc + d * xh);
            dbeta.push(sum_dy);
            dgamma.push(sum_dy_xhat);

            let mut dxp = dx.index_axis_mut(Axis(0), ci);
            for ((d, &dyv), &xh) in dxp.iter_mut().zip(dyp.iter()).zip(xhat.iter()) {
                // dx = gamma*istd/n * (n*dy - sum(dy) - xhat*sum(dy*xhat))
                *d = g * istd / n * (n * dyv - sum_dy - xh * sum_dy_xhat);
            }
        }
        grads.accumulate(
            &format!("{}.gamma", self.name),
            ndarray::ArrayView::from(&dgamma).into_dyn(),
        );
        grads.accumulate(
            &format!("{}.beta", self.name),
            ndarray::ArrayView::from(&dbeta).into_dyn(),
        );
        dx
    }
}
