//! Adam optimizer with first/second-moment state that survives checkpoints.
//!
//! Moment tensors are allocated lazily per parameter the first time it
//! receives a gradient, and can be exported/imported by name so a resumed
//! run continues the exact update sequence of an uninterrupted one.

use indexmap::IndexMap;
use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::nn::{real, GradStore, ParamStore, Real};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

pub struct Adam<F> {
    lr: f64,
    step: u64,
    m: IndexMap<String, ArrayD<F>>,
    v: IndexMap<String, ArrayD<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64) -> Self {
        assert!(lr.is_finite() && lr > 0.0, "learning rate must be positive");
        Self {
            lr,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One update over every parameter that received a gradient. Parameters
    /// without gradients (disabled branches) are left untouched.
    pub fn apply(&mut self, params: &mut ParamStore<F>, grads: &GradStore<F>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = real::<F>(1.0 - BETA1.powi(t));
        let bc2 = real::<F>(1.0 - BETA2.powi(t));
        let lr = real::<F>(self.lr);
        let b1 = real::<F>(BETA1);
        let b2 = real::<F>(BETA2);
        let one_m_b1 = F::one() - b1;
        let one_m_b2 = F::one() - b2;
        let eps = real::<F>(EPS);
        for (name, grad) in grads.iter() {
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            ndarray::Zip::from(&mut *m).and(grad).for_each(|m, &g| {
                *m = b1 * *m + one_m_b1 * g;
            });
            ndarray::Zip::from(&mut *v).and(grad).for_each(|v, &g| {
                *v = b2 * *v + one_m_b2 * g * g;
            });
            let mut value = params.get(name).clone();
            ndarray::Zip::from(&mut value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                });
            params.set(name, value);
        }
    }

    /// Moment tensors under stable `adam.m.` / `adam.v.` names, in a fixed
    /// order, for embedding into a checkpoint.
    pub fn state(&self) -> Vec<(String, &ArrayD<F>)> {
        let mut out = Vec::with_capacity(self.m.len() + self.v.len());
        for (name, arr) in &self.m {
            out.push((format!("{M_PREFIX}{name}"), arr));
        }
        for (name, arr) in &self.v {
            out.push((format!("{V_PREFIX}{name}"), arr));
        }
        out
    }

    /// Restores moments exported by [`Adam::state`] plus the step counter.
    pub fn restore(
        &mut self,
        step: u64,
        entries: impl IntoIterator<Item = (String, ArrayD<F>)>,
    ) -> Result<()> {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (name, value) in entries {
            if let Some(rest) = name.strip_prefix(M_PREFIX) {
                self.m.insert(rest.to_string(), value);
            } else if let Some(rest) = name.strip_prefix(V_PREFIX) {
                self.v.insert(rest.to_string(), value);
            } else {
                return Err(Error::Checkpoint(format!(
                    "unrecognized optimizer tensor {name}"
                )));
            }
        }
        Ok(())
    }

    /// True when `name` is an optimizer tensor rather than a parameter.
    pub fn owns(name: &str) -> bool {
        name.starts_with(M_PREFIX) || name.starts_with(V_PREFIX)
    }
}
