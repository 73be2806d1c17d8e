//! Central parameter and gradient storage.
//!
//! Every learnable array lives in a [`ParamStore`] keyed by a dotted name
//! (`backbone.block0.conv.w`, …). Layers hold names, not arrays, so the
//! optimizer, checkpoints and gradient checks all iterate one flat map in a
//! stable registration order.

use indexmap::IndexMap;
use ndarray::{ArrayD, ArrayView2, ArrayViewD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{real, Real};

#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    map: IndexMap<String, ArrayD<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            map: IndexMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: ArrayD<F>) {
        let prev = self.map.insert(name.to_string(), value);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &ArrayD<F> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get2(&self, name: &str) -> ArrayView2<'_, F> {
        self.get(name)
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("parameter {name} is not 2-D"))
    }

    pub fn set(&mut self, name: &str, value: ArrayD<F>) {
        let slot = self
            .map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(slot.shape(), value.shape(), "shape change for {name}");
        *slot = value;
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<F>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient accumulator mirroring a [`ParamStore`] by name.
#[derive(Debug, Clone)]
pub struct GradStore<F> {
    map: IndexMap<String, ArrayD<F>>,
}

impl<F: Real> GradStore<F> {
    pub fn new() -> Self {
        Self {
            map: IndexMap::new(),
        }
    }

    /// Adds a contribution for `name`, allocating zeros on first use.
    pub fn accumulate(&mut self, name: &str, grad: ArrayViewD<'_, F>) {
        match self.map.get_mut(name) {
            Some(slot) => {
                assert_eq!(slot.shape(), grad.shape(), "gradient shape for {name}");
                *slot += &grad;
            }
            None => {
                self.map.insert(name.to_string(), grad.to_owned());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.map.get(name)
    }

    pub fn scale(&mut self, factor: F) {
        for grad in self.map.values_mut() {
            grad.mapv_inplace(|g| g * factor);
        }
    }

    /// Merges another accumulator into this one (per-sample grads → batch).
    pub fn merge(&mut self, other: &GradStore<F>) {
        for (name, grad) in &other.map {
            self.accumulate(name, grad.view());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl<F: Real> Default for GradStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic parameter initializer.
///
/// Draws in `f64` in registration order from a seeded ChaCha stream and
/// casts, so a given seed produces the same weights in `f32` and `f64`
/// up to rounding.
pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Small-uniform init in `[-bound, bound]`.
    pub fn uniform<F: Real>(&mut self, shape: &[usize], bound: f64) -> ArrayD<F> {
        ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            real(self.rng.gen_range(-bound..=bound))
        })
    }

    pub fn zeros<F: Real>(&mut self, shape: &[usize]) -> ArrayD<F> {
        ArrayD::zeros(IxDyn(shape))
    }

    pub fn ones<F: Real>(&mut self, shape: &[usize]) -> ArrayD<F> {
        ArrayD::from_elem(IxDyn(shape), F::one())
    }
}
