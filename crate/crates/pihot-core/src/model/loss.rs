//! Class-weighted binary cross-entropy over per-class contact maps.
//!
//! The target label map is expanded one-hot (channel 0 = no contact), each
//! channel contributes an independent BCE term, and channel 0 carries a
//! reduced weight so the dominant no-contact area does not drown out the
//! rare contact classes.

use ndarray::Array3;

use crate::config::{LossSettings, Reduction};
use crate::error::{Error, Result};
use crate::metrics::ContactLabelMap;
use crate::nn::{real, Real};

use super::head::PROB_FLOOR;
use super::PredictionMap;

/// Weighting and reduction choices for [`hot_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the no-contact channel when `class_weights` is not given.
    pub background_weight: f64,
    /// Full per-class weight vector; overrides `background_weight`.
    pub class_weights: Option<Vec<f64>>,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            background_weight: 0.2,
            class_weights: None,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn from_settings(settings: &LossSettings) -> Self {
        Self {
            background_weight: settings.background_weight,
            class_weights: None,
            reduction: settings.reduction,
        }
    }

    /// Resolves the effective per-class weights for `num_classes` channels.
    fn weights(&self, num_classes: usize) -> Result<Vec<f64>> {
        let weights = match &self.class_weights {
            Some(w) => {
                if w.len() != num_classes {
                    return Err(Error::InvalidArgument(format!(
                        "class_weights has {} entries for {} classes",
                        w.len(),
                        num_classes
                    )));
                }
                w.clone()
            }
            None => {
                let mut w = vec![1.0; num_classes];
                w[0] = self.background_weight;
                w
            }
        };
        for (k, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "class weight {w} for class {k} must be finite and positive"
                )));
            }
        }
        Ok(weights)
    }
}

fn check_target<F: Real>(pred: &PredictionMap<F>, target: &ContactLabelMap) -> Result<()> {
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::shape(
            "loss target",
            format!("{}x{}", pred.height(), pred.width()),
            format!("{}x{}", target.height(), target.width()),
        ));
    }
    Ok(())
}

/// Weighted multi-channel BCE between predicted contact probabilities and a
/// label map. `mean` reduction averages over pixels (not channels), so the
/// per-pixel cost keeps its natural scale of one BCE term per class.
pub fn hot_loss<F: Real>(
    pred: &PredictionMap<F>,
    target: &ContactLabelMap,
    cfg: &LossConfig,
) -> Result<F> {
    let (loss, _) = loss_impl(pred, target, cfg, false)?;
    Ok(loss)
}

/// Loss plus its gradient with respect to every predicted probability.
pub fn hot_loss_with_grad<F: Real>(
    pred: &PredictionMap<F>,
    target: &ContactLabelMap,
    cfg: &LossConfig,
) -> Result<(F, Array3<F>)> {
    let (loss, grad) = loss_impl(pred, target, cfg, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn loss_impl<F: Real>(
    pred: &PredictionMap<F>,
    target: &ContactLabelMap,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(F, Option<Array3<F>>)> {
    check_target(pred, target)?;
    let num_classes = pred.num_classes();
    let weights: Vec<F> = cfg
        .weights(num_classes)?
        .into_iter()
        .map(real::<F>)
        .collect();
    let (h, w) = (pred.height(), pred.width());
    let lo = real::<F>(PROB_FLOOR);
    let hi = F::one() - lo;
    let data = pred.data();
    let mut total = F::zero();
    let mut grad = if want_grad {
        Some(Array3::<F>::zeros(data.raw_dim()))
    } else {
        None
    };
    let scale = match cfg.reduction {
        Reduction::Mean => F::one() / real::<F>((h * w) as f64),
        Reduction::Sum => F::one(),
    };
    for i in 0..h {
        for j in 0..w {
            let label = target.get(i, j) as usize;
            if label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {label} at ({i},{j}) out of range for {num_classes} classes"
                )));
            }
            for (k, &weight) in weights.iter().enumerate() {
                let p_raw = data[[k, i, j]];
                let p = p_raw.max(lo).min(hi);
                if k == label {
                    total = total - weight * p.ln();
                } else {
                    total = total - weight * (F::one() - p).ln();
                }
                if let Some(g) = grad.as_mut() {
                    // Flat outside the clamp window; the head also zeroes
                    // saturated cells, so the two stages agree.
                    let d = if p_raw < lo || p_raw > hi {
                        F::zero()
                    } else if k == label {
                        -weight / p
                    } else {
                        weight / (F::one() - p)
                    };
                    g[[k, i, j]] = d * scale;
                }
            }
        }
    }
    Ok((total * scale, grad))
}
