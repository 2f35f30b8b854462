//! Joint loss: per-pixel negative log likelihood for the mask and contour
//! heads, squared error for the distance head, combined as a weighted sum.
//!
//! Label buffers are row-major `[N, H, W]` class indices matching the
//! prediction tensors' batch layout. By default every term reduces as a
//! mean over pixels and batch, which keeps the effective learning rate
//! independent of image size; `Reduction::Sum` restores plain summation.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

pub use crate::tensor::Reduction;

/// Scaling factors of the three loss terms.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct LossWeights {
    pub mask: f64,
    pub contour: f64,
    pub distance: f64,
}

impl LossWeights {
    /// All weights must be non-negative and at least one positive.
    pub fn new(mask: f64, contour: f64, distance: f64) -> Result<Self> {
        if mask < 0.0 || contour < 0.0 || distance < 0.0 {
            return Err(Error::arg("loss_weights", "weights must be non-negative"));
        }
        if mask == 0.0 && contour == 0.0 && distance == 0.0 {
            return Err(Error::arg("loss_weights", "at least one weight must be positive"));
        }
        Ok(LossWeights {
            mask,
            contour,
            distance,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mask: 1.0,
            contour: 1.0,
            distance: 1.0,
        }
    }
}

/// Scalar values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub mask_loss: f64,
    pub contour_loss: f64,
    pub distance_loss: f64,
    pub total: f64,
}

/// Classification error of the mask head: mean (or sum) over pixels of
/// -log p(true class). Probabilities are clamped at 1e-12 before the log.
pub fn nll_mask<T: Element>(
    graph: &mut Graph<T>,
    mask_probs: Var,
    labels: &[u8],
    reduction: Reduction,
) -> Result<Var> {
    graph.nll_loss(mask_probs, labels, reduction)
}

/// Identical contract to [`nll_mask`], applied to the contour head.
pub fn nll_contour<T: Element>(
    graph: &mut Graph<T>,
    contour_probs: Var,
    labels: &[u8],
    reduction: Reduction,
) -> Result<Var> {
    graph.nll_loss(contour_probs, labels, reduction)
}

/// Squared error of the distance head against the derived target map.
pub fn mse_distance<T: Element>(
    graph: &mut Graph<T>,
    distance_pred: Var,
    target: &Tensor<T>,
    reduction: Reduction,
) -> Result<Var> {
    graph.mse_loss(distance_pred, target, reduction)
}

/// Per-variant loss terms; absent decoders simply have no term.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub mask: Var,
    pub contour: Option<Var>,
    pub distance: Option<Var>,
}

/// Weighted combination of the present terms. Absent terms contribute zero
/// with their weight ignored. Returns the differentiable total node plus
/// the scalar breakdown for logging.
pub fn total_loss<T: Element>(
    graph: &mut Graph<T>,
    weights: &LossWeights,
    terms: &LossTerms,
) -> Result<(Var, LossBreakdown)> {
    LossWeights::new(weights.mask, weights.contour, weights.distance)?;
    let mut combined = vec![(T::from_f64(weights.mask), terms.mask)];
    if let Some(contour) = terms.contour {
        combined.push((T::from_f64(weights.contour), contour));
    }
    if let Some(distance) = terms.distance {
        combined.push((T::from_f64(weights.distance), distance));
    }
    let total = graph.weighted_sum(&combined)?;
    let scalar = |v: Option<Var>| -> Result<f64> {
        Ok(match v {
            Some(v) => graph.value(v).scalar_value()?.as_f64(),
            None => 0.0,
        })
    };
    let breakdown = LossBreakdown {
        mask_loss: scalar(Some(terms.mask))?,
        contour_loss: scalar(terms.contour)?,
        distance_loss: scalar(terms.distance)?,
        total: graph.value(total).scalar_value()?.as_f64(),
    };
    Ok((total, breakdown))
}
