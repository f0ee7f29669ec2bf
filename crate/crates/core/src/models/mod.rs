//! Target models with a feature tap, the loss-prediction head, and the
//! differentiable sorter network.

mod lpm;
mod sorter;
mod target;

pub use lpm::{LossPredictor, DEFAULT_HIDDEN as DEFAULT_LPM_HIDDEN};
pub use sorter::{Sorter, SorterConfig, SorterMeta, DEFAULT_HIDDEN as DEFAULT_SORTER_HIDDEN};
pub use target::{per_sample_losses, TargetModel, TargetModelConfig, LEAKY_ALPHA};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Regression,
}

/// Ground-truth labels for one batch.
#[derive(Clone, Debug)]
pub enum LabelBatch {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl LabelBatch {
    pub fn len(&self) -> usize {
        match self {
            LabelBatch::Classes(v) => v.len(),
            LabelBatch::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inference output for a batch of d samples: predictions, detached tapped
/// features, and (when labels were available) per-sample ground-truth losses.
#[derive(Clone, Debug)]
pub struct PredictionBatch {
    pub indices: Vec<usize>,
    /// [d, classes] posterior probabilities or [d, 1] regression values.
    pub predictions: Tensor,
    /// Tapped features, detached: [d, f] flat or [d, c, h, w] spatial.
    pub features: Tensor,
    pub losses: Option<Vec<f64>>,
}

impl PredictionBatch {
    pub fn validate(&self) -> Result<()> {
        let d = self.indices.len();
        if self.predictions.shape()[0] != d || self.features.shape()[0] != d {
            return Err(Error::ShapeMismatch {
                op: "prediction-batch",
                detail: format!(
                    "{d} indices, {} prediction rows, {} feature rows",
                    self.predictions.shape()[0],
                    self.features.shape()[0]
                ),
            });
        }
        if let Some(l) = &self.losses {
            if l.len() != d {
                return Err(Error::ShapeMismatch {
                    op: "prediction-batch",
                    detail: format!("{d} indices but {} losses", l.len()),
                });
            }
            if l.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::NonFinite { context: "per-sample losses".into() });
            }
        }
        Ok(())
    }
}
