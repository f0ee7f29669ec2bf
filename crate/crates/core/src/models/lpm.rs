//! Loss-prediction head: GAP, fully-connected, leaky ReLU, fully-connected.
//! Consumes tapped features detached from the target model's tape and emits
//! one scalar predicted loss per sample.

use crate::error::{Error, Result};
use crate::models::target::LEAKY_ALPHA;
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};

pub const DEFAULT_HIDDEN: usize = 128;

pub struct LossPredictor {
    feature_channels: usize,
    hidden: usize,
    pub store: ParamStore,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl LossPredictor {
    pub fn new(feature_channels: usize, hidden: usize, seed: u64) -> Result<Self> {
        if feature_channels == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(
                "loss predictor needs positive feature and hidden widths".into(),
            ));
        }
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new();
        let w1 =
            store.add_uniform("fc1.w", vec![feature_channels, hidden], feature_channels, &mut rng)?;
        let b1 = store.add_uniform("fc1.b", vec![1, hidden], feature_channels, &mut rng)?;
        let w2 = store.add_uniform("fc2.w", vec![hidden, 1], hidden, &mut rng)?;
        let b2 = store.add_uniform("fc2.b", vec![1, 1], hidden, &mut rng)?;
        Ok(LossPredictor { feature_channels, hidden, store, w1, b1, w2, b2 })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Predicted losses [n, 1]. Spatial features [n, c, h, w] go through
    /// GAP; flat features [n, f] pass the pooling stage unchanged.
    pub fn forward(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        let pooled = match shape.len() {
            2 => features,
            4 => tape.global_avg_pool(features)?,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "loss-predictor",
                    detail: format!("features must be 2-D or 4-D, got {shape:?}"),
                })
            }
        };
        let width = tape.shape(pooled)[1];
        if width != self.feature_channels {
            return Err(Error::ShapeMismatch {
                op: "loss-predictor",
                detail: format!("head expects {} channels, got {width}", self.feature_channels),
            });
        }
        let w1 = tape.param(&self.store, self.w1);
        let b1 = tape.param(&self.store, self.b1);
        let h = tape.matmul(pooled, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.leaky_relu(h, LEAKY_ALPHA);
        let w2 = tape.param(&self.store, self.w2);
        let b2 = tape.param(&self.store, self.b2);
        let out = tape.matmul(h, w2)?;
        tape.add_bias(out, b2)
    }
}
