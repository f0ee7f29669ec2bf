//! Target models: MLP classifier/regressor and a tiny CNN, all exposing the
//! activations of the last block before the output layer as tapped features.

use crate::error::{Error, Result};
use crate::models::{LabelBatch, TaskKind};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};

pub const LEAKY_ALPHA: f64 = 0.01;

#[derive(Clone, Debug)]
pub enum TargetModelConfig {
    MlpClassifier { input_dim: usize, hidden: Vec<usize>, classes: usize },
    MlpRegressor { input_dim: usize, hidden: Vec<usize> },
    /// Single-channel grid input of size `grid` x `grid`, two 3x3 conv
    /// blocks with zero padding 1.
    TinyCnnClassifier { grid: usize, channels: (usize, usize), classes: usize },
}

impl TargetModelConfig {
    pub fn task(&self) -> TaskKind {
        match self {
            TargetModelConfig::MlpRegressor { .. } => TaskKind::Regression,
            _ => TaskKind::Classification,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            TargetModelConfig::MlpClassifier { classes, .. } => *classes,
            TargetModelConfig::TinyCnnClassifier { classes, .. } => *classes,
            TargetModelConfig::MlpRegressor { .. } => 1,
        }
    }

    /// Channel count of the tapped features as seen by a GAP stage.
    pub fn feature_channels(&self) -> usize {
        match self {
            TargetModelConfig::MlpClassifier { hidden, input_dim, .. }
            | TargetModelConfig::MlpRegressor { hidden, input_dim } => {
                *hidden.last().unwrap_or(input_dim)
            }
            TargetModelConfig::TinyCnnClassifier { channels, .. } => channels.1,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TargetModelConfig::MlpClassifier { input_dim, classes, .. } => {
                if *input_dim == 0 || *classes < 2 {
                    return Err(Error::InvalidArgument(format!("bad mlp config: {self:?}")));
                }
            }
            TargetModelConfig::MlpRegressor { input_dim, .. } => {
                if *input_dim == 0 {
                    return Err(Error::InvalidArgument(format!("bad mlp config: {self:?}")));
                }
            }
            TargetModelConfig::TinyCnnClassifier { grid, channels, classes } => {
                if *grid < 3 || channels.0 == 0 || channels.1 == 0 || *classes < 2 {
                    return Err(Error::InvalidArgument(format!("bad cnn config: {self:?}")));
                }
            }
        }
        Ok(())
    }
}

pub struct TargetModel {
    config: TargetModelConfig,
    pub store: ParamStore,
    fc: Vec<(ParamId, ParamId)>,
    conv: Vec<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

impl TargetModel {
    /// Deterministic init: same config and seed give bit-identical parameters.
    pub fn new(config: TargetModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new();
        let mut fc = Vec::new();
        let mut conv = Vec::new();
        let out;
        match &config {
            TargetModelConfig::MlpClassifier { input_dim, hidden, classes } => {
                let mut prev = *input_dim;
                for (i, &h) in hidden.iter().enumerate() {
                    fc.push(fc_layer(&mut store, &format!("fc{i}"), prev, h, &mut rng)?);
                    prev = h;
                }
                out = fc_layer(&mut store, "out", prev, *classes, &mut rng)?;
            }
            TargetModelConfig::MlpRegressor { input_dim, hidden } => {
                let mut prev = *input_dim;
                for (i, &h) in hidden.iter().enumerate() {
                    fc.push(fc_layer(&mut store, &format!("fc{i}"), prev, h, &mut rng)?);
                    prev = h;
                }
                out = fc_layer(&mut store, "out", prev, 1, &mut rng)?;
            }
            TargetModelConfig::TinyCnnClassifier { channels, classes, .. } => {
                conv.push(conv_layer(&mut store, "conv0", 1, channels.0, &mut rng)?);
                conv.push(conv_layer(&mut store, "conv1", channels.0, channels.1, &mut rng)?);
                out = fc_layer(&mut store, "out", channels.1, *classes, &mut rng)?;
            }
        }
        Ok(TargetModel { config, store, fc, conv, out })
    }

    pub fn config(&self) -> &TargetModelConfig {
        &self.config
    }

    pub fn task(&self) -> TaskKind {
        self.config.task()
    }

    /// Forward pass producing predictions (logits / regression values) and
    /// the tapped features of the last block before the output layer.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        match &self.config {
            TargetModelConfig::MlpClassifier { input_dim, .. }
            | TargetModelConfig::MlpRegressor { input_dim, .. } => {
                let got = tape.shape(x).to_vec();
                if got.len() != 2 || got[1] != *input_dim {
                    return Err(Error::ShapeMismatch {
                        op: "target-forward",
                        detail: format!("model expects [n, {input_dim}], got {got:?}"),
                    });
                }
                let mut h = x;
                for &(w, b) in &self.fc {
                    let wv = tape.param(&self.store, w);
                    let bv = tape.param(&self.store, b);
                    let lin = tape.matmul(h, wv)?;
                    let lin = tape.add_bias(lin, bv)?;
                    h = tape.leaky_relu(lin, LEAKY_ALPHA);
                }
                let tap = h;
                let wv = tape.param(&self.store, self.out.0);
                let bv = tape.param(&self.store, self.out.1);
                let lin = tape.matmul(tap, wv)?;
                let pred = tape.add_bias(lin, bv)?;
                Ok((pred, tap))
            }
            TargetModelConfig::TinyCnnClassifier { grid, .. } => {
                let got = tape.shape(x).to_vec();
                if got.len() != 4 || got[1] != 1 || got[2] != *grid || got[3] != *grid {
                    return Err(Error::ShapeMismatch {
                        op: "target-forward",
                        detail: format!("model expects [n, 1, {grid}, {grid}], got {got:?}"),
                    });
                }
                let mut h = x;
                for &(k, b) in &self.conv {
                    let kv = tape.param(&self.store, k);
                    let bv = tape.param(&self.store, b);
                    let c = tape.conv2d(h, kv, bv, 1)?;
                    h = tape.leaky_relu(c, LEAKY_ALPHA);
                }
                let tap = h;
                let pooled = tape.global_avg_pool(tap)?;
                let wv = tape.param(&self.store, self.out.0);
                let bv = tape.param(&self.store, self.out.1);
                let lin = tape.matmul(pooled, wv)?;
                let pred = tape.add_bias(lin, bv)?;
                Ok((pred, tap))
            }
        }
    }
}

fn fc_layer(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut SeededRng,
) -> Result<(ParamId, ParamId)> {
    let w = store.add_uniform(format!("{name}.w"), vec![fan_in, fan_out], fan_in, rng)?;
    let b = store.add_uniform(format!("{name}.b"), vec![1, fan_out], fan_in, rng)?;
    Ok((w, b))
}

fn conv_layer(
    store: &mut ParamStore,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    rng: &mut SeededRng,
) -> Result<(ParamId, ParamId)> {
    let fan_in = in_ch * 9;
    let k = store.add_uniform(format!("{name}.k"), vec![out_ch, in_ch, 3, 3], fan_in, rng)?;
    let b = store.add_uniform(format!("{name}.b"), vec![1, out_ch], fan_in, rng)?;
    Ok((k, b))
}

/// Per-sample losses for a prediction batch: cross-entropy for
/// classification, squared error for regression. Mean of the returned
/// column equals the batch target loss.
pub fn per_sample_losses(tape: &mut Tape, pred: Var, labels: &LabelBatch) -> Result<Var> {
    match labels {
        LabelBatch::Classes(ys) => tape.cross_entropy(pred, ys),
        LabelBatch::Values(ys) => {
            let n = tape.shape(pred)[0];
            if tape.shape(pred) != [n, 1] || ys.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "per-sample-loss",
                    detail: format!(
                        "predictions {:?} with {} labels",
                        tape.shape(pred),
                        ys.len()
                    ),
                });
            }
            let target = tape.input(&crate::tensor::Tensor::column(ys));
            tape.squared_error(pred, target)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn zero_out(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_weight_classifier_gives_uniform_softmax() {
        let cfg = TargetModelConfig::MlpClassifier { input_dim: 3, hidden: vec![8], classes: 4 };
        let mut model = TargetModel::new(cfg, 1).unwrap();
        zero_out(&mut model.store);
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap());
        let (pred, _) = model.forward(&mut tape, x).unwrap();
        let p = tape.softmax(pred).unwrap();
        for &v in tape.value(p) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_like_regressor_passes_value_through() {
        let cfg = TargetModelConfig::MlpRegressor { input_dim: 1, hidden: vec![1] };
        let mut model = TargetModel::new(cfg, 1).unwrap();
        // fc0.w = 1, fc0.b = 0, out.w = 1, out.b = 0
        for id in model.store.ids().collect::<Vec<_>>() {
            let fill = if model.store.name(id).ends_with(".w") { 1.0 } else { 0.0 };
            model.store.value_mut(id).data_mut().fill(fill);
        }
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::column(&[2.0]));
        let (pred, _) = model.forward(&mut tape, x).unwrap();
        assert!((tape.value(pred)[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_cnn_taps_spatial_features() {
        let cfg = TargetModelConfig::TinyCnnClassifier { grid: 8, channels: (4, 6), classes: 3 };
        let model = TargetModel::new(cfg, 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::zeros(vec![2, 1, 8, 8]));
        let (pred, tap) = model.forward(&mut tape, x).unwrap();
        assert_eq!(tape.shape(tap), &[2, 6, 8, 8]);
        assert_eq!(tape.shape(pred), &[2, 3]);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let cfg = TargetModelConfig::MlpClassifier { input_dim: 3, hidden: vec![4], classes: 2 };
        let model = TargetModel::new(cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::zeros(vec![2, 5]));
        assert!(model.forward(&mut tape, x).is_err());
    }

    #[test]
    fn same_seed_bit_identical_different_seed_differs() {
        let cfg = TargetModelConfig::MlpClassifier { input_dim: 4, hidden: vec![8, 8], classes: 3 };
        let a = TargetModel::new(cfg.clone(), 9).unwrap();
        let b = TargetModel::new(cfg.clone(), 9).unwrap();
        let c = TargetModel::new(cfg, 10).unwrap();
        assert!(a.store.bit_identical(&b.store));
        assert!(!a.store.bit_identical(&c.store));
    }

    #[test]
    fn per_sample_loss_examples() {
        // One-hot-confident prediction -> loss ~ 0; uniform over 10 -> ln 10.
        let mut tape = Tape::new();
        let mut logits = vec![0.0; 10];
        logits[7] = 50.0;
        let confident = tape.input(&Tensor::row(&logits));
        let l = per_sample_losses(&mut tape, confident, &LabelBatch::Classes(vec![7])).unwrap();
        assert!(tape.value(l)[0] < 1e-12);

        let uniform = tape.input(&Tensor::zeros(vec![1, 10]));
        let l = per_sample_losses(&mut tape, uniform, &LabelBatch::Classes(vec![4])).unwrap();
        assert!((tape.value(l)[0] - 10.0_f64.ln()).abs() < 1e-12);

        let pred = tape.input(&Tensor::column(&[1.5]));
        let l = per_sample_losses(&mut tape, pred, &LabelBatch::Values(vec![1.5])).unwrap();
        assert_eq!(tape.value(l)[0], 0.0);
    }

    #[test]
    fn per_sample_loss_mean_equals_batch_loss() {
        let cfg = TargetModelConfig::MlpClassifier { input_dim: 2, hidden: vec![6], classes: 3 };
        let model = TargetModel::new(cfg, 5).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::new(vec![4, 2], vec![0.1, 0.9, -0.4, 0.2, 1.0, -1.0, 0.0, 0.3]).unwrap());
        let (pred, _) = model.forward(&mut tape, x).unwrap();
        let labels = LabelBatch::Classes(vec![0, 2, 1, 0]);
        let losses = per_sample_losses(&mut tape, pred, &labels).unwrap();
        let batch = tape.mean(losses);
        let hand: f64 = tape.value(losses).iter().sum::<f64>() / 4.0;
        assert!((tape.scalar_value(batch) - hand).abs() < 1e-12);
    }
}
