//! Rank mathematics: exact ranking, Spearman's rank correlation, the
//! sorter-surrogate listwise loss, the pairwise hinge baseline, and the
//! sorter training pipeline on synthetic sequences.
//!
//! Rank conventions used throughout: ascending (smallest value gets the
//! smallest rank), 0-based, ties broken by original index, normalized to
//! [0, 1] by rank/(d-1) where a normalized vector is needed. Spearman's
//! correlation itself is computed on unnormalized integer ranks.

use crate::error::{Error, Result};
use crate::models::{Sorter, SorterConfig, SorterMeta};
use crate::optim::Optimizer;
use crate::rng::{derive_seed, SeededRng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankProvenance {
    Exact,
    SorterApproximate,
}

/// Normalized ranks in [0, 1] with their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct RankVector {
    values: Vec<f64>,
    provenance: RankProvenance,
}

impl RankVector {
    pub fn sorter_approximate(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument("rank vector needs length >= 2".into()));
        }
        Ok(RankVector { values, provenance: RankProvenance::SorterApproximate })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> RankProvenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Paired per-sample ground-truth and predicted losses for one mini-batch.
#[derive(Clone, Debug)]
pub struct LossList {
    pub ground_truth: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl LossList {
    pub fn new(ground_truth: Vec<f64>, predicted: Vec<f64>) -> Result<Self> {
        if ground_truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch {
                op: "loss-list",
                detail: format!("{} ground-truth vs {} predicted", ground_truth.len(), predicted.len()),
            });
        }
        if ground_truth.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite { context: "ground-truth losses".into() });
        }
        if predicted.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "predicted losses".into() });
        }
        Ok(LossList { ground_truth, predicted })
    }

    pub fn len(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground_truth.is_empty()
    }
}

/// Stable ascending argsort: position p of the result holds the index of
/// the p-th smallest value, ties keeping original order.
fn argsort_stable(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// 0-based integer ranks under the stable tie-break rule.
pub fn integer_ranks(values: &[f64]) -> Vec<usize> {
    let order = argsort_stable(values);
    let mut ranks = vec![0usize; values.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos;
    }
    ranks
}

/// Exact normalized ranks: ascending, 0-based, divided by (d - 1).
pub fn true_ranks(values: &[f64]) -> Result<RankVector> {
    let d = values.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!("ranking needs at least 2 values, got {d}")));
    }
    let scale = 1.0 / (d - 1) as f64;
    let mut out = vec![0.0; d];
    for (idx, rank) in integer_ranks(values).into_iter().enumerate() {
        out[idx] = rank as f64 * scale;
    }
    Ok(RankVector { values: out, provenance: RankProvenance::Exact })
}

/// Spearman's rank correlation on unnormalized integer ranks:
/// r_s = 1 - 6 * sum((rk(a) - rk(b))^2) / (d (d^2 - 1)).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "spearman",
            detail: format!("{} vs {} values", a.len(), b.len()),
        });
    }
    let d = a.len();
    if d < 2 {
        return Err(Error::InvalidArgument("spearman needs at least 2 values".into()));
    }
    let ra = integer_ranks(a);
    let rb = integer_ranks(b);
    let ssd: f64 = ra
        .iter()
        .zip(&rb)
        .map(|(&x, &y)| {
            let diff = x as f64 - y as f64;
            diff * diff
        })
        .sum();
    let dd = d as f64;
    Ok(1.0 - 6.0 * ssd / (dd * (dd * dd - 1.0)))
}

/// Dual-path identity check: maximizing Spearman's correlation is the same
/// objective as minimizing the squared rank difference. Evaluates r_s via
/// [`spearman`] and independently via 1 - 6*SSD/(d(d^2-1)) from brute-force
/// counted ranks; true when the two agree within 1e-12.
pub fn spearman_objective_equivalence_check(losses: &LossList) -> Result<bool> {
    let d = losses.len();
    if d < 2 {
        return Err(Error::InvalidArgument("equivalence check needs at least 2 values".into()));
    }
    let direct = spearman(&losses.ground_truth, &losses.predicted)?;

    // Independent route: counting ranks without sorting.
    let counted = |values: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| {
                let mut below = 0usize;
                for j in 0..d {
                    if values[j] < values[i] || (values[j] == values[i] && j < i) {
                        below += 1;
                    }
                }
                below as f64
            })
            .collect()
    };
    let ra = counted(&losses.ground_truth);
    let rb = counted(&losses.predicted);
    let ssd: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    let dd = d as f64;
    let via_mse = 1.0 - 6.0 * ssd / (dd * (dd * dd - 1.0));
    Ok((direct - via_mse).abs() < 1e-12)
}

/// Builds the listwise ranking loss on an existing tape: mean squared error
/// between exact normalized ground-truth ranks and the sorter's predicted
/// ranks of the (min-max normalized) predicted losses. `l_hat` is a [d, 1]
/// column; the sorter's parameters stay frozen — gradients flow through it
/// into `l_hat` only.
pub fn listwise_loss_on_tape(
    tape: &mut Tape,
    sorter: &Sorter,
    l_hat: Var,
    ground_truth: &[f64],
) -> Result<Var> {
    let d = ground_truth.len();
    if sorter.seq_len() != d {
        return Err(Error::SequenceLength { expected: sorter.seq_len(), got: d });
    }
    let got = tape.shape(l_hat).to_vec();
    if got != [d, 1] {
        return Err(Error::ShapeMismatch {
            op: "listwise-loss",
            detail: format!("expected predicted losses [{d}, 1], got {got:?}"),
        });
    }
    let gt_ranks = true_ranks(ground_truth)?;
    let row = tape.reshape(l_hat, vec![1, d])?;
    let normed = tape.minmax_norm_rows(row)?;
    let predicted_ranks = sorter.forward(tape, normed)?;
    let target = tape.input(&Tensor::row(gt_ranks.values()));
    let sq = tape.squared_error(predicted_ranks, target)?;
    Ok(tape.mean(sq))
}

/// Listwise ranking loss as a plain value (no gradients kept).
pub fn listwise_ranking_loss(losses: &LossList, sorter: &Sorter) -> Result<f64> {
    let mut tape = Tape::new();
    let l_hat = tape.input(&Tensor::column(&losses.predicted));
    let loss = listwise_loss_on_tape(&mut tape, sorter, l_hat, &losses.ground_truth)?;
    Ok(tape.scalar_value(loss))
}

/// Listwise loss with the exact-rank oracle substituted for the sorter:
/// mean((rk(l)_i - rk(l_hat)_i)^2) on normalized ranks. Not differentiable;
/// test and diagnostic use.
pub fn listwise_ranking_loss_with_oracle(losses: &LossList) -> Result<f64> {
    let gt = true_ranks(&losses.ground_truth)?;
    let pr = true_ranks(&losses.predicted)?;
    let d = losses.len() as f64;
    Ok(gt
        .values()
        .iter()
        .zip(pr.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / d)
}

fn pair_sign(a: f64, b: f64) -> f64 {
    if a > b {
        1.0
    } else {
        -1.0
    }
}

/// Pairwise hinge baseline over adjacent pairs (1,2), (3,4), ...:
/// mean over d/2 pairs of max(0, -sign(l_i - l_j) * (lhat_i - lhat_j) + margin).
pub fn pairwise_ranking_loss(losses: &LossList, margin: f64) -> Result<f64> {
    let d = losses.len();
    if d % 2 != 0 || d == 0 {
        return Err(Error::OddBatch(d));
    }
    if margin <= 0.0 {
        return Err(Error::InvalidArgument(format!("margin must be positive, got {margin}")));
    }
    let mut total = 0.0;
    for p in 0..d / 2 {
        let (i, j) = (2 * p, 2 * p + 1);
        let s = pair_sign(losses.ground_truth[i], losses.ground_truth[j]);
        let h = -s * (losses.predicted[i] - losses.predicted[j]) + margin;
        total += h.max(0.0);
    }
    Ok(total / (d / 2) as f64)
}

/// Tape version of the pairwise hinge for training the loss predictor.
/// `l_hat` is a [d, 1] column, ground-truth losses are constants.
pub fn pairwise_loss_on_tape(
    tape: &mut Tape,
    l_hat: Var,
    ground_truth: &[f64],
    margin: f64,
) -> Result<Var> {
    let d = ground_truth.len();
    if d % 2 != 0 || d == 0 {
        return Err(Error::OddBatch(d));
    }
    let got = tape.shape(l_hat).to_vec();
    if got != [d, 1] {
        return Err(Error::ShapeMismatch {
            op: "pairwise-loss",
            detail: format!("expected predicted losses [{d}, 1], got {got:?}"),
        });
    }
    let row = tape.reshape(l_hat, vec![1, d])?;
    let mut hinges = Vec::with_capacity(d / 2);
    for p in 0..d / 2 {
        let (i, j) = (2 * p, 2 * p + 1);
        let li = tape.slice_cols(row, i, 1)?;
        let lj = tape.slice_cols(row, j, 1)?;
        let diff = tape.sub(li, lj)?;
        let s = pair_sign(ground_truth[i], ground_truth[j]);
        let scored = tape.affine(diff, -s, margin);
        hinges.push(tape.relu(scored));
    }
    let all = tape.concat_cols(&hinges)?;
    Ok(tape.mean(all))
}

/// One synthetic training example: normalized values with exact ranks.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub values: Vec<f64>,
    pub true_ranks: RankVector,
}

/// Synthetic corpus for sorter pretraining: 50% uniform, 30% clipped
/// Gaussian, 20% piecewise-constant with noise, each min-max normalized to
/// [0, 1]. Degenerate all-equal draws are regenerated.
pub fn generate_synthetic_sequences(count: usize, d: usize, seed: u64) -> Result<Vec<SyntheticSequence>> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("sequence length must be >= 2, got {d}")));
    }
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let kind = rng.f64();
        let mut v = vec![0.0; d];
        if kind < 0.5 {
            for x in v.iter_mut() {
                *x = rng.f64();
            }
        } else if kind < 0.8 {
            let mu = rng.f64();
            let sigma = rng.range_f64(0.05, 0.3);
            for x in v.iter_mut() {
                *x = rng.normal(mu, sigma).clamp(0.0, 1.0);
            }
        } else {
            let segments = 2 + rng.below(5);
            let mut boundaries: Vec<usize> = (0..segments - 1).map(|_| 1 + rng.below(d - 1)).collect();
            boundaries.sort_unstable();
            boundaries.push(d);
            let mut start = 0usize;
            for &end in &boundaries {
                let level = rng.f64();
                for x in &mut v[start..end.max(start)] {
                    *x = level;
                }
                start = end.max(start);
            }
            for x in v.iter_mut() {
                *x += rng.normal(0.0, 0.02);
            }
        }
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            continue;
        }
        for x in v.iter_mut() {
            *x = (*x - lo) / (hi - lo);
        }
        let ranks = true_ranks(&v)?;
        out.push(SyntheticSequence { values: v, true_ranks: ranks });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainSorterConfig {
    pub seq_len: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub corpus_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub heldout_size: usize,
    /// Held-out evaluation cadence in batches (also runs at epoch ends).
    pub eval_every: usize,
    /// Stop as soon as the held-out mean Spearman reaches this value.
    pub target_spearman: Option<f64>,
}

impl TrainSorterConfig {
    pub fn new(seq_len: usize) -> Self {
        TrainSorterConfig {
            seq_len,
            hidden: crate::models::DEFAULT_SORTER_HIDDEN,
            epochs: 400,
            corpus_size: 100_000,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 7,
            heldout_size: 2000,
            eval_every: 100,
            target_spearman: None,
        }
    }
}

/// Mean Spearman correlation between sorter outputs and the true value
/// order over a set of sequences (argsort-based, ordinal fidelity only).
pub fn heldout_mean_spearman(sorter: &Sorter, seqs: &[SyntheticSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("empty held-out set".into()));
    }
    let d = sorter.seq_len();
    let chunk = 256usize;
    let mut total = 0.0;
    for batch in seqs.chunks(chunk) {
        let mut data = Vec::with_capacity(batch.len() * d);
        for s in batch {
            data.extend_from_slice(&s.values);
        }
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::new(vec![batch.len(), d], data)?);
        let out = sorter.forward(&mut tape, x)?;
        let ov = tape.value(out);
        for (i, s) in batch.iter().enumerate() {
            total += spearman(&ov[i * d..(i + 1) * d], &s.values)?;
        }
    }
    Ok(total / seqs.len() as f64)
}

/// Pretrains a sorter on synthetic sequences by minimizing the MSE between
/// its outputs and exact normalized ranks. Reports the held-out mean
/// Spearman alongside the trained network; training stops early once
/// `target_spearman` is met.
pub fn train_sorter(cfg: &TrainSorterConfig) -> Result<(Sorter, SorterMeta)> {
    let corpus = generate_synthetic_sequences(cfg.corpus_size, cfg.seq_len, derive_seed(cfg.seed, &[1]))?;
    let heldout =
        generate_synthetic_sequences(cfg.heldout_size, cfg.seq_len, derive_seed(cfg.seed, &[2]))?;
    let mut sorter =
        Sorter::new(SorterConfig { seq_len: cfg.seq_len, hidden: cfg.hidden }, derive_seed(cfg.seed, &[3]))?;
    let mut opt = Optimizer::adam(cfg.learning_rate)?;

    let d = cfg.seq_len;
    let mut batches_done = 0usize;
    let mut epochs_done = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut reached = false;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut shuffle_rng = SeededRng::new(derive_seed(cfg.seed, &[4, epoch as u64]));
        shuffle_rng.shuffle(&mut order);

        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut values = Vec::with_capacity(b * d);
            let mut targets = Vec::with_capacity(b * d);
            for &idx in chunk {
                values.extend_from_slice(&corpus[idx].values);
                targets.extend_from_slice(corpus[idx].true_ranks.values());
            }
            let mut tape = Tape::new();
            let x = tape.input(&Tensor::new(vec![b, d], values)?);
            let out = sorter.forward(&mut tape, x)?;
            let t = tape.input(&Tensor::new(vec![b, d], targets)?);
            let sq = tape.squared_error(out, t)?;
            let loss = tape.mean(sq);
            let loss_value = tape.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {loss_value} at epoch {epoch}, batch {batches_done}"
                )));
            }
            let grads = tape.backward(loss)?;
            grads.write_to(&mut sorter.store)?;
            opt.step(&mut sorter.store)?;
            batches_done += 1;

            if batches_done % cfg.eval_every == 0 {
                best = heldout_mean_spearman(&sorter, &heldout)?;
                if cfg.target_spearman.is_some_and(|t| best >= t) {
                    reached = true;
                    break 'epochs;
                }
            }
        }
        epochs_done = epoch + 1;
        best = heldout_mean_spearman(&sorter, &heldout)?;
        if cfg.target_spearman.is_some_and(|t| best >= t) {
            reached = true;
            break 'epochs;
        }
    }
    if cfg.epochs > 0 && !reached {
        // Final number already measured at the last epoch boundary.
    } else if cfg.epochs == 0 {
        best = heldout_mean_spearman(&sorter, &heldout)?;
    }

    let meta = SorterMeta {
        seq_len: cfg.seq_len,
        hidden: cfg.hidden,
        seed: cfg.seed,
        epochs: epochs_done,
        batches: batches_done,
        heldout_spearman: best,
    };
    Ok((sorter, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn true_ranks_basic() {
        let r = true_ranks(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.values(), &[1.0, 0.0, 0.5]);
        assert_eq!(r.provenance(), RankProvenance::Exact);
    }

    #[test]
    fn true_ranks_ties_break_by_index() {
        let r = true_ranks(&[5.0, 5.0]).unwrap();
        assert_eq!(r.values(), &[0.0, 1.0]);
    }

    #[test]
    fn true_ranks_rejects_short_input() {
        assert!(true_ranks(&[1.0]).is_err());
    }

    #[test]
    fn true_ranks_matches_counting_oracle_on_random_vectors() {
        let mut rng = SeededRng::new(99);
        for _ in 0..20 {
            let v: Vec<f64> = (0..64).map(|_| rng.f64()).collect();
            let got = true_ranks(&v).unwrap();
            // Independent oracle: rank by counting smaller elements.
            for i in 0..v.len() {
                let mut below = 0;
                for j in 0..v.len() {
                    if v[j] < v[i] || (v[j] == v[i] && j < i) {
                        below += 1;
                    }
                }
                let expect = below as f64 / 63.0;
                assert!((got.values()[i] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn true_ranks_idempotent_under_normalization() {
        let v = [0.4, 0.1, 0.9, 0.2, 0.7];
        let once = true_ranks(&v).unwrap();
        let twice = true_ranks(once.values()).unwrap();
        assert_eq!(once.values(), twice.values());
    }

    #[test]
    fn spearman_identity_and_reversal() {
        let a = [0.3, 1.2, 2.5, 3.1, 7.0];
        let rev: Vec<f64> = a.iter().rev().cloned().collect();
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman(&a, &rev).unwrap(), -1.0);
    }

    #[test]
    fn spearman_worked_example() {
        // ranks (1,4,2,3) vs (3,1,4,2): ssd = 18, r_s = 1 - 108/60 = -0.8
        let a = [0.1, 0.4, 0.2, 0.3];
        let b = [0.3, 0.1, 0.4, 0.2];
        assert!((spearman(&a, &b).unwrap() + 0.8).abs() < 1e-15);
    }

    #[test]
    fn spearman_rejects_length_mismatch() {
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn equivalence_check_holds() {
        let mut rng = SeededRng::new(5);
        for _ in 0..10 {
            let gt: Vec<f64> = (0..16).map(|_| rng.f64()).collect();
            let pr: Vec<f64> = (0..16).map(|_| rng.f64()).collect();
            let ll = LossList::new(gt, pr).unwrap();
            assert!(spearman_objective_equivalence_check(&ll).unwrap());
        }
        let same = LossList::new(vec![0.1, 0.5, 0.9], vec![0.1, 0.5, 0.9]).unwrap();
        assert!(spearman_objective_equivalence_check(&same).unwrap());
        let rev = LossList::new(vec![0.1, 0.5, 0.9], vec![0.9, 0.5, 0.1]).unwrap();
        assert!(spearman_objective_equivalence_check(&rev).unwrap());
    }

    #[test]
    fn oracle_listwise_loss_zero_at_optimum() {
        let l = vec![0.2, 0.9, 0.4, 0.6];
        let ll = LossList::new(l.clone(), l).unwrap();
        assert_eq!(listwise_ranking_loss_with_oracle(&ll).unwrap(), 0.0);
    }

    #[test]
    fn oracle_listwise_loss_reversed_pair_is_one() {
        let ll = LossList::new(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(listwise_ranking_loss_with_oracle(&ll).unwrap(), 1.0);
    }

    #[test]
    fn pairwise_examples() {
        let correct = LossList::new(vec![1.0, 0.0], vec![5.0, 0.0]).unwrap();
        assert_eq!(pairwise_ranking_loss(&correct, 1.0).unwrap(), 0.0);
        let tied = LossList::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(pairwise_ranking_loss(&tied, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn pairwise_rejects_odd_batch() {
        let ll = LossList::new(vec![1.0, 0.0, 0.5], vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(pairwise_ranking_loss(&ll, 1.0), Err(Error::OddBatch(3))));
    }

    #[test]
    fn pairwise_matches_bruteforce_oracle() {
        let mut rng = SeededRng::new(21);
        for _ in 0..50 {
            let d = 2 * (1 + rng.below(16));
            let gt: Vec<f64> = (0..d).map(|_| rng.f64()).collect();
            let pr: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
            let ll = LossList::new(gt.clone(), pr.clone()).unwrap();
            let got = pairwise_ranking_loss(&ll, 1.0).unwrap();
            let mut expect = 0.0;
            for p in 0..d / 2 {
                let (i, j) = (2 * p, 2 * p + 1);
                let s = if gt[i] > gt[j] { 1.0 } else { -1.0 };
                expect += (-s * (pr[i] - pr[j]) + 1.0).max(0.0);
            }
            expect /= (d / 2) as f64;
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_invariant_to_constant_shift() {
        let gt = vec![0.9, 0.1, 0.7, 0.3];
        let pr = vec![0.5, 0.2, 0.1, 0.8];
        let shifted: Vec<f64> = pr.iter().map(|v| v + 17.0).collect();
        let a = pairwise_ranking_loss(&LossList::new(gt.clone(), pr).unwrap(), 1.0).unwrap();
        let b = pairwise_ranking_loss(&LossList::new(gt, shifted).unwrap(), 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pairwise_tape_matches_value_version() {
        let mut rng = SeededRng::new(31);
        for _ in 0..10 {
            let d = 8;
            let gt: Vec<f64> = (0..d).map(|_| rng.f64()).collect();
            let pr: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
            let mut tape = Tape::new();
            let col = tape.input(&Tensor::column(&pr));
            let loss = pairwise_loss_on_tape(&mut tape, col, &gt, 1.0).unwrap();
            let direct =
                pairwise_ranking_loss(&LossList::new(gt, pr).unwrap(), 1.0).unwrap();
            assert!((tape.scalar_value(loss) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_sequences_are_normalized_and_ranked() {
        let seqs = generate_synthetic_sequences(200, 16, 3).unwrap();
        assert_eq!(seqs.len(), 200);
        for s in &seqs {
            assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(s.true_ranks.values(), true_ranks(&s.values).unwrap().values());
        }
    }

    #[test]
    fn synthetic_sequences_deterministic() {
        let a = generate_synthetic_sequences(50, 8, 9).unwrap();
        let b = generate_synthetic_sequences(50, 8, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut cfg = TrainSorterConfig::new(4);
        cfg.hidden = 8;
        cfg.corpus_size = 64;
        cfg.heldout_size = 16;
        cfg.epochs = 0;
        let (trained, meta) = train_sorter(&cfg).unwrap();
        let fresh = Sorter::new(
            SorterConfig { seq_len: 4, hidden: 8 },
            derive_seed(cfg.seed, &[3]),
        )
        .unwrap();
        assert!(trained.store.bit_identical(&fresh.store));
        assert_eq!(meta.epochs, 0);
        assert_eq!(meta.batches, 0);
    }

    #[test]
    fn listwise_loss_rejects_wrong_length() {
        let sorter = Sorter::new(SorterConfig { seq_len: 4, hidden: 8 }, 1).unwrap();
        let ll = LossList::new(vec![0.1, 0.2, 0.3], vec![0.3, 0.2, 0.1]).unwrap();
        assert!(matches!(
            listwise_ranking_loss(&ll, &sorter),
            Err(Error::SequenceLength { expected: 4, got: 3 })
        ));
    }
}
