//! Acquisition functions: random, entropy, K-Center-Greedy core-set, and
//! learned-loss top-k. All selections are pure functions of a
//! [`QueryContext`]; every tie breaks by ascending original index so
//! benchmark runs are reproducible.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Random,
    Entropy,
    CoreSet,
    /// Learned loss trained with the pairwise hinge.
    Pairwise,
    /// Learned loss trained through the sorter surrogate.
    Listwise,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::CoreSet => "coreset",
            Strategy::Pairwise => "pairwise",
            Strategy::Listwise => "listwise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "entropy" => Ok(Strategy::Entropy),
            "coreset" => Ok(Strategy::CoreSet),
            "pairwise" => Ok(Strategy::Pairwise),
            "listwise" => Ok(Strategy::Listwise),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy `{other}` (expected random|entropy|coreset|pairwise|listwise)"
            ))),
        }
    }

    /// Does this strategy train and query a loss predictor?
    pub fn uses_loss_predictor(self) -> bool {
        matches!(self, Strategy::Pairwise | Strategy::Listwise)
    }
}

/// Everything a strategy may look at for one query round.
#[derive(Clone, Debug)]
pub struct QueryContext {
    /// Candidate pool indices (all currently unlabeled).
    pub candidates: Vec<usize>,
    /// Tapped features per candidate, flattened to [n, f].
    pub features: Option<Tensor>,
    /// Class posteriors per candidate (classification only), rows sum to 1.
    pub probabilities: Option<Vec<Vec<f64>>>,
    /// Predicted losses per candidate (learned-loss strategies).
    pub predicted_losses: Option<Vec<f64>>,
    /// Tapped features of the current labeled set, flattened to [m, f].
    pub labeled_features: Option<Tensor>,
    /// Number of instances to pick this cycle.
    pub budget: usize,
}

impl QueryContext {
    fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.budget > self.candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "budget {} with {} candidates",
                self.budget,
                self.candidates.len()
            )));
        }
        Ok(())
    }
}

/// The chosen indices plus the per-index score that drove the choice.
#[derive(Clone, Debug)]
pub struct Selection {
    pub chosen: Vec<usize>,
    pub strategy: Strategy,
    /// Scores aligned with `chosen` (inclusion frequency rank, entropy,
    /// min-distance, or predicted loss; 0 for random).
    pub scores: Vec<f64>,
}

impl Selection {
    pub fn validate(&self, ctx: &QueryContext) -> Result<()> {
        if self.chosen.len() != ctx.budget {
            return Err(Error::InvalidArgument(format!(
                "selection of {} indices with budget {}",
                self.chosen.len(),
                ctx.budget
            )));
        }
        let mut seen = self.chosen.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.chosen.len() {
            return Err(Error::InvalidArgument("selection contains duplicates".into()));
        }
        for idx in &self.chosen {
            if !ctx.candidates.contains(idx) {
                return Err(Error::InvalidArgument(format!("{idx} is not a candidate")));
            }
        }
        Ok(())
    }
}

/// Uniform sample without replacement from the unlabeled pool; takes the
/// whole pool when `subset_size` is at least as large.
pub fn draw_subset(unlabeled: &[usize], subset_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = SeededRng::new(seed);
    rng.sample_without_replacement(unlabeled, subset_size)
}

pub fn select_random(ctx: &QueryContext, seed: u64) -> Result<Selection> {
    ctx.validate()?;
    let mut rng = SeededRng::new(seed);
    let chosen = rng.sample_without_replacement(&ctx.candidates, ctx.budget);
    let scores = vec![0.0; chosen.len()];
    Ok(Selection { chosen, strategy: Strategy::Random, scores })
}

/// Shannon entropy of a class posterior, natural log, 0 ln 0 = 0.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// Picks the b candidates with the largest posterior entropy.
pub fn select_entropy(ctx: &QueryContext) -> Result<Selection> {
    ctx.validate()?;
    let probs = ctx.probabilities.as_ref().ok_or(Error::EntropyNeedsPosteriors)?;
    if probs.len() != ctx.candidates.len() {
        return Err(Error::ShapeMismatch {
            op: "select-entropy",
            detail: format!("{} candidates, {} posteriors", ctx.candidates.len(), probs.len()),
        });
    }
    for (i, p) in probs.iter().enumerate() {
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-6 || p.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "posterior for candidate {} sums to {total}",
                ctx.candidates[i]
            )));
        }
    }
    let scores: Vec<f64> = probs.iter().map(|p| shannon_entropy(p)).collect();
    Ok(top_by_score(ctx, &scores, Strategy::Entropy))
}

/// Picks the b candidates with the largest predicted loss. Works directly
/// on the scalar scores; no ranking pass is involved.
pub fn select_top_predicted_loss(ctx: &QueryContext, strategy: Strategy) -> Result<Selection> {
    ctx.validate()?;
    let losses = ctx
        .predicted_losses
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("predicted losses missing from context".into()))?;
    if losses.len() != ctx.candidates.len() {
        return Err(Error::ShapeMismatch {
            op: "select-top-loss",
            detail: format!("{} candidates, {} losses", ctx.candidates.len(), losses.len()),
        });
    }
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "predicted losses".into() });
    }
    Ok(top_by_score(ctx, losses, strategy))
}

/// Greedy K-center selection: repeatedly take the candidate farthest (in
/// Euclidean feature distance) from the labeled set plus everything already
/// selected. With no labeled features at all, the first pick is the
/// lowest-index candidate.
pub fn select_kcenter_greedy(ctx: &QueryContext) -> Result<Selection> {
    ctx.validate()?;
    let feats = ctx
        .features
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("candidate features missing from context".into()))?;
    let n = ctx.candidates.len();
    if feats.shape()[0] != n {
        return Err(Error::ShapeMismatch {
            op: "select-kcenter",
            detail: format!("{n} candidates, {} feature rows", feats.shape()[0]),
        });
    }
    let dim = feats.cols();
    let sq_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // Min squared distance of each candidate to the labeled set.
    let mut min_d = vec![f64::INFINITY; n];
    if let Some(labeled) = &ctx.labeled_features {
        if labeled.cols() != dim {
            return Err(Error::ShapeMismatch {
                op: "select-kcenter",
                detail: format!("feature widths differ: {dim} vs {}", labeled.cols()),
            });
        }
        for i in 0..n {
            let fi = feats.row_slice(i);
            for j in 0..labeled.rows() {
                let d = sq_dist(fi, labeled.row_slice(j));
                if d < min_d[i] {
                    min_d[i] = d;
                }
            }
        }
    }

    let mut chosen = Vec::with_capacity(ctx.budget);
    let mut scores = Vec::with_capacity(ctx.budget);
    let mut taken = vec![false; n];
    for _ in 0..ctx.budget {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    // Strictly greater wins; ties keep the lower index.
                    if min_d[i] > min_d[b] {
                        best = Some(i);
                    }
                }
            }
        }
        let pick = best.expect("budget <= candidates");
        taken[pick] = true;
        chosen.push(ctx.candidates[pick]);
        scores.push(if min_d[pick].is_finite() { min_d[pick].sqrt() } else { f64::INFINITY });
        let fp = feats.row_slice(pick).to_vec();
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = sq_dist(feats.row_slice(i), &fp);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    Ok(Selection { chosen, strategy: Strategy::CoreSet, scores })
}

/// Top-b by score, descending, ties broken by ascending candidate position.
fn top_by_score(ctx: &QueryContext, scores: &[f64], strategy: Strategy) -> Selection {
    let mut order: Vec<usize> = (0..ctx.candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(ctx.budget);
    Selection {
        chosen: order.iter().map(|&i| ctx.candidates[i]).collect(),
        strategy,
        scores: order.iter().map(|&i| scores[i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(candidates: Vec<usize>, budget: usize) -> QueryContext {
        QueryContext {
            candidates,
            features: None,
            probabilities: None,
            predicted_losses: None,
            labeled_features: None,
            budget,
        }
    }

    #[test]
    fn draw_subset_takes_all_when_large() {
        let pool = vec![3, 1, 4, 1, 5];
        assert_eq!(draw_subset(&pool, 10, 0), pool);
    }

    #[test]
    fn draw_subset_deterministic() {
        let pool: Vec<usize> = (0..100).collect();
        assert_eq!(draw_subset(&pool, 10, 42), draw_subset(&pool, 10, 42));
    }

    #[test]
    fn draw_subset_inclusion_frequency() {
        // Inclusion probability of a fixed index should be S/N within 3 sigma.
        let pool: Vec<usize> = (0..50).collect();
        let trials = 10_000;
        let s = 10;
        let mut hits = 0usize;
        for t in 0..trials {
            if draw_subset(&pool, s, t as u64).contains(&7) {
                hits += 1;
            }
        }
        let p = s as f64 / 50.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        let expected = trials as f64 * p;
        assert!(
            (hits as f64 - expected).abs() < 3.0 * sigma,
            "hits {hits}, expected {expected} +/- {sigma}"
        );
    }

    #[test]
    fn random_selection_covers_all_when_budget_is_pool() {
        let c = ctx(vec![10, 20, 30], 3);
        let sel = select_random(&c, 5).unwrap();
        sel.validate(&c).unwrap();
        let mut got = sel.chosen.clone();
        got.sort_unstable();
        assert_eq!(got, vec![10, 20, 30]);
    }

    #[test]
    fn random_selection_uniform_inclusion() {
        let c = ctx((0..20).collect(), 4);
        let trials = 10_000;
        let mut hits = vec![0usize; 20];
        for t in 0..trials {
            for idx in select_random(&c, t as u64).unwrap().chosen {
                hits[idx] += 1;
            }
        }
        let p = 4.0 / 20.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (i, &h) in hits.iter().enumerate() {
            assert!(
                (h as f64 - trials as f64 * p).abs() < 3.0 * sigma,
                "index {i}: {h} hits"
            );
        }
    }

    #[test]
    fn entropy_prefers_uniform_posterior() {
        let mut c = ctx(vec![0, 1, 2], 2);
        c.probabilities = Some(vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.7, 0.3]]);
        let sel = select_entropy(&c).unwrap();
        assert_eq!(sel.chosen, vec![0, 2]);
        assert!((sel.scores[0] - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_ranks_one_hot_last() {
        let mut c = ctx(vec![0, 1, 2], 3);
        c.probabilities =
            Some(vec![vec![1.0, 0.0], vec![0.25, 0.75], vec![0.5, 0.5]]);
        let sel = select_entropy(&c).unwrap();
        assert_eq!(*sel.chosen.last().unwrap(), 0);
        assert_eq!(sel.scores.last().copied().unwrap(), 0.0);
    }

    #[test]
    fn entropy_requires_posteriors() {
        let c = ctx(vec![0, 1], 1);
        assert!(matches!(select_entropy(&c), Err(Error::EntropyNeedsPosteriors)));
    }

    #[test]
    fn entropy_rejects_unnormalized_posterior() {
        let mut c = ctx(vec![0], 1);
        c.probabilities = Some(vec![vec![0.5, 0.3]]);
        assert!(select_entropy(&c).is_err());
    }

    #[test]
    fn entropy_invariant_to_label_permutation() {
        let mut a = ctx(vec![0, 1], 1);
        a.probabilities = Some(vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2]]);
        let mut b = ctx(vec![0, 1], 1);
        b.probabilities = Some(vec![vec![0.5, 0.2, 0.3], vec![0.2, 0.6, 0.2]]);
        assert_eq!(select_entropy(&a).unwrap().chosen, select_entropy(&b).unwrap().chosen);
    }

    #[test]
    fn kcenter_worked_example() {
        // 1-D features: labeled {0}, candidates at 1, 2, 10, b = 2.
        let mut c = ctx(vec![100, 101, 102], 2);
        c.features = Some(Tensor::column(&[1.0, 2.0, 10.0]));
        c.labeled_features = Some(Tensor::column(&[0.0]));
        let sel = select_kcenter_greedy(&c).unwrap();
        assert_eq!(sel.chosen, vec![102, 101]);
        assert!((sel.scores[0] - 10.0).abs() < 1e-12);
        assert!((sel.scores[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kcenter_single_budget_takes_farthest() {
        let mut c = ctx(vec![0, 1, 2], 1);
        c.features = Some(Tensor::column(&[5.0, -2.0, 3.0]));
        c.labeled_features = Some(Tensor::column(&[0.0]));
        let sel = select_kcenter_greedy(&c).unwrap();
        assert_eq!(sel.chosen, vec![0]);
    }

    #[test]
    fn kcenter_coincident_candidate_picked_last() {
        let mut c = ctx(vec![0, 1, 2], 3);
        c.features = Some(Tensor::column(&[0.0, 4.0, 7.0]));
        c.labeled_features = Some(Tensor::column(&[0.0]));
        let sel = select_kcenter_greedy(&c).unwrap();
        assert_eq!(*sel.chosen.last().unwrap(), 0);
    }

    #[test]
    fn kcenter_empty_labeled_starts_at_lowest_index() {
        let mut c = ctx(vec![4, 9, 2], 2);
        c.features = Some(Tensor::column(&[1.0, 50.0, 3.0]));
        let sel = select_kcenter_greedy(&c).unwrap();
        assert_eq!(sel.chosen[0], 4);
        assert_eq!(sel.chosen[1], 9);
    }

    #[test]
    fn top_loss_picks_largest() {
        let mut c = ctx(vec![0, 1, 2], 2);
        c.predicted_losses = Some(vec![0.5, 0.1, 0.9]);
        let sel = select_top_predicted_loss(&c, Strategy::Listwise).unwrap();
        assert_eq!(sel.chosen, vec![2, 0]);
    }

    #[test]
    fn top_loss_ties_break_by_index() {
        let mut c = ctx(vec![7, 8, 9], 2);
        c.predicted_losses = Some(vec![0.4, 0.4, 0.4]);
        let sel = select_top_predicted_loss(&c, Strategy::Pairwise).unwrap();
        assert_eq!(sel.chosen, vec![7, 8]);
    }

    #[test]
    fn top_loss_takes_all_when_budget_is_pool() {
        let mut c = ctx(vec![0, 1], 2);
        c.predicted_losses = Some(vec![0.1, 0.2]);
        let sel = select_top_predicted_loss(&c, Strategy::Listwise).unwrap();
        assert_eq!(sel.chosen.len(), 2);
    }

    #[test]
    fn top_loss_rejects_non_finite() {
        let mut c = ctx(vec![0, 1], 1);
        c.predicted_losses = Some(vec![0.1, f64::NAN]);
        assert!(select_top_predicted_loss(&c, Strategy::Listwise).is_err());
    }

    #[test]
    fn top_loss_invariant_under_monotone_transform() {
        let mut a = ctx((0..6).collect(), 3);
        a.predicted_losses = Some(vec![0.3, 1.2, -0.5, 2.0, 0.9, 0.0]);
        let mut b = a.clone();
        b.predicted_losses =
            Some(a.predicted_losses.as_ref().unwrap().iter().map(|v| (3.0 * v).exp()).collect());
        let sa = select_top_predicted_loss(&a, Strategy::Listwise).unwrap();
        let sb = select_top_predicted_loss(&b, Strategy::Listwise).unwrap();
        assert_eq!(sa.chosen, sb.chosen);
    }
}
