//! Detection metrics over score samples and reference-based quality metrics.

mod overlap;
mod similarity;

pub use overlap::{rouge_l, rouge_n, token_f1};
pub use similarity::{
    cosine, fnv1a64, similarity, text_hash, CooccurrenceEmbedder, EmbeddingRecord,
    ExternalEmbeddings, SimilarityProvider,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmodel::LanguageModel;
use crate::wmcore::ScoreKind;

/// Which side of the score scale indicates the positive (watermarked) class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsPositive,
    LowerIsPositive,
}

impl From<ScoreKind> for Direction {
    fn from(kind: ScoreKind) -> Self {
        if kind.higher_is_positive() {
            Direction::HigherIsPositive
        } else {
            Direction::LowerIsPositive
        }
    }
}

/// Scores for positive and negative texts from one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
    pub direction: Direction,
}

impl ScorePair {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>, direction: Direction) -> Self {
        Self {
            positives,
            negatives,
            direction,
        }
    }

    fn check(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::Input("both score lists must be non-empty".into()));
        }
        Ok(())
    }

    /// Scores mapped so that larger always means "more positive".
    fn oriented(&self) -> (Vec<f64>, Vec<f64>) {
        let sign = match self.direction {
            Direction::HigherIsPositive => 1.0,
            Direction::LowerIsPositive => -1.0,
        };
        (
            self.positives.iter().map(|s| s * sign).collect(),
            self.negatives.iter().map(|s| s * sign).collect(),
        )
    }
}

/// Fraction of positives strictly beyond the strictest negative.
pub fn tpr_at_fpr0(pairs: &ScorePair) -> Result<f64> {
    pairs.check()?;
    let (pos, neg) = pairs.oriented();
    let threshold = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(pos.iter().filter(|&&s| s > threshold).count() as f64 / pos.len() as f64)
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half (rank-sum form of the Mann–Whitney statistic).
pub fn auroc(pairs: &ScorePair) -> Result<f64> {
    pairs.check()?;
    let (pos, neg) = pairs.oriented();
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// One operating point: texts scoring at or beyond `threshold` (in the
/// detector's own direction) are called positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Empirical ROC curve from `(0, 0)` to `(1, 1)`, one point per distinct score.
pub fn roc_curve(pairs: &ScorePair) -> Result<Vec<RocPoint>> {
    pairs.check()?;
    let (pos, neg) = pairs.oriented();
    let sign = if pairs.direction == Direction::HigherIsPositive { 1.0 } else { -1.0 };
    let mut cuts: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let rate = |v: &[f64], t: f64| v.iter().filter(|&&s| s >= t).count() as f64 / v.len() as f64;
    let mut out = vec![RocPoint { threshold: f64::INFINITY * sign, fpr: 0.0, tpr: 0.0 }];
    out.extend(cuts.into_iter().map(|t| RocPoint {
        threshold: t * sign,
        fpr: rate(&neg, t),
        tpr: rate(&pos, t),
    }));
    Ok(out)
}

/// Perplexity of `candidate` minus perplexity of `baseline`.
pub fn perplexity_delta<M: LanguageModel + ?Sized>(
    model: &M,
    candidate: &[u32],
    baseline: &[u32],
) -> Result<f64> {
    Ok(model.perplexity(candidate)? - model.perplexity(baseline)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_endpoints_and_area() {
        let p = ScorePair::new(vec![0.9, 0.8, 0.4], vec![0.5, 0.3, 0.1, 0.8], Direction::HigherIsPositive);
        let roc = roc_curve(&p).unwrap();
        assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(roc.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
        // Trapezoid area under the step curve equals the tie-aware AUROC.
        let area: f64 = roc.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0).sum();
        assert!((area - auroc(&p).unwrap()).abs() < 1e-12);
        let flipped = ScorePair::new(vec![-0.9], vec![-0.1], Direction::LowerIsPositive);
        assert_eq!(roc_curve(&flipped).unwrap()[1].threshold, -0.9);
    }
    use crate::wmcore::SplitMix64;
    use proptest::prelude::*;

    fn hi(p: &[f64], n: &[f64]) -> ScorePair {
        ScorePair::new(p.to_vec(), n.to_vec(), Direction::HigherIsPositive)
    }

    fn brute_auroc(p: &[f64], n: &[f64]) -> f64 {
        let mut wins = 0.0;
        for a in p {
            for b in n {
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        wins / (p.len() * n.len()) as f64
    }

    #[test]
    fn tpr_examples() {
        assert_eq!(tpr_at_fpr0(&hi(&[5.0, 6.0], &[1.0, 2.0])).unwrap(), 1.0);
        assert_eq!(tpr_at_fpr0(&hi(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0])).unwrap(), 0.0);
        assert!((tpr_at_fpr0(&hi(&[3.0, 5.0, 7.0], &[2.0, 4.0])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(tpr_at_fpr0(&hi(&[], &[1.0])).is_err());
    }

    #[test]
    fn lower_is_positive_flips_threshold() {
        let p = ScorePair::new(vec![0.001, 0.5], vec![0.02, 0.9], Direction::LowerIsPositive);
        assert_eq!(tpr_at_fpr0(&p).unwrap(), 0.5);
        assert_eq!(auroc(&p).unwrap(), 0.75);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&hi(&[5.0, 6.0], &[1.0, 2.0])).unwrap(), 1.0);
        assert_eq!(auroc(&hi(&[2.0; 4], &[2.0; 3])).unwrap(), 0.5);
        assert_eq!(auroc(&hi(&[3.0, 5.0], &[4.0])).unwrap(), 0.5);
    }

    #[test]
    fn auroc_matches_pair_counting_50x50() {
        let mut rng = SplitMix64::new(12);
        for _ in 0..20 {
            // Coarse values force plenty of ties.
            let p: Vec<f64> = (0..50).map(|_| rng.next_below(20) as f64).collect();
            let n: Vec<f64> = (0..50).map(|_| rng.next_below(15) as f64).collect();
            assert_eq!(auroc(&hi(&p, &n)).unwrap(), brute_auroc(&p, &n));
        }
    }

    proptest! {
        #[test]
        fn adding_a_larger_negative_never_raises_tpr(
            p in prop::collection::vec(-10.0f64..10.0, 1..20),
            n in prop::collection::vec(-10.0f64..10.0, 1..20),
            extra in 0.0f64..5.0,
        ) {
            let before = tpr_at_fpr0(&hi(&p, &n)).unwrap();
            let mut n2 = n.clone();
            n2.push(n.iter().copied().fold(f64::NEG_INFINITY, f64::max) + extra);
            prop_assert!(tpr_at_fpr0(&hi(&p, &n2)).unwrap() <= before);
        }

        #[test]
        fn auroc_equals_pair_count(
            p in prop::collection::vec(0u8..10, 1..30),
            n in prop::collection::vec(0u8..10, 1..30),
        ) {
            let p: Vec<f64> = p.into_iter().map(f64::from).collect();
            let n: Vec<f64> = n.into_iter().map(f64::from).collect();
            prop_assert!((auroc(&hi(&p, &n)).unwrap() - brute_auroc(&p, &n)).abs() < 1e-12);
        }
    }
}
