//! Tokenization, vocabularies, next-token distributions and the bundled
//! n-gram reference model.
//!
//! Every scheme and analysis in the crate talks to a model through
//! [`LanguageModel`], so the n-gram model can be swapped for any other
//! distribution provider.

mod dist;
mod ngram;
mod vocab;

pub use dist::{shannon_entropy, ProbDist, MASS_TOLERANCE};
pub use ngram::{NgramModel, TokenScore, TrainConfig};
pub use vocab::{join_words, split_words, TokenSeq, Vocab, BOS_ID, UNK_ID};

use crate::error::{Error, Result};

/// A source of next-token distributions over a fixed vocabulary.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Distribution of the token following `context`.
    fn next_dist(&self, context: &[u32]) -> ProbDist;

    /// Context-free distribution used for resampling perturbations.
    fn background_dist(&self) -> ProbDist {
        self.next_dist(&[])
    }

    /// Log-probability and rank for every position `t >= max(start, 1)` of `seq`.
    fn score_from(&self, seq: &[u32], start: usize) -> Vec<TokenScore> {
        (start.max(1)..seq.len())
            .map(|t| {
                let dist = self.next_dist(&seq[..t]);
                let y = seq[t];
                TokenScore {
                    logp: dist.prob(y).ln(),
                    rank: dist.rank_of(y),
                }
            })
            .collect()
    }

    /// Log-probability and rank for positions `1..len`.
    fn log_prob_and_rank(&self, seq: &[u32]) -> Vec<TokenScore> {
        self.score_from(seq, 1)
    }

    /// Entropy (nats) of the next-token distribution at positions `t >= max(start, 1)`.
    fn entropies_from(&self, seq: &[u32], start: usize) -> Vec<f64> {
        (start.max(1)..seq.len())
            .map(|t| self.next_dist(&seq[..t]).entropy())
            .collect()
    }

    /// Perplexity over positions `1..len`.
    fn perplexity(&self, seq: &[u32]) -> Result<f64> {
        self.perplexity_from(seq, 1)
    }

    /// Perplexity over positions `max(start, 1)..len`, conditioning on everything before.
    fn perplexity_from(&self, seq: &[u32], start: usize) -> Result<f64> {
        let scores = self.score_from(seq, start);
        if scores.is_empty() {
            return Err(Error::Input(
                "perplexity needs at least one scored position (length >= 2)".into(),
            ));
        }
        let mean = scores.iter().map(|s| s.logp).sum::<f64>() / scores.len() as f64;
        Ok((-mean).exp())
    }
}

/// A model whose next-token distribution ignores the context.
#[derive(Debug, Clone)]
pub struct StaticModel {
    dist: ProbDist,
}

impl StaticModel {
    pub fn new(dist: ProbDist) -> Self {
        Self { dist }
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(ProbDist::uniform(n))
    }

    pub fn point_mass(n: usize, id: u32) -> Self {
        Self::new(ProbDist::point_mass(n, id as usize))
    }
}

impl LanguageModel for StaticModel {
    fn vocab_size(&self) -> usize {
        self.dist.len()
    }

    fn next_dist(&self, _context: &[u32]) -> ProbDist {
        self.dist.clone()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_dist(&self, context: &[u32]) -> ProbDist {
        (**self).next_dist(context)
    }

    fn background_dist(&self) -> ProbDist {
        (**self).background_dist()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_perplexity_is_one() {
        let m = StaticModel::point_mass(3, 2);
        assert_eq!(m.perplexity(&[2, 2, 2, 2]).unwrap(), 1.0);
        assert!(m.log_prob_and_rank(&[2, 2, 2]).iter().all(|s| s.logp == 0.0 && s.rank == 1));
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let m = StaticModel::uniform(7);
        let ppl = m.perplexity(&[0, 3, 6, 1, 2]).unwrap();
        assert!((ppl - 7.0).abs() < 1e-9);
    }

    #[test]
    fn ranks_match_full_sort_on_toy_model() {
        let d = ProbDist::new(vec![0.2, 0.5, 0.3]).unwrap();
        let m = StaticModel::new(d.clone());
        // Oracle: sort ids by (-p, id) and read off positions.
        let mut order: Vec<u32> = (0..3).collect();
        order.sort_by(|&a, &b| d.prob(b).total_cmp(&d.prob(a)).then(a.cmp(&b)));
        let seq = [0, 0, 1, 2];
        for (s, &y) in m.log_prob_and_rank(&seq).iter().zip(&seq[1..]) {
            let expected = order.iter().position(|&t| t == y).unwrap() + 1;
            assert_eq!(s.rank, expected);
            assert!((s.logp - d.prob(y).ln()).abs() < 1e-15);
        }
    }
}
