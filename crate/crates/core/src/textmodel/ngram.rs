use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dist::ProbDist;
use super::LanguageModel;
use super::vocab::{split_words, Vocab, BOS_ID};
use crate::error::{Error, Result};

const FORMAT: &str = "factmark-ngram";
const FORMAT_VERSION: u32 = 1;

/// Training parameters for [`NgramModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub order: usize,
    pub smoothing_k: f64,
    /// Words seen fewer times than this map to `<unk>`.
    pub min_count: u64,
    pub max_vocab: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            order: 3,
            smoothing_k: 0.01,
            min_count: 1,
            max_vocab: None,
        }
    }
}

/// Log-probability and rank of one scored token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenScore {
    pub logp: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    /// (token id, count), ascending by token id.
    next: Vec<(u32, u64)>,
}

/// Interpolated additive-smoothed n-gram model.
///
/// The order-1 estimate is `(c(w) + k) / (N + k V)`. Each higher order uses the
/// lower-order distribution as its prior:
/// `P(w | h) = (c(h, w) + k V P(w | h')) / (c(h) + k V)`,
/// so unseen contexts fall back to the next shorter one exactly. `V` counts
/// every id except `<s>`, which never receives mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct NgramModel {
    order: usize,
    smoothing_k: f64,
    vocab: Vocab,
    /// `tables[m]` maps contexts of length `m` to their continuation counts.
    tables: Vec<BTreeMap<Vec<u32>, ContextCounts>>,
    unigram: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    smoothing_k: f64,
    vocab: Vocab,
    tables: Vec<Vec<TableEntry>>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    context: Vec<u32>,
    total: u64,
    next: Vec<(u32, u64)>,
}

impl From<NgramModel> for ModelFile {
    fn from(m: NgramModel) -> Self {
        ModelFile {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            order: m.order,
            smoothing_k: m.smoothing_k,
            vocab: m.vocab,
            tables: m
                .tables
                .into_iter()
                .map(|t| {
                    t.into_iter()
                        .map(|(context, c)| TableEntry {
                            context,
                            total: c.total,
                            next: c.next,
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for NgramModel {
    type Error = String;

    fn try_from(f: ModelFile) -> std::result::Result<Self, String> {
        if f.format != FORMAT || f.version != FORMAT_VERSION {
            return Err(format!(
                "unsupported model format {} v{}",
                f.format, f.version
            ));
        }
        if f.tables.len() != f.order {
            return Err("table count does not match order".into());
        }
        let tables = f
            .tables
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|e| {
                        (
                            e.context,
                            ContextCounts {
                                total: e.total,
                                next: e.next,
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        NgramModel::assemble(f.order, f.smoothing_k, f.vocab, tables).map_err(|e| e.to_string())
    }
}

impl NgramModel {
    /// Trains on `corpus` (one document per entry), building the vocabulary from it.
    pub fn train<S: AsRef<str>>(corpus: &[S], config: &TrainConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        let vocab = Vocab::build(corpus, config.min_count, config.max_vocab);
        Self::train_with_vocab(corpus, vocab, config.order, config.smoothing_k)
    }

    /// Trains on `corpus` with a fixed vocabulary.
    pub fn train_with_vocab<S: AsRef<str>>(
        corpus: &[S],
        vocab: Vocab,
        order: usize,
        smoothing_k: f64,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        if !(1..=5).contains(&order) {
            return Err(Error::Config(format!("order must be in 1..=5, got {order}")));
        }
        if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing_k must be positive, got {smoothing_k}"
            )));
        }
        let mut raw: Vec<BTreeMap<Vec<u32>, BTreeMap<u32, u64>>> = vec![BTreeMap::new(); order];
        let mut padded = Vec::new();
        for doc in corpus {
            let ids = vocab.encode_words(&split_words(doc.as_ref()));
            if ids.is_empty() {
                continue;
            }
            padded.clear();
            padded.resize(order - 1, BOS_ID);
            padded.extend_from_slice(&ids);
            for pos in (order - 1)..padded.len() {
                let target = padded[pos];
                for (m, table) in raw.iter_mut().enumerate() {
                    let ctx = &padded[pos - m..pos];
                    *table
                        .entry(ctx.to_vec())
                        .or_default()
                        .entry(target)
                        .or_default() += 1;
                }
            }
        }
        if raw[0].is_empty() {
            return Err(Error::Config("training corpus contains no tokens".into()));
        }
        let tables = raw
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|(ctx, next)| {
                        let total = next.values().sum();
                        (
                            ctx,
                            ContextCounts {
                                total,
                                next: next.into_iter().collect(),
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        Self::assemble(order, smoothing_k, vocab, tables)
    }

    fn assemble(
        order: usize,
        smoothing_k: f64,
        vocab: Vocab,
        tables: Vec<BTreeMap<Vec<u32>, ContextCounts>>,
    ) -> Result<Self> {
        let v = vocab.len();
        let unigram_counts = tables
            .first()
            .and_then(|t| t.get(&[][..]))
            .ok_or_else(|| Error::Config("model has no unigram counts".into()))?;
        let pseudo = smoothing_k * (v - 1) as f64;
        let denom = unigram_counts.total as f64 + pseudo;
        let mut unigram = vec![smoothing_k / denom; v];
        unigram[BOS_ID as usize] = 0.0;
        for &(id, c) in &unigram_counts.next {
            if id as usize >= v {
                return Err(Error::Config(format!("token id {id} outside vocabulary")));
            }
            unigram[id as usize] += c as f64 / denom;
        }
        Ok(Self {
            order,
            smoothing_k,
            vocab,
            tables,
            unigram,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// The order-1 distribution.
    pub fn unigram(&self) -> ProbDist {
        ProbDist::from_normalized(self.unigram.clone())
    }


    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl LanguageModel for NgramModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Next-token distribution after `context` (the full history; only the
    /// last `order - 1` ids matter, left-padded with `<s>`).
    fn next_dist(&self, context: &[u32]) -> ProbDist {
        let mut probs = self.unigram.clone();
        let pseudo = self.smoothing_k * (self.vocab.len() - 1) as f64;
        let mut key: Vec<u32> = Vec::with_capacity(self.order);
        for m in 1..self.order {
            key.clear();
            let have = context.len().min(m);
            key.resize(m - have, BOS_ID);
            key.extend_from_slice(&context[context.len() - have..]);
            // A longer context can only have been seen if its suffix was.
            let Some(counts) = self.tables[m].get(&key) else {
                break;
            };
            let denom = counts.total as f64 + pseudo;
            let scale = pseudo / denom;
            probs.iter_mut().for_each(|p| *p *= scale);
            for &(id, c) in &counts.next {
                probs[id as usize] += c as f64 / denom;
            }
        }
        ProbDist::from_normalized(probs)
    }

    fn background_dist(&self) -> ProbDist {
        self.unigram()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bigram(corpus: &[&str]) -> NgramModel {
        NgramModel::train(
            corpus,
            &TrainConfig {
                order: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap()
    }

    fn id(m: &NgramModel, w: &str) -> u32 {
        m.vocab().id(w).unwrap()
    }

    #[test]
    fn bigram_prefers_observed_continuation() {
        let m = bigram(&["a b a b"]);
        let d = m.next_dist(&[id(&m, "a")]);
        assert!(d.prob(id(&m, "b")) > d.prob(id(&m, "a")));
    }

    #[test]
    fn argmax_after_a_is_b() {
        let m = bigram(&["a b a b a b"]);
        let d = m.next_dist(&[id(&m, "a")]);
        let argmax = (0..d.len() as u32)
            .max_by(|&x, &y| d.prob(x).total_cmp(&d.prob(y)))
            .unwrap();
        assert_eq!(argmax, id(&m, "b"));
    }

    #[test]
    fn single_type_corpus_is_near_point_mass() {
        let m = NgramModel::train(
            &["x x x x x x x x"],
            &TrainConfig {
                order: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(m.next_dist(&[]).prob(id(&m, "x")) > 0.99);
    }

    #[test]
    fn unseen_context_falls_back_to_unigram() {
        let m = bigram(&["a b c a b c"]);
        // `<unk>` never occurs as a context, so the bigram level is skipped.
        let d = m.next_dist(&[0]);
        assert_eq!(d.probs(), m.unigram().probs());
    }

    #[test]
    fn uniform_counts_give_log4_entropy() {
        // x and y fall below min_count and become <unk>, giving four equal counts.
        let m = NgramModel::train(
            &["a a b b c c x y"],
            &TrainConfig {
                order: 1,
                min_count: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!((m.next_dist(&[]).entropy() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bos_never_receives_mass() {
        let m = bigram(&["a b c"]);
        assert_eq!(m.next_dist(&[id(&m, "a")]).prob(BOS_ID), 0.0);
    }

    #[test]
    fn rejects_bad_configuration() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            NgramModel::train(&empty, &TrainConfig::default()),
            Err(Error::Config(_))
        ));
        let bad_order = TrainConfig {
            order: 6,
            ..TrainConfig::default()
        };
        assert!(NgramModel::train(&["a"], &bad_order).is_err());
        let bad_k = TrainConfig {
            smoothing_k: 0.0,
            ..TrainConfig::default()
        };
        assert!(NgramModel::train(&["a"], &bad_k).is_err());
    }

    #[test]
    fn perplexity_needs_two_tokens() {
        let m = bigram(&["a b"]);
        assert!(matches!(m.perplexity(&[2]), Err(Error::Input(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = NgramModel::train(
            &["the cat sat on the mat .", "the dog sat ."],
            &TrainConfig::default(),
        )
        .unwrap();
        let back = NgramModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.to_json().unwrap(), back.to_json().unwrap());
    }
}
