use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmodel::{split_words, Vocab};
use crate::wmcore::SplitMix64;

/// Interchangeable sentence embedding. Implementations return unit vectors
/// and are deterministic per input.
pub trait SimilarityProvider: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Cosine of two vectors; zero when either has no length.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity of the provider's embeddings of the two texts.
pub fn similarity<P: SimilarityProvider + ?Sized>(candidate: &str, reference: &str, provider: &P) -> f64 {
    cosine(&provider.embed(candidate), &provider.embed(reference))
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Lookup key of a text in an external embedding file.
pub fn text_hash(text: &str) -> String {
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Default offline embedder: each word owns a pseudo-random signed direction,
/// blended with the directions of its most frequent neighbours in a fitting
/// corpus; texts are TF-IDF-weighted sums of their word vectors.
#[derive(Debug, Clone)]
pub struct CooccurrenceEmbedder {
    dim: usize,
    context_weight: f64,
    idf: HashMap<String, f64>,
    default_idf: f64,
    neighbours: HashMap<String, Vec<(String, f64)>>,
}

impl Default for CooccurrenceEmbedder {
    /// Unfitted: identity directions only, uniform weights.
    fn default() -> Self {
        Self {
            dim: 256,
            context_weight: 0.5,
            idf: HashMap::new(),
            default_idf: 1.0,
            neighbours: HashMap::new(),
        }
    }
}

const WINDOW: usize = 2;
const TOP_NEIGHBOURS: usize = 8;

fn content_words(text: &str) -> Vec<String> {
    split_words(text)
        .into_iter()
        .filter(|t| !Vocab::is_punctuation(t))
        .collect()
}

impl CooccurrenceEmbedder {
    /// Learns IDF weights and co-occurrence neighbours (window ±2) from `corpus`.
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut co: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for doc in corpus {
            let words = content_words(doc.as_ref());
            let mut seen: Vec<&String> = words.iter().collect();
            seen.sort();
            seen.dedup();
            for w in seen {
                *df.entry(w.clone()).or_insert(0) += 1;
            }
            for (i, w) in words.iter().enumerate() {
                let hi = (i + WINDOW + 1).min(words.len());
                for c in &words[i + 1..hi] {
                    if c != w {
                        *co.entry(w.clone()).or_default().entry(c.clone()).or_insert(0) += 1;
                        *co.entry(c.clone()).or_default().entry(w.clone()).or_insert(0) += 1;
                    }
                }
            }
        }
        let n = corpus.len() as f64;
        let idf_of = |d: usize| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0;
        let idf = df.iter().map(|(w, &d)| (w.clone(), idf_of(d))).collect();
        let neighbours = co
            .into_iter()
            .map(|(w, cs)| {
                let mut v: Vec<(String, usize)> = cs.into_iter().collect();
                v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                v.truncate(TOP_NEIGHBOURS);
                (w, v.into_iter().map(|(c, k)| (c, k as f64)).collect())
            })
            .collect();
        Self {
            idf,
            default_idf: idf_of(0),
            neighbours,
            ..Self::default()
        }
    }

    /// Pseudo-random unit direction owned by `word`.
    fn direction(&self, word: &str) -> Vec<f64> {
        let mut rng = SplitMix64::new(fnv1a64(word.as_bytes()));
        let s = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| if rng.next_u64() >> 63 == 1 { s } else { -s })
            .collect()
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut v = self.direction(word);
        if let Some(ns) = self.neighbours.get(word) {
            let mut ctx = vec![0.0; self.dim];
            for (c, k) in ns {
                for (x, d) in ctx.iter_mut().zip(self.direction(c)) {
                    *x += k * d;
                }
            }
            for (x, c) in v.iter_mut().zip(normalize(ctx)) {
                *x += self.context_weight * c;
            }
        }
        v
    }
}

impl SimilarityProvider for CooccurrenceEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for w in content_words(text) {
            *tf.entry(w).or_insert(0.0) += 1.0;
        }
        if tf.is_empty() {
            return normalize(self.direction(""));
        }
        let mut out = vec![0.0; self.dim];
        for (w, f) in &tf {
            let weight = f * self.idf.get(w).copied().unwrap_or(self.default_idf);
            for (x, v) in out.iter_mut().zip(self.word_vector(w)) {
                *x += weight * v;
            }
        }
        normalize(out)
    }
}

/// One line of an external embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub text_hash: String,
    pub vector: Vec<f64>,
}

/// Precomputed embeddings keyed by [`text_hash`], falling back to another
/// provider (and counting the fallbacks) for texts not in the file.
pub struct ExternalEmbeddings {
    table: HashMap<String, Vec<f64>>,
    fallback: Box<dyn SimilarityProvider>,
    fallbacks: AtomicUsize,
}

impl ExternalEmbeddings {
    pub fn new(records: Vec<EmbeddingRecord>, fallback: Box<dyn SimilarityProvider>) -> Result<Self> {
        let mut table = HashMap::new();
        for r in records {
            if r.vector.iter().all(|x| *x == 0.0) || r.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!("unusable vector for {}", r.text_hash)));
            }
            table.insert(r.text_hash.to_lowercase(), normalize(r.vector));
        }
        Ok(Self {
            table,
            fallback,
            fallbacks: AtomicUsize::new(0),
        })
    }

    pub fn from_reader<R: BufRead>(input: R, fallback: Box<dyn SimilarityProvider>) -> Result<Self> {
        Self::new(crate::wmcore::read_jsonl(input)?, fallback)
    }

    /// Number of lookups served by the fallback provider so far.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl SimilarityProvider for ExternalEmbeddings {
    fn embed(&self, text: &str) -> Vec<f64> {
        match self.table.get(&text_hash(text)) {
            Some(v) => v.clone(),
            None => {
                self.fallbacks.fetch_add(1, Ordering::Relaxed);
                self.fallback.embed(text)
            }
        }
    }
}
