use std::collections::HashMap;

use crate::textmodel::{split_words, Vocab};

/// Content tokens: the shared tokenizer with standalone punctuation dropped.
fn words(text: &str) -> Vec<String> {
    split_words(text)
        .into_iter()
        .filter(|t| !Vocab::is_punctuation(t))
        .collect()
}

fn counts<'a, T: Eq + std::hash::Hash + 'a>(items: impl Iterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap<T: Eq + std::hash::Hash>(a: &HashMap<T, usize>, b: &HashMap<T, usize>) -> usize {
    a.iter()
        .map(|(k, &c)| c.min(b.get(k).copied().unwrap_or(0)))
        .sum()
}

fn f1(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F-measure with clipped n-gram counts. Zero when the reference has no n-grams.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    let (c, r) = (words(candidate), words(reference));
    let cg = counts(c.windows(n));
    let rg = counts(r.windows(n));
    f1(
        clipped_overlap(&cg, &rg),
        c.len().saturating_sub(n - 1),
        r.len().saturating_sub(n - 1),
    )
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L: harmonic mean of LCS precision and recall.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    f1(lcs_len(&c, &r), c.len(), r.len())
}

/// Bag-of-tokens F1 with clipped counts; two empty texts agree perfectly.
pub fn token_f1(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    if c.is_empty() || r.is_empty() {
        return if c.is_empty() && r.is_empty() { 1.0 } else { 0.0 };
    }
    f1(
        clipped_overlap(&counts(c.iter()), &counts(r.iter())),
        c.len(),
        r.len(),
    )
}
