use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::EntropyProfile;
use crate::error::{Error, Result};
use crate::taskeval::{cosine, SimilarityProvider};
use crate::textmodel::{join_words, split_words};

/// Cosine below which an introduced entity counts as hallucinated.
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.6;

const BUNDLED: &str = include_str!("../../data/gazetteer.txt");

/// Canonical entity terms, matched on tokenized text.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    by_tokens: HashMap<Vec<String>, String>,
    max_len: usize,
}

impl Gazetteer {
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut by_tokens = HashMap::new();
        for term in terms {
            let toks = split_words(term.as_ref());
            if !toks.is_empty() {
                let canonical = term.as_ref().split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
                by_tokens.insert(toks, canonical);
            }
        }
        if by_tokens.is_empty() {
            return Err(Error::Config("gazetteer has no terms".into()));
        }
        let max_len = by_tokens.keys().map(Vec::len).max().unwrap_or(0);
        Ok(Self { by_tokens, max_len })
    }

    /// One term per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    /// The seed list shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled gazetteer is non-empty")
    }

    pub fn len(&self) -> usize {
        self.by_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_tokens.is_empty()
    }

    /// Canonical terms in sorted order.
    pub fn terms(&self) -> Vec<String> {
        let mut t: Vec<String> = self.by_tokens.values().cloned().collect();
        t.sort();
        t
    }

    pub fn contains(&self, term: &str) -> bool {
        self.by_tokens.contains_key(&split_words(term))
    }
}

/// A matched entity; `start..end` indexes the token list it was found in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub canonical: String,
}

/// Leftmost-longest matching over already-split, lowercase tokens.
pub fn extract_entities_from_tokens<S: AsRef<str>>(tokens: &[S], gazetteer: &Gazetteer) -> Vec<EntitySpan> {
    let toks: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let longest = (1..=gazetteer.max_len.min(toks.len() - i))
            .rev()
            .find_map(|len| gazetteer.by_tokens.get(&toks[i..i + len]).map(|c| (len, c)));
        match longest {
            Some((len, canonical)) => {
                spans.push(EntitySpan {
                    surface: join_words(&tokens[i..i + len]),
                    start: i,
                    end: i + len,
                    canonical: canonical.clone(),
                });
                i += len;
            }
            None => i += 1,
        }
    }
    spans
}

/// Entities in raw text, with span indices into `split_words(text)`.
pub fn extract_entities(text: &str, gazetteer: &Gazetteer) -> Vec<EntitySpan> {
    extract_entities_from_tokens(&split_words(text), gazetteer)
}

/// Order statistic with linear interpolation between closest ranks.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityStats {
    pub spans: usize,
    pub tokens: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Entropy quartiles of all tokens inside each canonical entity's spans.
/// Span indices refer to `profile.per_token`.
pub fn entity_entropy_stats(
    spans: &[EntitySpan],
    profile: &EntropyProfile,
) -> Result<BTreeMap<String, EntityStats>> {
    let mut pooled: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    for s in spans {
        if s.start >= s.end || s.end > profile.per_token.len() {
            return Err(Error::Input(format!(
                "span {}..{} outside profile of {} tokens",
                s.start,
                s.end,
                profile.per_token.len()
            )));
        }
        let entry = pooled.entry(s.canonical.clone()).or_default();
        entry.0 += 1;
        entry.1.extend(profile.per_token[s.start..s.end].iter().map(|p| p.1));
    }
    Ok(pooled
        .into_iter()
        .map(|(name, (spans, mut hs))| {
            hs.sort_by(f64::total_cmp);
            let stats = EntityStats {
                spans,
                tokens: hs.len(),
                q1: quantile(&hs, 0.25),
                median: quantile(&hs, 0.5),
                q3: quantile(&hs, 0.75),
            };
            (name, stats)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    /// Candidate entities whose canonical form never appears in the reference,
    /// one per distinct canonical (first occurrence).
    pub introduced_entities: Vec<EntitySpan>,
    /// Best cosine of each introduced entity against the reference entities.
    pub similarities: Vec<f64>,
    pub avg_introduced: f64,
    pub hallucination_rate: f64,
    pub threshold: f64,
}

pub fn hallucination_report<P: SimilarityProvider + ?Sized>(
    candidate: &str,
    reference: &str,
    gazetteer: &Gazetteer,
    embed: &P,
    threshold: f64,
) -> HallucinationReport {
    let mut reference_names: Vec<String> = extract_entities(reference, gazetteer)
        .into_iter()
        .map(|s| s.canonical)
        .collect();
    reference_names.sort();
    reference_names.dedup();
    let reference_vecs: Vec<Vec<f64>> = reference_names.iter().map(|n| embed.embed(n)).collect();

    let mut introduced: Vec<EntitySpan> = Vec::new();
    for span in extract_entities(candidate, gazetteer) {
        let known = reference_names.binary_search(&span.canonical).is_ok();
        if !known && !introduced.iter().any(|s| s.canonical == span.canonical) {
            introduced.push(span);
        }
    }
    let similarities: Vec<f64> = introduced
        .iter()
        .map(|s| {
            let v = embed.embed(&s.canonical);
            reference_vecs
                .iter()
                .map(|r| cosine(&v, r))
                .fold(0.0, f64::max)
        })
        .collect();
    let flagged = similarities.iter().filter(|&&s| s < threshold).count();
    HallucinationReport {
        avg_introduced: introduced.len() as f64,
        hallucination_rate: flagged as f64 / introduced.len().max(1) as f64,
        introduced_entities: introduced,
        similarities,
        threshold,
    }
}

/// Corpus-level view: mean introduced count per item and the pooled rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationSummary {
    pub items: usize,
    pub avg_introduced: f64,
    pub hallucination_rate: f64,
    pub threshold: f64,
}

pub fn summarize_reports(reports: &[HallucinationReport], threshold: f64) -> HallucinationSummary {
    let introduced: usize = reports.iter().map(|r| r.similarities.len()).sum();
    let flagged: usize = reports
        .iter()
        .flat_map(|r| &r.similarities)
        .filter(|&&s| s < threshold)
        .count();
    HallucinationSummary {
        items: reports.len(),
        avg_introduced: introduced as f64 / reports.len().max(1) as f64,
        hallucination_rate: flagged as f64 / introduced.max(1) as f64,
        threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaz(terms: &[&str]) -> Gazetteer {
        Gazetteer::new(terms.iter().copied()).unwrap()
    }

    /// Fixed 2-d embeddings: reference entity on the x axis, candidates at chosen angles.
    struct Fixed;

    impl SimilarityProvider for Fixed {
        fn embed(&self, text: &str) -> Vec<f64> {
            match text {
                "fever" => vec![1.0, 0.0],
                "flu" => vec![0.7, (1.0f64 - 0.49).sqrt()],
                "rash" => vec![0.4, (1.0f64 - 0.16).sqrt()],
                _ => vec![0.0, 1.0],
            }
        }
    }

    #[test]
    fn leftmost_longest() {
        let spans = extract_entities("chronic pain relief", &gaz(&["pain", "chronic pain"]));
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].surface, "chronic pain");
        assert_eq!((spans[0].start, spans[0].end), (0, 2));
    }

    #[test]
    fn no_terms_no_spans() {
        assert!(extract_entities("a quiet day", &gaz(&["pain"])).is_empty());
    }

    #[test]
    fn cancer_and_lung_cancer() {
        let spans = extract_entities("Cancer and lung cancer", &gaz(&["cancer", "lung cancer"]));
        let names: Vec<_> = spans.iter().map(|s| s.canonical.as_str()).collect();
        assert_eq!(names, ["cancer", "lung cancer"]);
        assert_eq!((spans[1].start, spans[1].end), (2, 4));
    }

    #[test]
    fn empty_gazetteer_is_configuration_error() {
        assert!(matches!(Gazetteer::parse("# nothing\n\n"), Err(Error::Config(_))));
    }

    #[test]
    fn bundled_list_has_common_terms() {
        let g = Gazetteer::bundled();
        for t in ["pain", "infection", "cancer", "diabetes"] {
            assert!(g.contains(t));
        }
    }

    #[test]
    fn quartiles_interpolate() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!((quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)), (1.5, 2.0, 2.5));
    }

    #[test]
    fn entity_stats_pool_span_tokens() {
        let profile = EntropyProfile::from_pairs(vec![(5, 2.0), (6, 1.0), (7, 3.0)], 0);
        let one = EntitySpan { surface: "pain".into(), start: 0, end: 1, canonical: "pain".into() };
        let stats = entity_entropy_stats(&[one], &profile).unwrap();
        assert_eq!(stats["pain"].median, 2.0);
        assert!(!stats.contains_key("cancer"));
        let wide = EntitySpan { surface: "x y z".into(), start: 0, end: 3, canonical: "x".into() };
        let s = &entity_entropy_stats(&[wide], &profile).unwrap()["x"];
        assert_eq!((s.q1, s.median, s.q3), (1.5, 2.0, 2.5));
        let bad = EntitySpan { surface: "z".into(), start: 2, end: 4, canonical: "z".into() };
        assert!(entity_entropy_stats(&[bad], &profile).is_err());
    }

    #[test]
    fn subset_entities_introduce_nothing() {
        let g = gaz(&["fever", "flu"]);
        let r = hallucination_report("fever again", "flu with fever", &g, &Fixed, 0.6);
        assert!(r.introduced_entities.is_empty());
        assert_eq!(r.hallucination_rate, 0.0);
    }

    #[test]
    fn empty_reference_flags_everything() {
        let g = gaz(&["fever", "flu"]);
        let r = hallucination_report("flu", "nothing relevant", &g, &Fixed, 0.6);
        assert_eq!(r.similarities, vec![0.0]);
        assert_eq!(r.hallucination_rate, 1.0);
    }

    #[test]
    fn threshold_splits_introduced_entities() {
        let g = gaz(&["fever", "flu", "rash"]);
        let r = hallucination_report("flu and rash", "fever", &g, &Fixed, 0.6);
        assert_eq!(r.introduced_entities.len(), 2);
        assert!((r.similarities[0] - 0.7).abs() < 1e-12);
        assert!((r.similarities[1] - 0.4).abs() < 1e-12);
        assert_eq!(r.hallucination_rate, 0.5);
        assert_eq!(r.avg_introduced, 2.0);
    }

    #[test]
    fn summary_pools_items() {
        let g = gaz(&["fever", "flu", "rash"]);
        let a = hallucination_report("flu and rash", "fever", &g, &Fixed, 0.6);
        let b = hallucination_report("fever", "fever", &g, &Fixed, 0.6);
        let s = summarize_reports(&[a, b], 0.6);
        assert_eq!((s.items, s.avg_introduced, s.hallucination_rate), (2, 1.0, 0.5));
    }

    proptest! {
        #[test]
        fn spans_are_ordered_and_disjoint(words in prop::collection::vec(
            prop::sample::select(vec!["lung", "cancer", "pain", "chronic", "and", "the"]), 0..30)
        ) {
            let g = gaz(&["cancer", "lung cancer", "pain", "chronic pain"]);
            let spans = extract_entities_from_tokens(&words, &g);
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for s in &spans {
                prop_assert!(s.start < s.end);
                prop_assert_eq!(join_words(&words[s.start..s.end]), s.surface.clone());
            }
        }

        #[test]
        fn lower_threshold_flags_no_more(t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let g = gaz(&["fever", "flu", "rash"]);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = hallucination_report("flu rash pain", "fever", &g, &Fixed, lo);
            let b = hallucination_report("flu rash pain", "fever", &g, &Fixed, hi);
            prop_assert!(a.hallucination_rate <= b.hallucination_rate);
        }
    }
}
