//! Token-entropy distributions and their shift, entity-level entropy, and
//! entity hallucination measurement.

mod entities;

pub use entities::{
    entity_entropy_stats, extract_entities, extract_entities_from_tokens, hallucination_report,
    quantile, summarize_reports, EntitySpan, EntityStats, Gazetteer, HallucinationReport,
    HallucinationSummary, DEFAULT_SIMILARITY_THRESHOLD,
};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmodel::LanguageModel;

/// Width of one entropy bin in nats.
pub const BIN_WIDTH: f64 = 0.25;
/// Upper edge of the regular bins; larger entropies land in the overflow bin.
pub const BIN_LIMIT: f64 = 8.0;
/// Regular bins plus one overflow bin.
pub const NUM_BINS: usize = 33;

/// Histogram slot for an entropy value.
pub fn bin_index(h: f64) -> usize {
    if h >= BIN_LIMIT {
        NUM_BINS - 1
    } else {
        ((h.max(0.0) / BIN_WIDTH) as usize).min(NUM_BINS - 2)
    }
}

/// `[low, high)` edges of a bin; the overflow bin's upper edge is infinite.
pub fn bin_edges(i: usize) -> (f64, f64) {
    if i == NUM_BINS - 1 {
        (BIN_LIMIT, f64::INFINITY)
    } else {
        (i as f64 * BIN_WIDTH, (i + 1) as f64 * BIN_WIDTH)
    }
}

/// Per-token entropies of one text and their histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    /// `(token id, entropy of the distribution it was drawn from)`.
    pub per_token: Vec<(u32, f64)>,
    pub histogram: Vec<u64>,
    pub total_mass: u64,
    /// Index in the scored sequence of `per_token[0]`.
    pub start: usize,
}

impl EntropyProfile {
    pub fn from_pairs(per_token: Vec<(u32, f64)>, start: usize) -> Self {
        let mut histogram = vec![0u64; NUM_BINS];
        for &(_, h) in &per_token {
            histogram[bin_index(h)] += 1;
        }
        Self {
            total_mass: per_token.len() as u64,
            per_token,
            histogram,
            start,
        }
    }

    /// Pools several profiles into one histogram (token lists are concatenated).
    pub fn merge<'a>(profiles: impl IntoIterator<Item = &'a EntropyProfile>) -> Self {
        let pairs = profiles
            .into_iter()
            .flat_map(|p| p.per_token.iter().copied())
            .collect();
        Self::from_pairs(pairs, 0)
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.per_token.iter().map(|p| p.1).collect()
    }

    /// `bin_low,bin_high,count` rows for plotting.
    pub fn write_histogram_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_low,bin_high,count")?;
        for (i, c) in self.histogram.iter().enumerate() {
            let (lo, hi) = bin_edges(i);
            writeln!(out, "{lo},{hi},{c}")?;
        }
        Ok(())
    }
}

/// Entropies of every position `1..len` of `seq` under `model`.
pub fn entropy_profile<M: LanguageModel + ?Sized>(seq: &[u32], model: &M) -> Result<EntropyProfile> {
    entropy_profile_from(seq, model, 1)
}

/// Entropies of positions `max(start, 1)..len`, conditioning on the full prefix.
pub fn entropy_profile_from<M: LanguageModel + ?Sized>(
    seq: &[u32],
    model: &M,
    start: usize,
) -> Result<EntropyProfile> {
    if seq.len() < 2 {
        return Err(Error::Input("entropy profile needs at least 2 tokens".into()));
    }
    let start = start.max(1);
    let pairs = seq[start..]
        .iter()
        .copied()
        .zip(model.entropies_from(seq, start))
        .collect();
    Ok(EntropyProfile::from_pairs(pairs, start))
}

/// Total-variation distance between the normalized histograms.
pub fn histogram_shift(reference: &EntropyProfile, candidate: &EntropyProfile) -> Result<f64> {
    if reference.histogram.len() != candidate.histogram.len() {
        return Err(Error::Input("profiles use different binning".into()));
    }
    let (a, b) = (reference.total_mass as f64, candidate.total_mass as f64);
    if a == 0.0 || b == 0.0 {
        return Err(Error::Input("cannot compare an empty profile".into()));
    }
    Ok(0.5
        * reference
            .histogram
            .iter()
            .zip(&candidate.histogram)
            .map(|(&p, &q)| (p as f64 / a - q as f64 / b).abs())
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmodel::StaticModel;
    use crate::wmcore::SplitMix64;

    fn with_counts(counts: &[(usize, u64)]) -> EntropyProfile {
        let pairs = counts
            .iter()
            .flat_map(|&(bin, c)| std::iter::repeat_n((0u32, bin as f64 * BIN_WIDTH + 0.1), c as usize))
            .collect();
        EntropyProfile::from_pairs(pairs, 0)
    }

    #[test]
    fn point_mass_model_fills_first_bin() {
        let p = entropy_profile(&[2, 2, 2, 2, 2], &StaticModel::point_mass(4, 2)).unwrap();
        assert_eq!(p.histogram[0], 4);
        assert!(p.entropies().iter().all(|h| *h == 0.0));
    }

    #[test]
    fn uniform_sixteen_lands_in_its_bin() {
        let p = entropy_profile(&[0, 1, 2, 3], &StaticModel::uniform(16)).unwrap();
        assert!((p.per_token[0].1 - 16f64.ln()).abs() < 1e-12);
        assert_eq!(bin_edges(11), (2.75, 3.0));
        assert_eq!(p.histogram[11], 3);
    }

    #[test]
    fn histogram_conserves_mass() {
        let mut rng = SplitMix64::new(2);
        let pairs: Vec<(u32, f64)> = (0..500).map(|i| (i, rng.next_f64() * 10.0)).collect();
        let p = EntropyProfile::from_pairs(pairs, 0);
        assert_eq!(p.histogram.iter().sum::<u64>(), 500);
        assert_eq!(p.histogram.len(), NUM_BINS);
    }

    #[test]
    fn shift_examples() {
        let a = with_counts(&[(0, 10), (4, 10)]);
        assert_eq!(histogram_shift(&a, &a).unwrap(), 0.0);
        let b = with_counts(&[(1, 5), (9, 5)]);
        assert_eq!(histogram_shift(&a, &b).unwrap(), 1.0);
        let moved = with_counts(&[(0, 90), (1, 10)]);
        let base = with_counts(&[(0, 100)]);
        assert!((histogram_shift(&base, &moved).unwrap() - 0.10).abs() < 1e-12);
    }

    #[test]
    fn shift_is_a_metric_on_random_triples() {
        let mut rng = SplitMix64::new(5);
        let mut random = || {
            let counts: Vec<(usize, u64)> =
                (0..NUM_BINS - 1).map(|b| (b, rng.next_below(6))).collect();
            with_counts(&counts)
        };
        for _ in 0..100 {
            let (a, b, c) = (random(), random(), random());
            let ab = histogram_shift(&a, &b).unwrap();
            assert_eq!(ab, histogram_shift(&b, &a).unwrap());
            assert_eq!(histogram_shift(&a, &a).unwrap(), 0.0);
            let bc = histogram_shift(&b, &c).unwrap();
            let ac = histogram_shift(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn csv_has_one_row_per_bin() {
        let mut buf = Vec::new();
        with_counts(&[(3, 2)]).write_histogram_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), NUM_BINS + 1);
        assert!(text.lines().last().unwrap().starts_with("8,inf,"));
    }
}
