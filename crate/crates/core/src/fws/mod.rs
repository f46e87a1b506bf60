//! Factuality-weighted scoring, its sensitivity to the weighting, human-rating
//! ingestion and the significance tests used to validate the aspects.

mod stats;

pub use stats::{
    average_ranks, chi_square_sf, friedman_nemenyi, gamma_q, nemenyi_critical_value,
    studentized_range_cdf, FriedmanNemenyi, PairwiseP, RatingMatrix,
};

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coherence, relevance (or completeness) and factual accuracy, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectScores {
    pub coherence: f64,
    pub relevance: f64,
    pub factual_accuracy: f64,
}

impl AspectScores {
    pub fn new(coherence: f64, relevance: f64, factual_accuracy: f64) -> Result<Self> {
        let s = Self {
            coherence,
            relevance,
            factual_accuracy,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("coherence", self.coherence),
            ("relevance", self.relevance),
            ("factual_accuracy", self.factual_accuracy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Unweighted mean of the three aspects.
    pub fn mean(&self) -> f64 {
        (self.coherence + self.relevance + self.factual_accuracy) / 3.0
    }
}

/// Weights of `α·(Rel + FactAcc) + β·Coh`, kept normalized so `2α + β = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwsConfig {
    pub alpha: f64,
    pub beta: f64,
}

/// The five weightings of the sensitivity study, as published (before renormalization).
pub const STUDY_CONFIGS: [(f64, f64); 5] =
    [(0.25, 0.5), (0.33, 0.33), (0.4, 0.2), (0.44, 0.11), (0.46, 0.08)];

impl FwsConfig {
    /// Rescales `(alpha, beta)` so that `2α + β = 1`.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) || !(alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Config(format!("weights must be non-negative, got ({alpha}, {beta})")));
        }
        let total = 2.0 * alpha + beta;
        if total <= 0.0 {
            return Err(Error::Config("weights cannot both be zero".into()));
        }
        Ok(Self {
            alpha: alpha / total,
            beta: beta / total,
        })
    }

    pub fn study_configs() -> Vec<FwsConfig> {
        STUDY_CONFIGS
            .iter()
            .map(|&(a, b)| FwsConfig::new(a, b).expect("valid constants"))
            .collect()
    }
}

impl Default for FwsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.2,
        }
    }
}

pub fn fws(scores: &AspectScores, config: &FwsConfig) -> f64 {
    config.alpha * (scores.relevance + scores.factual_accuracy) + config.beta * scores.coherence
}

/// Maps `raw` on a `[min, max]` scale onto [0, 1].
pub fn normalize_likert(raw: f64, scale_min: f64, scale_max: f64) -> Result<f64> {
    if !(scale_max > scale_min) {
        return Err(Error::Config(format!("invalid scale [{scale_min}, {scale_max}]")));
    }
    if !(scale_min..=scale_max).contains(&raw) {
        return Err(Error::Validation(format!(
            "{raw} outside scale [{scale_min}, {scale_max}]"
        )));
    }
    Ok((raw - scale_min) / (scale_max - scale_min))
}

/// Sample Pearson correlation, accumulated in one pass (Welford).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Input("correlation needs at least 3 pairs".into()));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 {
        return Err(Error::UndefinedCorrelation("x"));
    }
    if syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: FwsConfig,
    /// NaN (serialized as null) when the correlation is undefined.
    pub pearson_r: f64,
    pub defined: bool,
}

/// Pearson r between per-item FWS and human scores for each weighting.
pub fn sensitivity_sweep(
    scores: &[AspectScores],
    human: &[f64],
    configs: &[FwsConfig],
) -> Result<Vec<SweepRow>> {
    if scores.len() != human.len() {
        return Err(Error::Input(format!(
            "{} score rows but {} human values",
            scores.len(),
            human.len()
        )));
    }
    if scores.len() < 3 {
        return Err(Error::Input("sweep needs at least 3 items".into()));
    }
    configs
        .iter()
        .map(|config| {
            let f: Vec<f64> = scores.iter().map(|s| fws(s, config)).collect();
            match pearson(&f, human) {
                Ok(r) => Ok(SweepRow { config: *config, pearson_r: r, defined: true }),
                Err(Error::UndefinedCorrelation(_)) => Ok(SweepRow {
                    config: *config,
                    pearson_r: f64::NAN,
                    defined: false,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Automatic aspect scores from perplexity, similarity and hallucination rate.
pub fn aspects_from_metrics(perplexity: f64, similarity: f64, hallucination_rate: f64) -> AspectScores {
    AspectScores {
        coherence: (1.0 / (1.0 + perplexity.max(1.0).ln())).clamp(0.0, 1.0),
        relevance: ((similarity + 1.0) / 2.0).clamp(0.0, 1.0),
        factual_accuracy: (1.0 - hallucination_rate).clamp(0.0, 1.0),
    }
}

/// One rater's 1–5 judgement of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanRating {
    pub item_id: String,
    pub rater_id: String,
    pub coherence: u8,
    pub relevance: u8,
    pub factual_accuracy: u8,
}

/// Reads the `item_id,rater_id,coherence,relevance,factual_accuracy` CSV.
pub fn read_human_ratings<R: Read>(input: R) -> Result<Vec<HumanRating>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for (line, rec) in reader.deserialize::<HumanRating>().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("rating row {}: {e}", line + 1)))?;
        for v in [rec.coherence, rec.relevance, rec.factual_accuracy] {
            if !(1..=5).contains(&v) {
                return Err(Error::Validation(format!(
                    "rating {v} for item {} outside 1..=5",
                    rec.item_id
                )));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Averages raters per item and maps each aspect onto [0, 1].
pub fn aggregate_human(ratings: &[HumanRating]) -> Result<BTreeMap<String, AspectScores>> {
    let mut sums: BTreeMap<&str, ([f64; 3], usize)> = BTreeMap::new();
    for r in ratings {
        let e = sums.entry(&r.item_id).or_insert(([0.0; 3], 0));
        e.0[0] += r.coherence as f64;
        e.0[1] += r.relevance as f64;
        e.0[2] += r.factual_accuracy as f64;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(id, (s, n))| {
            let m = |v: f64| normalize_likert(v / n as f64, 1.0, 5.0);
            Ok((id.to_string(), AspectScores::new(m(s[0])?, m(s[1])?, m(s[2])?)?))
        })
        .collect()
}
