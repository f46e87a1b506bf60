//! Detectors that need no generation-time marking: mean log-rank and a
//! perturbation-curvature statistic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmodel::LanguageModel;
use crate::wmcore::{DetectionScore, ScoreKind, SplitMix64};

/// Floor added to the perturbation spread.
pub const CURVATURE_EPS: f64 = 1e-8;

/// Mean `ln(rank)` over already-computed ranks.
pub fn mean_log_rank(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Input("no ranks to average".into()));
    }
    Ok(ranks.iter().map(|r| r.ln()).sum::<f64>() / ranks.len() as f64)
}

/// Average log-rank of positions `1..len` under the model; lower is more model-like.
pub fn logrank_score<M: LanguageModel + ?Sized>(seq: &[u32], model: &M) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::Input("log-rank needs at least 2 tokens".into()));
    }
    let ranks: Vec<f64> = model
        .log_prob_and_rank(seq)
        .iter()
        .map(|s| s.rank as f64)
        .collect();
    mean_log_rank(&ranks)
}

pub fn logrank_detect<M: LanguageModel + ?Sized>(
    seq: &[u32],
    model: &M,
    threshold: f64,
) -> Result<DetectionScore> {
    Ok(DetectionScore::new(
        logrank_score(seq, model)?,
        ScoreKind::Logrank,
        threshold,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvatureParams {
    pub num_perturbations: usize,
    pub perturb_fraction: f64,
}

impl Default for CurvatureParams {
    fn default() -> Self {
        Self {
            num_perturbations: 20,
            perturb_fraction: 0.15,
        }
    }
}

/// Curvature statistic plus whether the perturbation spread collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureScore {
    pub score: f64,
    pub degenerate: bool,
}

fn total_logp<M: LanguageModel + ?Sized>(seq: &[u32], model: &M) -> f64 {
    model.log_prob_and_rank(seq).iter().map(|s| s.logp).sum()
}

/// `(logp(x) - mean_k logp(x̃_k)) / (std_k + ε)` where each `x̃_k` replaces
/// `ceil(fraction·len)` random positions with draws from the model's
/// background distribution. Position 0 is context only and never replaced.
pub fn detectgpt_score<M: LanguageModel + ?Sized>(
    text: &[u32],
    model: &M,
    params: &CurvatureParams,
    rng_seed: u64,
) -> Result<CurvatureScore> {
    if params.num_perturbations < 2 {
        return Err(Error::Config("num_perturbations must be >= 2".into()));
    }
    if !(0.0..=1.0).contains(&params.perturb_fraction) {
        return Err(Error::Config("perturb_fraction must be in [0, 1]".into()));
    }
    if text.len() < 2 {
        return Err(Error::Input("curvature needs at least 2 tokens".into()));
    }
    let background = model.background_dist();
    let mut rng = SplitMix64::new(rng_seed);
    let scored = text.len() - 1;
    let replace = ((params.perturb_fraction * scored as f64).ceil() as usize).min(scored);
    let original = total_logp(text, model);

    let perturbed: Vec<f64> = (0..params.num_perturbations)
        .map(|_| {
            let mut x = text.to_vec();
            // Partial Fisher–Yates picks `replace` distinct positions in 1..len.
            let mut slots: Vec<usize> = (1..text.len()).collect();
            for k in 0..replace {
                let j = k + rng.next_below((slots.len() - k) as u64) as usize;
                slots.swap(k, j);
                x[slots[k]] = background.sample_with(rng.next_f64());
            }
            total_logp(&x, model)
        })
        .collect();

    let k = perturbed.len() as f64;
    let mean = perturbed.iter().sum::<f64>() / k;
    let std = (perturbed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let numer = original - mean;
    let degenerate = std < CURVATURE_EPS;
    let score = if numer == 0.0 { 0.0 } else { numer / (std + CURVATURE_EPS) };
    Ok(CurvatureScore { score, degenerate })
}

pub fn detectgpt_detect<M: LanguageModel + ?Sized>(
    text: &[u32],
    model: &M,
    params: &CurvatureParams,
    rng_seed: u64,
    threshold: f64,
) -> Result<DetectionScore> {
    let c = detectgpt_score(text, model, params, rng_seed)?;
    Ok(
        DetectionScore::new(c.score, ScoreKind::Curvature, threshold)
            .with_detail("degenerate", if c.degenerate { 1.0 } else { 0.0 }),
    )
}

/// Threshold admitting no false positives on natural text: the maximum natural
/// score for higher-is-positive kinds, the minimum otherwise.
pub fn calibrate_threshold(natural_scores: &[f64], kind: ScoreKind) -> Result<f64> {
    let it = natural_scores.iter().copied();
    let t = if kind.higher_is_positive() {
        it.fold(f64::NEG_INFINITY, f64::max)
    } else {
        it.fold(f64::INFINITY, f64::min)
    };
    if natural_scores.is_empty() || !t.is_finite() {
        return Err(Error::Input("need finite natural scores to calibrate".into()));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmodel::{ProbDist, StaticModel};
    use proptest::prelude::*;

    #[test]
    fn rank_one_everywhere_scores_zero() {
        let m = StaticModel::point_mass(4, 2);
        assert_eq!(logrank_score(&[2, 2, 2, 2], &m).unwrap(), 0.0);
    }

    #[test]
    fn rank_e_everywhere_scores_one() {
        let e = std::f64::consts::E;
        assert!((mean_log_rank(&[e; 7]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn toy_model_ranks_match_sorted_oracle() {
        let probs = vec![0.1, 0.4, 0.2, 0.3];
        let m = StaticModel::new(ProbDist::new(probs.clone()).unwrap());
        let seq = [0, 1, 2, 3, 0];
        let mut sorted: Vec<usize> = (0..4).collect();
        sorted.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
        let expected: f64 = seq[1..]
            .iter()
            .map(|&t| ((sorted.iter().position(|&s| s == t as usize).unwrap() + 1) as f64).ln())
            .sum::<f64>()
            / 4.0;
        assert!((logrank_score(&seq, &m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn short_text_is_input_error() {
        let m = StaticModel::uniform(3);
        assert!(matches!(logrank_score(&[1], &m), Err(Error::Input(_))));
    }

    #[test]
    fn zero_fraction_is_degenerate_zero() {
        let m = StaticModel::new(ProbDist::new(vec![0.5, 0.3, 0.2]).unwrap());
        let params = CurvatureParams { num_perturbations: 5, perturb_fraction: 0.0 };
        let c = detectgpt_score(&[0, 1, 2, 0], &m, &params, 1).unwrap();
        assert_eq!(c, CurvatureScore { score: 0.0, degenerate: true });
    }

    #[test]
    fn argmax_text_has_positive_curvature() {
        let m = StaticModel::new(ProbDist::new(vec![0.4, 0.2, 0.15, 0.15, 0.1]).unwrap());
        let text = [0u32; 40];
        let positive = (0..100)
            .filter(|&s| detectgpt_score(&text, &m, &CurvatureParams::default(), s).unwrap().score > 0.0)
            .count();
        assert!(positive >= 95, "{positive}");
    }

    #[test]
    fn seeded_score_is_deterministic() {
        let m = StaticModel::new(ProbDist::new(vec![0.4, 0.3, 0.3]).unwrap());
        let t = [0, 1, 2, 1, 0, 0, 2];
        let p = CurvatureParams::default();
        assert_eq!(detectgpt_score(&t, &m, &p, 42).unwrap(), detectgpt_score(&t, &m, &p, 42).unwrap());
    }

    #[test]
    fn too_few_perturbations_rejected() {
        let m = StaticModel::uniform(3);
        let p = CurvatureParams { num_perturbations: 1, ..Default::default() };
        assert!(matches!(detectgpt_score(&[0, 1], &m, &p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn calibration_picks_strictest_natural() {
        assert_eq!(calibrate_threshold(&[1.0, 3.0, 2.0], ScoreKind::Curvature).unwrap(), 3.0);
        assert_eq!(calibrate_threshold(&[1.0, 3.0, 2.0], ScoreKind::Logrank).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn logrank_nonnegative_and_zero_iff_all_rank_one(
            w in prop::collection::vec(0.01f64..1.0, 3..8),
            seq in prop::collection::vec(0u32..3, 2..20),
        ) {
            let d = ProbDist::from_weights(w).unwrap();
            let m = StaticModel::new(d.clone());
            let s = logrank_score(&seq, &m).unwrap();
            prop_assert!(s >= 0.0);
            let all_top = seq[1..].iter().all(|&t| d.rank_of(t) == 1);
            prop_assert_eq!(s == 0.0, all_top);
        }
    }
}
