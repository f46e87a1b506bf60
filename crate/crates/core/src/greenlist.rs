//! Green-list watermarking (KGW) and its entropy-gated variant (SWEET).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::textmodel::ProbDist;
use crate::wmcore::{
    binomial_z, check_gamma, hash_context, previous_token, seeded_partition, DecodeHook,
    DetectionScore, Method, Partition, ScoreKind, StepAction, WatermarkKey,
};

/// Default one-sided z threshold for green-list detectors.
pub const DEFAULT_Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgwParams {
    pub gamma: f64,
    pub delta: f64,
}

impl Default for KgwParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            delta: 2.0,
        }
    }
}

impl KgwParams {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweetParams {
    pub gamma: f64,
    pub delta: f64,
    /// Entropy gate τ in nats.
    pub entropy_threshold: f64,
}

impl Default for SweetParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            delta: 2.0,
            entropy_threshold: 0.9,
        }
    }
}

impl SweetParams {
    pub fn validate(&self) -> Result<()> {
        self.kgw().validate()?;
        if !(self.entropy_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "entropy threshold must be >= 0, got {}",
                self.entropy_threshold
            )));
        }
        Ok(())
    }

    pub fn kgw(&self) -> KgwParams {
        KgwParams {
            gamma: self.gamma,
            delta: self.delta,
        }
    }
}

/// Adds `delta` to every green logit and renormalizes.
pub fn kgw_reweight(dist: &ProbDist, partition: &Partition, delta: f64) -> ProbDist {
    if delta == 0.0 {
        return dist.clone();
    }
    // Scaling red mass down by e^-δ instead of green up by e^δ gives the same
    // softmax without overflow for large δ.
    let damp = (-delta).exp();
    let weights: Vec<f64> = dist
        .probs()
        .iter()
        .enumerate()
        .map(|(i, &p)| if partition.is_green(i as u32) { p } else { p * damp })
        .collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        ProbDist::from_weights(weights).unwrap_or_else(|_| dist.clone())
    } else {
        dist.clone()
    }
}

/// KGW reweighting applied only when the distribution's entropy exceeds τ.
pub fn sweet_reweight(dist: &ProbDist, partition: &Partition, params: &SweetParams) -> ProbDist {
    if dist.entropy() > params.entropy_threshold {
        kgw_reweight(dist, partition, params.delta)
    } else {
        dist.clone()
    }
}

/// Memoizes the partition seeded by each previous token.
#[derive(Debug, Clone)]
pub struct PartitionCache {
    key: WatermarkKey,
    vocab_size: usize,
    gamma: f64,
    by_prev: HashMap<u32, Partition>,
}

impl PartitionCache {
    pub fn new(key: WatermarkKey, vocab_size: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            key,
            vocab_size,
            gamma,
            by_prev: HashMap::new(),
        })
    }

    pub fn get(&mut self, prev: u32) -> &Partition {
        let (key, v, g) = (self.key, self.vocab_size, self.gamma);
        self.by_prev.entry(prev).or_insert_with(|| {
            seeded_partition(hash_context(key, &[prev]), v, g).expect("gamma validated")
        })
    }
}

/// Green membership of positions `1..len` of `ids`, each judged by the
/// partition seeded from its predecessor.
pub fn green_flags(
    ids: &[u32],
    key: WatermarkKey,
    gamma: f64,
    vocab_size: usize,
) -> Result<Vec<bool>> {
    let mut cache = PartitionCache::new(key, vocab_size, gamma)?;
    Ok(ids
        .windows(2)
        .map(|w| cache.get(w[0]).is_green(w[1]))
        .collect())
}

fn green_z(hits: usize, n: usize, gamma: f64, z_threshold: f64) -> DetectionScore {
    DetectionScore::new(binomial_z(hits, n, gamma), ScoreKind::Z, z_threshold)
        .with_detail("scored", n as f64)
        .with_detail("green", hits as f64)
}

/// One-sided z-test on the green count. Position 0 only seeds the first partition.
pub fn kgw_detect(
    text_ids: &[u32],
    key: WatermarkKey,
    gamma: f64,
    vocab_size: usize,
    z_threshold: f64,
) -> Result<DetectionScore> {
    if text_ids.len() < 2 {
        return Err(Error::Input("detection needs at least 2 tokens".into()));
    }
    let flags = green_flags(text_ids, key, gamma, vocab_size)?;
    let hits = flags.iter().filter(|g| **g).count();
    Ok(green_z(hits, flags.len(), gamma, z_threshold))
}

/// z-test restricted to positions whose entropy exceeds τ.
/// `entropies[i]` belongs to scored position `i + 1` of `text_ids`.
pub fn sweet_detect(
    text_ids: &[u32],
    entropies: &[f64],
    key: WatermarkKey,
    params: &SweetParams,
    vocab_size: usize,
    z_threshold: f64,
) -> Result<DetectionScore> {
    if text_ids.len() < 2 {
        return Err(Error::Input("detection needs at least 2 tokens".into()));
    }
    if entropies.len() != text_ids.len() - 1 {
        return Err(Error::Input(format!(
            "{} entropies for {} scored positions",
            entropies.len(),
            text_ids.len() - 1
        )));
    }
    let flags = green_flags(text_ids, key, params.gamma, vocab_size)?;
    let (mut n, mut hits) = (0, 0);
    for (&green, &h) in flags.iter().zip(entropies) {
        if h > params.entropy_threshold {
            n += 1;
            hits += green as usize;
        }
    }
    if n == 0 {
        return Err(Error::Undetectable(format!(
            "no position has entropy above {}",
            params.entropy_threshold
        )));
    }
    Ok(green_z(hits, n, params.gamma, z_threshold))
}

/// Generation hook for KGW.
#[derive(Debug, Clone)]
pub struct KgwHook {
    params: KgwParams,
    cache: PartitionCache,
}

impl KgwHook {
    pub fn new(key: WatermarkKey, vocab_size: usize, params: KgwParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            cache: PartitionCache::new(key, vocab_size, params.gamma)?,
        })
    }
}

impl DecodeHook for KgwHook {
    fn method(&self) -> Method {
        Method::Kgw
    }

    fn params(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::from([
            ("gamma".into(), json!(self.params.gamma)),
            ("delta".into(), json!(self.params.delta)),
        ])
    }

    fn step(&mut self, context: &[u32], _step: usize, dist: ProbDist) -> StepAction {
        let part = self.cache.get(previous_token(context));
        StepAction::Sample(kgw_reweight(&dist, part, self.params.delta))
    }
}

/// Generation hook for SWEET.
#[derive(Debug, Clone)]
pub struct SweetHook {
    params: SweetParams,
    cache: PartitionCache,
}

impl SweetHook {
    pub fn new(key: WatermarkKey, vocab_size: usize, params: SweetParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            cache: PartitionCache::new(key, vocab_size, params.gamma)?,
        })
    }
}

impl DecodeHook for SweetHook {
    fn method(&self) -> Method {
        Method::Sweet
    }

    fn params(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::from([
            ("gamma".into(), json!(self.params.gamma)),
            ("delta".into(), json!(self.params.delta)),
            ("entropy_threshold".into(), json!(self.params.entropy_threshold)),
        ])
    }

    fn step(&mut self, context: &[u32], _step: usize, dist: ProbDist) -> StepAction {
        if dist.entropy() <= self.params.entropy_threshold {
            return StepAction::Sample(dist);
        }
        let part = self.cache.get(previous_token(context));
        StepAction::Sample(kgw_reweight(&dist, part, self.params.delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmodel::StaticModel;
    use crate::wmcore::{generate, SplitMix64};
    use proptest::prelude::*;

    fn two_green_of_four() -> Partition {
        Partition::from_green(4, &[0, 2], 0.5).unwrap()
    }

    #[test]
    fn zero_delta_is_identity() {
        let d = ProbDist::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(kgw_reweight(&d, &two_green_of_four(), 0.0), d);
    }

    #[test]
    fn ln2_bias_on_uniform_four() {
        let out = kgw_reweight(&ProbDist::uniform(4), &two_green_of_four(), 2f64.ln());
        let expected = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 6.0];
        for (p, e) in out.probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_delta_puts_all_mass_on_green() {
        let d = ProbDist::new(vec![0.1, 0.6, 0.1, 0.2]).unwrap();
        let out = kgw_reweight(&d, &two_green_of_four(), 50.0);
        assert!((out.prob(0) + out.prob(2) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sweet_gate() {
        let part = two_green_of_four();
        let params = SweetParams::default();
        let low = ProbDist::new(vec![0.95, 0.03, 0.01, 0.01]).unwrap();
        assert!(low.entropy() < 0.9);
        assert_eq!(sweet_reweight(&low, &part, &params), low);
        let u = ProbDist::uniform(4);
        assert_eq!(sweet_reweight(&u, &part, &params), kgw_reweight(&u, &part, 2.0));
        let pm = ProbDist::point_mass(4, 1);
        let strong = SweetParams { delta: 30.0, ..params };
        assert_eq!(sweet_reweight(&pm, &part, &strong), pm);
    }

    #[test]
    fn z_formula_examples() {
        assert_eq!(binomial_z(50, 100, 0.5), 0.0);
        assert_eq!(binomial_z(75, 100, 0.5), 5.0);
        assert_eq!(binomial_z(16, 16, 0.5), 4.0);
    }

    #[test]
    fn short_text_is_input_error() {
        assert!(matches!(
            kgw_detect(&[3], WatermarkKey(1), 0.5, 10, 4.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn closed_gate_everywhere_is_undetectable() {
        let r = sweet_detect(&[1, 2, 3], &[0.1, 0.2], WatermarkKey(1), &SweetParams::default(), 10, 4.0);
        assert!(matches!(r, Err(Error::Undetectable(_))));
    }

    #[test]
    fn strong_bias_makes_nearly_all_tokens_green() {
        let v = 200;
        let key = WatermarkKey(2024);
        let model = StaticModel::uniform(v);
        let mut hook = KgwHook::new(key, v, KgwParams { gamma: 0.5, delta: 10.0 }).unwrap();
        let rec = generate(&model, &[5], 400, &mut hook, 1);
        let flags = green_flags(&rec.scored_stream(), key, 0.5, v).unwrap();
        let frac = flags.iter().filter(|g| **g).count() as f64 / flags.len() as f64;
        assert!(frac >= 0.95, "green fraction {frac}");
        assert_eq!(rec.params["delta"], json!(10.0));
    }

    #[test]
    fn detector_recomputes_generation_partitions() {
        let v = 64;
        let key = WatermarkKey(7);
        let model = StaticModel::uniform(v);
        let mut hook = KgwHook::new(key, v, KgwParams::default()).unwrap();
        let rec = generate(&model, &[], 50, &mut hook, 3);
        let stream = rec.scored_stream();
        let flags = green_flags(&stream, key, 0.5, v).unwrap();
        for (t, &flag) in flags.iter().enumerate() {
            let part = seeded_partition(hash_context(key, &[stream[t]]), v, 0.5).unwrap();
            assert_eq!(part.is_green(stream[t + 1]), flag);
        }
    }

    #[test]
    fn null_z_is_standard_normal() {
        let v = 100;
        let mut rng = SplitMix64::new(55);
        let zs: Vec<f64> = (0..300)
            .map(|i| {
                let ids: Vec<u32> = (0..201).map(|_| rng.next_below(v as u64) as u32).collect();
                kgw_detect(&ids, WatermarkKey(i), 0.5, v, 4.0).unwrap().statistic
            })
            .collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (zs.len() - 1) as f64;
        assert!(mean.abs() < 0.2, "mean {mean}");
        assert!((0.75..1.25).contains(&var), "var {var}");
    }

    proptest! {
        #[test]
        fn reweight_keeps_within_color_ratios(
            w in prop::collection::vec(0.01f64..1.0, 6),
            delta in 0.0f64..8.0,
            seed in any::<u64>(),
        ) {
            let d = ProbDist::from_weights(w).unwrap();
            let part = seeded_partition(seed, 6, 0.5).unwrap();
            let out = kgw_reweight(&d, &part, delta);
            prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for i in 0..6u32 {
                for j in 0..6u32 {
                    if part.is_green(i) == part.is_green(j) {
                        let before = d.prob(i) / d.prob(j);
                        let after = out.prob(i) / out.prob(j);
                        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
                    }
                }
            }
        }

        #[test]
        fn sweet_with_open_gate_matches_kgw(
            ids in prop::collection::vec(0u32..30, 2..60),
            key in any::<u64>(),
        ) {
            let entropies = vec![0.5; ids.len() - 1];
            let params = SweetParams { entropy_threshold: 0.0, ..SweetParams::default() };
            let s = sweet_detect(&ids, &entropies, WatermarkKey(key), &params, 30, 4.0).unwrap();
            let k = kgw_detect(&ids, WatermarkKey(key), 0.5, 30, 4.0).unwrap();
            prop_assert_eq!(s, k);
        }
    }
}
