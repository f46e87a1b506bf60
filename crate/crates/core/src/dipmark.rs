//! Distribution-preserving reweighting over a keyed permutation, with a
//! green-ratio detector.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::textmodel::ProbDist;
use crate::wmcore::{
    check_gamma, green_list_size, hash_context, previous_token, seeded_permutation, DecodeHook,
    DetectionScore, Method, Permutation, ScoreKind, SplitMix64, StepAction, WatermarkKey,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DipParams {
    pub alpha: f64,
    pub gamma_detect: f64,
}

impl Default for DipParams {
    fn default() -> Self {
        Self {
            alpha: 0.45,
            gamma_detect: 0.5,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=0.5).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must be in [0, 0.5], got {alpha}")))
    }
}

impl DipParams {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_gamma(self.gamma_detect)
    }
}

/// `(1-α)·P^α + α·P^(1-α)` over the permuted cumulative masses.
///
/// Both truncations collapse into one transfer function on cumulative mass,
/// `F(x) = max(x-α, 0) + max(x-(1-α), 0)`; each token receives
/// `F(C_hi) - F(C_lo)` for its cumulative interval, which splits a token
/// straddling a boundary proportionally.
pub fn dip_reweight(dist: &ProbDist, perm: &Permutation, alpha: f64) -> ProbDist {
    if alpha == 0.0 {
        return dist.clone();
    }
    let f = |x: f64| (x - alpha).max(0.0) + (x - (1.0 - alpha)).max(0.0);
    let mut out = vec![0.0; dist.len()];
    let mut lo = 0.0;
    let last = perm.len().saturating_sub(1);
    for (pos, &id) in perm.order().iter().enumerate() {
        let hi = if pos == last { 1.0 } else { lo + dist.prob(id) };
        out[id as usize] = (f(hi) - f(lo)).max(0.0);
        lo = hi;
    }
    ProbDist::from_normalized(out)
}

/// Memoizes permutations seeded by each previous token.
#[derive(Debug, Clone)]
pub struct PermutationCache {
    key: WatermarkKey,
    vocab_size: usize,
    by_prev: HashMap<u32, (Permutation, Vec<u32>)>,
}

impl PermutationCache {
    pub fn new(key: WatermarkKey, vocab_size: usize) -> Self {
        Self {
            key,
            vocab_size,
            by_prev: HashMap::new(),
        }
    }

    fn entry(&mut self, prev: u32) -> &(Permutation, Vec<u32>) {
        let (key, v) = (self.key, self.vocab_size);
        self.by_prev.entry(prev).or_insert_with(|| {
            let p = seeded_permutation(hash_context(key, &[prev]), v);
            let pos = p.positions();
            (p, pos)
        })
    }

    pub fn permutation(&mut self, prev: u32) -> &Permutation {
        &self.entry(prev).0
    }

    /// Index of `token` in the permutation seeded by `prev`.
    pub fn position(&mut self, prev: u32, token: u32) -> usize {
        self.entry(prev).1[token as usize] as usize
    }
}

/// One watermarked sampling step with the permutation keyed on `prev_token`.
pub fn dip_generate_step(
    dist: &ProbDist,
    key: WatermarkKey,
    prev_token: u32,
    alpha: f64,
    rng: &mut SplitMix64,
) -> u32 {
    let perm = seeded_permutation(hash_context(key, &[prev_token]), dist.len());
    dip_reweight(dist, &perm, alpha).sample_with(rng.next_f64())
}

/// Green-ratio test: tokens in the last `V - round(γV)` permutation slots are green.
/// The statistic is `Φ·√n/√(γ(1-γ))` with `Φ = L_G/n - (1-γ)`; Φ is kept in the details.
pub fn dip_detect(
    text_ids: &[u32],
    key: WatermarkKey,
    gamma: f64,
    vocab_size: usize,
    z_threshold: f64,
) -> Result<DetectionScore> {
    check_gamma(gamma)?;
    if text_ids.len() < 2 {
        return Err(Error::Input("detection needs at least 2 tokens".into()));
    }
    let cut = green_list_size(vocab_size, gamma);
    let mut cache = PermutationCache::new(key, vocab_size);
    let green = text_ids
        .windows(2)
        .filter(|w| cache.position(w[0], w[1]) >= cut)
        .count();
    let n = text_ids.len() - 1;
    let phi = dip_phi(green, n, gamma);
    let z = phi * (n as f64).sqrt() / (gamma * (1.0 - gamma)).sqrt();
    Ok(DetectionScore::new(z, ScoreKind::Ratio, z_threshold)
        .with_detail("phi", phi)
        .with_detail("scored", n as f64)
        .with_detail("green", green as f64))
}

/// `L_G/n - (1-γ)`.
pub fn dip_phi(green: usize, n: usize, gamma: f64) -> f64 {
    green as f64 / n as f64 - (1.0 - gamma)
}

/// Generation hook for DiPmark.
#[derive(Debug, Clone)]
pub struct DipHook {
    params: DipParams,
    cache: PermutationCache,
}

impl DipHook {
    pub fn new(key: WatermarkKey, vocab_size: usize, params: DipParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            cache: PermutationCache::new(key, vocab_size),
        })
    }
}

impl DecodeHook for DipHook {
    fn method(&self) -> Method {
        Method::Dipmark
    }

    fn params(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::from([
            ("alpha".into(), json!(self.params.alpha)),
            ("gamma_detect".into(), json!(self.params.gamma_detect)),
        ])
    }

    fn step(&mut self, context: &[u32], _step: usize, dist: ProbDist) -> StepAction {
        let perm = self.cache.permutation(previous_token(context));
        StepAction::Sample(dip_reweight(&dist, perm, self.params.alpha))
    }
}
