//! Shared watermarking machinery: keyed hashing, partitions and permutations,
//! the generation loop with pluggable decode hooks, and the detection result type.

mod partition;
mod rng;

pub use partition::{
    green_list_size, seeded_partition, seeded_permutation, Partition, Permutation,
};
pub(crate) use partition::check_gamma;
pub use rng::{hash_context, hash_words, open_unit, splitmix64_mix, SplitMix64, WatermarkKey};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmodel::{LanguageModel, ProbDist, TokenSeq, BOS_ID};

/// Generation scheme tag stored with every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Kgw,
    Sweet,
    Dipmark,
    Expedit,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::None,
        Method::Kgw,
        Method::Sweet,
        Method::Dipmark,
        Method::Expedit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Kgw => "kgw",
            Method::Sweet => "sweet",
            Method::Dipmark => "dipmark",
            Method::Expedit => "expedit",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// What a hook decided for one decoding step.
#[derive(Debug, Clone)]
pub enum StepAction {
    /// Sample multinomially from this (possibly rewritten) distribution.
    Sample(ProbDist),
    /// Emit this token directly, bypassing the sampler.
    Emit(u32),
}

/// Per-step logit processor or sampler override.
pub trait DecodeHook {
    fn method(&self) -> Method;

    /// Parameter values recorded verbatim in the output record.
    fn params(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::new()
    }

    /// Called once before the first step.
    fn start(&mut self) {}

    /// `context` is prompt plus everything generated so far; `step` counts from 0.
    fn step(&mut self, context: &[u32], step: usize, dist: ProbDist) -> StepAction;

    fn key_offset(&self) -> Option<u64> {
        None
    }
}

/// The unwatermarked baseline: samples from the model unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl DecodeHook for Identity {
    fn method(&self) -> Method {
        Method::None
    }

    fn step(&mut self, _context: &[u32], _step: usize, dist: ProbDist) -> StepAction {
        StepAction::Sample(dist)
    }
}

/// The token whose hash seeds the next step: the last context token, or `<s>`.
#[inline]
pub fn previous_token(context: &[u32]) -> u32 {
    context.last().copied().unwrap_or(BOS_ID)
}

/// One generated sequence and everything needed to analyse it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub id: String,
    pub method: Method,
    pub params: BTreeMap<String, serde_json::Value>,
    pub prompt_ids: TokenSeq,
    pub output_ids: TokenSeq,
    pub entropies: Vec<f64>,
    #[serde(default)]
    pub key_offset: Option<u64>,
}

impl GenRecord {
    /// The stream detectors score: the last prompt token (or `<s>`) followed by the output.
    pub fn scored_stream(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.output_ids.len() + 1);
        ids.push(previous_token(&self.prompt_ids));
        ids.extend_from_slice(&self.output_ids);
        ids
    }

    pub fn full_ids(&self) -> Vec<u32> {
        let mut ids = self.prompt_ids.to_vec();
        ids.extend_from_slice(&self.output_ids);
        ids
    }
}

/// Autoregressive sampling loop. Each step records the model entropy before
/// the hook sees the distribution.
pub fn generate<M, H>(
    model: &M,
    prompt: &[u32],
    max_tokens: usize,
    hook: &mut H,
    rng_seed: u64,
) -> GenRecord
where
    M: LanguageModel + ?Sized,
    H: DecodeHook + ?Sized,
{
    let mut rng = SplitMix64::new(rng_seed);
    let mut context = prompt.to_vec();
    let mut entropies = Vec::with_capacity(max_tokens);
    hook.start();
    for step in 0..max_tokens {
        let dist = model.next_dist(&context);
        entropies.push(dist.entropy());
        let token = match hook.step(&context, step, dist) {
            StepAction::Sample(d) => d.sample_with(rng.next_f64()),
            StepAction::Emit(t) => t,
        };
        context.push(token);
    }
    let output = context.split_off(prompt.len());
    GenRecord {
        id: String::new(),
        method: hook.method(),
        params: hook.params(),
        prompt_ids: TokenSeq(context),
        output_ids: TokenSeq(output),
        entropies,
        key_offset: hook.key_offset(),
    }
}

/// Statistic family of a detection result; fixes the verdict direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Z,
    Ratio,
    Logrank,
    Curvature,
    AlignPvalue,
}

impl ScoreKind {
    /// True when larger statistics indicate watermarked / machine text.
    pub fn higher_is_positive(self) -> bool {
        matches!(self, ScoreKind::Z | ScoreKind::Ratio | ScoreKind::Curvature)
    }
}

/// Per-text detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub statistic: f64,
    pub kind: ScoreKind,
    /// NaN (null in JSON) when no decision threshold has been calibrated.
    #[serde(with = "nan_as_null")]
    pub threshold: f64,
    pub is_watermarked: bool,
    /// Secondary quantities (scored count, raw ratio, degenerate flags, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl DetectionScore {
    /// Sets the verdict from the kind's direction. Lower-is-positive kinds
    /// accept equality (`p <= alpha`); higher-is-positive kinds require strict excess.
    pub fn new(statistic: f64, kind: ScoreKind, threshold: f64) -> Self {
        let is_watermarked = if kind.higher_is_positive() {
            statistic > threshold
        } else {
            statistic <= threshold
        };
        Self {
            statistic,
            kind,
            threshold,
            is_watermarked,
            details: BTreeMap::new(),
        }
    }

    pub fn with_detail(mut self, name: &str, value: f64) -> Self {
        self.details.insert(name.to_string(), value);
        self
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One-sided binomial z-score of `hits` successes in `n` trials at rate `gamma`.
pub fn binomial_z(hits: usize, n: usize, gamma: f64) -> f64 {
    let n = n as f64;
    (hits as f64 - gamma * n) / (n * gamma * (1.0 - gamma)).sqrt()
}

/// Writes values as JSON lines.
pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON lines, skipping blank lines and `#` comment lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        items.push(serde_json::from_str(trimmed)?);
    }
    Ok(items)
}
