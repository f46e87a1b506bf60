//! Exponential-minimum sampling against a cyclic keyed sequence, detected by
//! edit-tolerant alignment cost and a permutation test over random keys.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::textmodel::{LanguageModel, ProbDist};
use crate::wmcore::{
    generate, hash_words, open_unit, DecodeHook, DetectionScore, GenRecord, Method, ScoreKind,
    SplitMix64, StepAction, WatermarkKey,
};

/// Default significance level for declaring a text watermarked.
pub const DEFAULT_P_THRESHOLD: f64 = 0.01;

/// A key together with the length of its cyclic pseudorandom sequence.
/// Entries `ξ[row][token]` are derived lazily from `(key, row, token)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpKey {
    pub key: WatermarkKey,
    pub pseudo_length: usize,
    pub vocab_size: usize,
}

impl ExpKey {
    pub fn new(key: WatermarkKey, pseudo_length: usize, vocab_size: usize) -> Result<Self> {
        if pseudo_length == 0 {
            return Err(Error::Config("pseudo_length must be >= 1".into()));
        }
        Ok(Self {
            key,
            pseudo_length,
            vocab_size,
        })
    }

    /// `ξ[row][token]` in the open interval (0, 1).
    #[inline]
    pub fn xi(&self, row: usize, token: u32) -> f64 {
        open_unit(hash_words(self.key, &[row as u64, token as u64]))
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.vocab_size as u32).map(|t| self.xi(row, t)).collect()
    }

    fn with_key(&self, key: WatermarkKey) -> Self {
        Self { key, ..*self }
    }
}

/// `argmin_i -ln(ξ_i)/μ_i` over tokens with positive mass; ties go to the lower id.
pub fn exp_sample(dist: &ProbDist, xi_row: &[f64]) -> Result<u32> {
    let mut best: Option<(f64, u32)> = None;
    for (i, (&mu, &xi)) in dist.probs().iter().zip(xi_row).enumerate() {
        if mu <= 0.0 {
            continue;
        }
        let score = -xi.ln() / mu;
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, i as u32));
        }
    }
    best.map(|(_, i)| i)
        .ok_or_else(|| Error::Input("distribution has no mass".into()))
}

/// Generation hook consuming one ξ row per step, cyclically from `offset`.
#[derive(Debug, Clone)]
pub struct ExpHook {
    key: ExpKey,
    offset: usize,
}

impl ExpHook {
    pub fn new(key: ExpKey, offset: usize) -> Self {
        Self {
            key,
            offset: offset % key.pseudo_length,
        }
    }

    /// Draws the start offset uniformly from `0..pseudo_length`.
    pub fn with_random_offset(key: ExpKey, offset_seed: u64) -> Self {
        let offset = SplitMix64::new(offset_seed).next_below(key.pseudo_length as u64) as usize;
        Self::new(key, offset)
    }
}

impl DecodeHook for ExpHook {
    fn method(&self) -> Method {
        Method::Expedit
    }

    fn params(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::from([("pseudo_length".into(), json!(self.key.pseudo_length))])
    }

    fn step(&mut self, _context: &[u32], step: usize, dist: ProbDist) -> StepAction {
        let row = self.key.row((self.offset + step) % self.key.pseudo_length);
        match exp_sample(&dist, &row) {
            Ok(t) => StepAction::Emit(t),
            Err(_) => StepAction::Sample(dist),
        }
    }

    fn key_offset(&self) -> Option<u64> {
        Some(self.offset as u64)
    }
}

/// Watermarked generation with a random start offset recorded in the output.
pub fn exp_generate<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &[u32],
    max_tokens: usize,
    key: ExpKey,
    offset_seed: u64,
) -> GenRecord {
    let mut hook = ExpHook::with_random_offset(key, offset_seed);
    generate(model, prompt, max_tokens, &mut hook, offset_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignParams {
    /// Insertion/deletion penalty; `f64::INFINITY` forbids edits.
    pub gamma_edit: f64,
    /// Length of the scored block; `None` means `min(len(y), pseudo_length)`.
    pub block_len: Option<usize>,
    pub num_permutations: usize,
    /// Seeds the random keys of the permutation test.
    pub resample_seed: u64,
    pub p_threshold: f64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            gamma_edit: 0.0,
            block_len: None,
            num_permutations: 100,
            resample_seed: 0x5EED_0F_E1D1,
            p_threshold: DEFAULT_P_THRESHOLD,
        }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_edit >= 0.0) {
            return Err(Error::Config("gamma_edit must be >= 0".into()));
        }
        if self.num_permutations == 0 {
            return Err(Error::Config("num_permutations must be >= 1".into()));
        }
        if self.block_len == Some(0) {
            return Err(Error::Config("block_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// `γ·count`, with zero edits costing nothing even when γ is infinite.
#[inline]
fn edit_cost(gamma: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        gamma * count as f64
    }
}

/// Alignment cost `d_γ(y, ξ)` where `cost(i, j) = ln(1 - ξ_j[y_i])`.
///
/// `d[i][j]` is the cost of aligning `y[i..]` with rows `j..`; filled backwards
/// with a single rolling row. `costs(i)` yields `cost(i, j)` for all `j`.
fn align_with<'a, C: Fn(usize) -> &'a [f64]>(ylen: usize, xlen: usize, gamma: f64, costs: C) -> f64 {
    let mut next: Vec<f64> = (0..=xlen).map(|j| edit_cost(gamma, xlen - j)).collect();
    let mut cur = vec![0.0; xlen + 1];
    for i in (0..ylen).rev() {
        let row = &costs(i)[..xlen];
        cur[xlen] = edit_cost(gamma, ylen - i);
        for j in (0..xlen).rev() {
            let matched = next[j + 1] + row[j];
            let skip_row = cur[j + 1] + gamma;
            let skip_token = next[j] + gamma;
            cur[j] = matched.min(skip_row).min(skip_token);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    next[0]
}

/// Minimum-cost alignment of `y` against consecutive key rows `xi_block`
/// (each row indexed by token id).
pub fn align_cost(y: &[u32], xi_block: &[Vec<f64>], gamma_edit: f64) -> f64 {
    let costs: Vec<Vec<f64>> = y
        .iter()
        .map(|&t| xi_block.iter().map(|row| (1.0 - row[t as usize]).ln()).collect())
        .collect();
    align_with(y.len(), xi_block.len(), gamma_edit, |i| &costs[i])
}

/// `ln(1 - ξ[row][tok])` for every row and every distinct token of `y`,
/// so the alignment inner loop never hashes.
struct CostTable {
    n: usize,
    /// `cols[c][row]` for compact column `c`, continued cyclically to
    /// `n + block` rows so every window is a plain slice.
    cols: Vec<Vec<f64>>,
    /// `y` rewritten in compact column indices.
    y: Vec<usize>,
}

impl CostTable {
    fn new(y: &[u32], key: &ExpKey, block: usize) -> Self {
        let mut distinct: Vec<u32> = y.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let n = key.pseudo_length;
        let cols = distinct
            .iter()
            .map(|&t| {
                let once: Vec<f64> = (0..n).map(|r| (1.0 - key.xi(r, t)).ln()).collect();
                once.iter().cycle().take(n + block).copied().collect()
            })
            .collect();
        let y = y
            .iter()
            .map(|t| distinct.binary_search(t).expect("token present"))
            .collect();
        Self { n, cols, y }
    }

    fn cost(&self, y_start: usize, offset: usize, block: usize, gamma: f64) -> f64 {
        align_with(block, block, gamma, |i| {
            &self.cols[self.y[y_start + i]][offset..offset + block]
        })
    }

    /// Minimum over y windows and cyclic offsets; stops early once a value
    /// `<= stop_at` is found.
    fn min_cost(&self, block: usize, gamma: f64, stop_at: f64) -> f64 {
        let mut best = f64::INFINITY;
        for start in 0..=self.y.len() - block {
            for offset in 0..self.n {
                best = best.min(self.cost(start, offset, block, gamma));
                if best <= stop_at {
                    return best;
                }
            }
        }
        best
    }
}

/// Test statistic: minimum alignment cost over all windows of `y` of length
/// `block` and all cyclic key offsets.
pub fn exp_statistic(y: &[u32], key: &ExpKey, block: usize, gamma_edit: f64) -> f64 {
    CostTable::new(y, key, block).min_cost(block, gamma_edit, f64::NEG_INFINITY)
}

/// Permutation-test p-value `(1 + #{null <= observed}) / (T + 1)`.
pub fn exp_detect(y: &[u32], key: &ExpKey, params: &AlignParams) -> Result<DetectionScore> {
    params.validate()?;
    let block = params
        .block_len
        .unwrap_or_else(|| y.len().min(key.pseudo_length));
    if y.is_empty() || y.len() < block {
        return Err(Error::Input(format!(
            "text of {} tokens is shorter than the block length {block}",
            y.len()
        )));
    }
    let observed = exp_statistic(y, key, block, params.gamma_edit);
    let mut seeds = SplitMix64::new(params.resample_seed);
    let mut at_most = 0usize;
    for _ in 0..params.num_permutations {
        let null_key = key.with_key(WatermarkKey(seeds.next_u64()));
        let null = CostTable::new(y, &null_key, block).min_cost(block, params.gamma_edit, observed);
        if null <= observed {
            at_most += 1;
        }
    }
    let p = (1 + at_most) as f64 / (params.num_permutations + 1) as f64;
    Ok(
        DetectionScore::new(p, ScoreKind::AlignPvalue, params.p_threshold)
            .with_detail("alignment_cost", observed)
            .with_detail("block_len", block as f64),
    )
}
