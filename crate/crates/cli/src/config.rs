//! TOML run configuration. Every key is optional; defaults reproduce the
//! standard hyperparameters of each scheme.
//!
//! ```toml
//! seed = 7
//! key = 15485863
//! jobs = 4
//! max_tokens = 200
//!
//! [kgw]
//! gamma = 0.5
//! delta = 2.0
//!
//! [sweet]
//! gamma = 0.5
//! delta = 2.0
//! entropy_threshold = 0.9
//!
//! [dipmark]
//! alpha = 0.45
//! gamma_detect = 0.5
//!
//! [expedit]
//! pseudo_length = 256
//! gamma_edit = 0.0
//! num_permutations = 100
//! p_threshold = 0.01
//!
//! [detect]
//! z_threshold = 4.0
//!
//! [judge]
//! model = "GPT-4o-2024-08-06"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! api_key_env = "FACTMARK_JUDGE_API_KEY"
//! max_in_flight = 4
//! ```

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use factmark::dipmark::DipParams;
use factmark::expedit::AlignParams;
use factmark::greenlist::{KgwParams, SweetParams, DEFAULT_Z_THRESHOLD};
use factmark::judger;
use factmark::posthoc::CurvatureParams;
use factmark::wmcore::WatermarkKey;

use crate::args::WatermarkArgs;
use crate::{io, usage};

pub const DEFAULT_MAX_TOKENS: usize = 200;
pub const DEFAULT_PSEUDO_LENGTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpConfig {
    pub pseudo_length: usize,
    pub gamma_edit: f64,
    pub block_len: Option<usize>,
    pub num_permutations: usize,
    pub resample_seed: u64,
    pub p_threshold: f64,
}

impl Default for ExpConfig {
    fn default() -> Self {
        let a = AlignParams::default();
        Self {
            pseudo_length: DEFAULT_PSEUDO_LENGTH,
            gamma_edit: a.gamma_edit,
            block_len: a.block_len,
            num_permutations: a.num_permutations,
            resample_seed: a.resample_seed,
            p_threshold: a.p_threshold,
        }
    }
}

impl ExpConfig {
    pub fn align(&self) -> AlignParams {
        AlignParams {
            gamma_edit: self.gamma_edit,
            block_len: self.block_len,
            num_permutations: self.num_permutations,
            resample_seed: self.resample_seed,
            p_threshold: self.p_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub z_threshold: f64,
    /// Post-hoc thresholds; without one, verdicts use the calibrated value
    /// passed on the command line or stay undecided (NaN threshold).
    pub logrank_threshold: Option<f64>,
    pub curvature_threshold: Option<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            z_threshold: DEFAULT_Z_THRESHOLD,
            logrank_threshold: None,
            curvature_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub model: String,
    pub endpoint: String,
    pub api_key_env: String,
    pub system_prompt: String,
    pub max_in_flight: usize,
    pub max_retries: usize,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub cache: Option<PathBuf>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        let b = judger::BatchOptions::default();
        Self {
            model: b.model,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: judger::API_KEY_ENV.into(),
            system_prompt: b.system_prompt,
            max_in_flight: b.max_in_flight,
            max_retries: b.max_retries,
            backoff_ms: b.backoff_base.as_millis() as u64,
            timeout_secs: 120,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub similarity_threshold: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: factmark::factuality::DEFAULT_SIMILARITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub key: Option<u64>,
    pub jobs: usize,
    pub max_tokens: usize,
    pub kgw: KgwParams,
    pub sweet: SweetParams,
    pub dipmark: DipParams,
    pub expedit: ExpConfig,
    pub curvature: CurvatureParams,
    pub detect: DetectConfig,
    pub judge: JudgeConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            key: None,
            jobs: 1,
            max_tokens: DEFAULT_MAX_TOKENS,
            kgw: KgwParams::default(),
            sweet: SweetParams::default(),
            dipmark: DipParams::default(),
            expedit: ExpConfig::default(),
            curvature: CurvatureParams::default(),
            detect: DetectConfig::default(),
            judge: JudgeConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&io::read_text(p)?)
                .map_err(|e| usage!("{}: {e}", p.display())),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| usage!("invalid configuration: {e}"))
    }

    /// Overlays watermark flags onto the matching config sections.
    pub fn apply(&mut self, wm: &WatermarkArgs) {
        if let Some(k) = wm.key {
            self.key = Some(k);
        }
        if let Some(g) = wm.gamma {
            self.kgw.gamma = g;
            self.sweet.gamma = g;
            self.dipmark.gamma_detect = g;
        }
        if let Some(d) = wm.delta {
            self.kgw.delta = d;
            self.sweet.delta = d;
        }
        if let Some(t) = wm.entropy_threshold {
            self.sweet.entropy_threshold = t;
        }
        if let Some(a) = wm.alpha {
            self.dipmark.alpha = a;
        }
        if let Some(n) = wm.pseudo_length {
            self.expedit.pseudo_length = n;
        }
        if let Some(g) = wm.gamma_edit {
            self.expedit.gamma_edit = g;
        }
        if let Some(n) = wm.num_permutations {
            self.expedit.num_permutations = n;
        }
        if let Some(b) = wm.block_len {
            self.expedit.block_len = Some(b);
        }
        if let Some(z) = wm.z_threshold {
            self.detect.z_threshold = z;
        }
        if let Some(p) = wm.p_threshold {
            self.expedit.p_threshold = p;
        }
    }

    pub fn require_key(&self) -> Result<WatermarkKey> {
        self.key
            .map(WatermarkKey)
            .ok_or_else(|| usage!("a watermark key is required (--key or `key` in the config file)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_standard_hyperparameters() {
        let c = Config::default();
        assert_eq!((c.kgw.gamma, c.kgw.delta), (0.5, 2.0));
        assert_eq!(c.sweet.entropy_threshold, 0.9);
        assert_eq!((c.dipmark.alpha, c.dipmark.gamma_detect), (0.45, 0.5));
        assert_eq!(c.expedit.pseudo_length, 256);
        assert_eq!(c.judge.model, "GPT-4o-2024-08-06");
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = Config::parse("key = 9\n[kgw]\ndelta = 1.0\n[expedit]\npseudo_length = 100\n").unwrap();
        assert_eq!(c.key, Some(9));
        assert_eq!((c.kgw.gamma, c.kgw.delta), (0.5, 1.0));
        assert_eq!(c.expedit.pseudo_length, 100);
        assert_eq!(c.expedit.num_permutations, 100);
    }

    #[test]
    fn flags_win() {
        let mut c = Config::parse("key = 9\n[kgw]\ndelta = 1.0\n").unwrap();
        c.apply(&WatermarkArgs {
            key: Some(3),
            delta: Some(0.5),
            ..WatermarkArgs::default()
        });
        assert_eq!(c.key, Some(3));
        assert_eq!(c.kgw.delta, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::parse("[kgw]\ndelat = 1.0\n").unwrap_err();
        assert_eq!(crate::exit_code(&err), crate::EXIT_USAGE);
    }
}
