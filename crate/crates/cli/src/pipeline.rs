//! Per-item generation and detection shared by the subcommands.

use std::fmt;
use std::str::FromStr;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use factmark::dipmark::{dip_detect, DipHook};
use factmark::expedit::{exp_detect, ExpHook, ExpKey};
use factmark::greenlist::{kgw_detect, sweet_detect, KgwHook, SweetHook};
use factmark::posthoc::{detectgpt_detect, mean_log_rank};
use factmark::tasks::{TaskItem, TaskKind};
use factmark::taskeval::fnv1a64;
use factmark::textmodel::{LanguageModel, NgramModel, BOS_ID};
use factmark::wmcore::{
    generate, splitmix64_mix, DecodeHook, DetectionScore, GenRecord, Identity, Method, ScoreKind,
};

use crate::config::Config;
use crate::usage;

/// Seed for one item, independent of processing order.
pub fn item_seed(seed: u64, id: &str) -> u64 {
    splitmix64_mix(seed ^ fnv1a64(id.as_bytes()))
}

const OFFSET_SALT: u64 = 0x0FF5_E7;

/// A generation record plus its task kind and decoded text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOutput {
    #[serde(flatten)]
    pub record: GenRecord,
    pub task: TaskKind,
    pub text: String,
}

pub fn parse_method(s: &str) -> Result<Method> {
    Method::from_str(s).map_err(|_| {
        usage!("unknown method '{s}' (expected none, kgw, sweet, dipmark or expedit)")
    })
}

fn hook_for(
    method: Method,
    cfg: &Config,
    vocab_size: usize,
    id: &str,
) -> Result<Box<dyn DecodeHook>> {
    Ok(match method {
        Method::None => Box::new(Identity),
        Method::Kgw => Box::new(KgwHook::new(cfg.require_key()?, vocab_size, cfg.kgw)?),
        Method::Sweet => Box::new(SweetHook::new(cfg.require_key()?, vocab_size, cfg.sweet)?),
        Method::Dipmark => Box::new(DipHook::new(cfg.require_key()?, vocab_size, cfg.dipmark)?),
        Method::Expedit => {
            let key = ExpKey::new(cfg.require_key()?, cfg.expedit.pseudo_length, vocab_size)?;
            Box::new(ExpHook::with_random_offset(key, item_seed(cfg.seed ^ OFFSET_SALT, id)))
        }
    })
}

/// Generates `cfg.max_tokens` tokens per task; output sorted by id.
pub fn generate_tasks(
    model: &NgramModel,
    tasks: &[TaskItem],
    method: Method,
    cfg: &Config,
) -> Result<Vec<GenOutput>> {
    // Fail on bad parameters before fanning out.
    hook_for(method, cfg, model.vocab_size(), "")?;
    let mut out = tasks
        .par_iter()
        .map(|task| {
            let prompt = model.vocab().tokenize(&task.prompt).into_inner();
            let mut hook = hook_for(method, cfg, model.vocab_size(), &task.id)?;
            let mut record = generate(
                model,
                &prompt,
                cfg.max_tokens,
                hook.as_mut(),
                item_seed(cfg.seed, &task.id),
            );
            record.id = task.id.clone();
            let text = model.vocab().detokenize(&record.output_ids);
            Ok(GenOutput { record, task: task.task, text })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Kgw,
    Sweet,
    Dipmark,
    Expedit,
    Logrank,
    Detectgpt,
}

impl Detector {
    pub const ALL: [Detector; 6] = [
        Detector::Kgw,
        Detector::Sweet,
        Detector::Dipmark,
        Detector::Expedit,
        Detector::Logrank,
        Detector::Detectgpt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Detector::Kgw => "kgw",
            Detector::Sweet => "sweet",
            Detector::Dipmark => "dipmark",
            Detector::Expedit => "expedit",
            Detector::Logrank => "logrank",
            Detector::Detectgpt => "detectgpt",
        }
    }

    /// Post-hoc detectors look for machine text in general, not a watermark.
    pub fn is_post_hoc(self) -> bool {
        matches!(self, Detector::Logrank | Detector::Detectgpt)
    }

    /// The generation scheme whose output counts as positive, for watermark detectors.
    pub fn watermark(self) -> Option<Method> {
        match self {
            Detector::Kgw => Some(Method::Kgw),
            Detector::Sweet => Some(Method::Sweet),
            Detector::Dipmark => Some(Method::Dipmark),
            Detector::Expedit => Some(Method::Expedit),
            _ => None,
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Detector {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Detector::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| {
                usage!("unknown detector '{s}' (expected kgw, sweet, dipmark, expedit, logrank or detectgpt)")
            })
    }
}

/// A text to score: its conditioning context and the tokens under test.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectInput {
    pub id: String,
    /// Generation method of the text, or a label such as `human`.
    pub source: String,
    pub context: Vec<u32>,
    pub tokens: Vec<u32>,
}

impl DetectInput {
    pub fn from_generation(g: &GenOutput) -> Self {
        Self {
            id: g.record.id.clone(),
            source: g.record.method.as_str().to_string(),
            context: g.record.prompt_ids.to_vec(),
            tokens: g.record.output_ids.to_vec(),
        }
    }

    pub fn from_text(model: &NgramModel, id: String, source: &str, text: &str) -> Self {
        Self {
            id,
            source: source.to_string(),
            context: Vec::new(),
            tokens: model.vocab().tokenize(text).into_inner(),
        }
    }

    fn context_or_bos(&self) -> Vec<u32> {
        if self.context.is_empty() {
            vec![BOS_ID]
        } else {
            self.context.clone()
        }
    }

    /// Context followed by the tokens.
    pub fn full(&self) -> Vec<u32> {
        let mut v = self.context_or_bos();
        v.extend_from_slice(&self.tokens);
        v
    }

    /// Last context token followed by the tokens.
    pub fn scored_stream(&self) -> Vec<u32> {
        let mut v = vec![*self.context_or_bos().last().expect("non-empty")];
        v.extend_from_slice(&self.tokens);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub detector: Detector,
    pub source: String,
    #[serde(flatten)]
    pub score: DetectionScore,
}

/// Thresholds and settings for one detector run.
#[derive(Debug, Clone)]
pub struct DetectSettings {
    pub detector: Detector,
    /// Overrides the configured threshold (post-hoc detectors).
    pub threshold: Option<f64>,
    pub seed: u64,
}

pub fn detect_one(
    model: &NgramModel,
    input: &DetectInput,
    settings: &DetectSettings,
    cfg: &Config,
) -> Result<DetectionScore> {
    let v = model.vocab_size();
    let z = cfg.detect.z_threshold;
    let score = match settings.detector {
        Detector::Kgw => kgw_detect(&input.scored_stream(), cfg.require_key()?, cfg.kgw.gamma, v, z)?,
        Detector::Sweet => {
            let ctx = input.context_or_bos().len();
            let entropies = model.entropies_from(&input.full(), ctx);
            sweet_detect(&input.scored_stream(), &entropies, cfg.require_key()?, &cfg.sweet, v, z)?
        }
        Detector::Dipmark => dip_detect(
            &input.scored_stream(),
            cfg.require_key()?,
            cfg.dipmark.gamma_detect,
            v,
            z,
        )?,
        Detector::Expedit => {
            let key = ExpKey::new(cfg.require_key()?, cfg.expedit.pseudo_length, v)?;
            exp_detect(&input.tokens, &key, &cfg.expedit.align())?
        }
        Detector::Logrank => {
            let ctx = input.context_or_bos().len();
            let ranks: Vec<f64> = model
                .score_from(&input.full(), ctx)
                .iter()
                .map(|s| s.rank as f64)
                .collect();
            let thr = settings.threshold.or(cfg.detect.logrank_threshold).unwrap_or(f64::NAN);
            DetectionScore::new(mean_log_rank(&ranks)?, ScoreKind::Logrank, thr)
        }
        Detector::Detectgpt => {
            let thr = settings.threshold.or(cfg.detect.curvature_threshold).unwrap_or(f64::NAN);
            detectgpt_detect(
                &input.scored_stream(),
                model,
                &cfg.curvature,
                item_seed(settings.seed, &input.id),
                thr,
            )?
        }
    };
    Ok(score)
}

/// Scores every input in parallel; output sorted by id.
pub fn detect_all(
    model: &NgramModel,
    inputs: &[DetectInput],
    settings: &DetectSettings,
    cfg: &Config,
) -> Result<Vec<ScoreRecord>> {
    if settings.detector.watermark().is_some() {
        cfg.require_key()?;
    }
    let mut out = inputs
        .par_iter()
        .map(|input| {
            let score = detect_one(model, input, settings, cfg)
                .with_context(|| format!("scoring item {}", input.id))?;
            Ok(ScoreRecord {
                id: input.id.clone(),
                detector: settings.detector,
                source: input.source.clone(),
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.source.cmp(&b.source)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use factmark::tasks::build_completion;
    use factmark::textmodel::TrainConfig;

    fn tiny_model() -> NgramModel {
        let docs: Vec<String> = (0..40)
            .map(|i| format!("the patient with fever number {i} took aspirin and rested at home today"))
            .collect();
        NgramModel::train(&docs, &TrainConfig::default()).unwrap()
    }

    fn tasks() -> Vec<TaskItem> {
        let doc = (0..240).map(|i| format!("w{}", i % 7)).collect::<Vec<_>>().join(" ");
        let mut items = build_completion(&[doc]);
        let mut second = items[0].clone();
        second.id = "zzz".into();
        items.push(second);
        items
    }

    fn keyed() -> Config {
        Config {
            key: Some(11),
            max_tokens: 20,
            ..Config::default()
        }
    }

    #[test]
    fn generation_is_sorted_and_repeatable() {
        let m = tiny_model();
        let a = generate_tasks(&m, &tasks(), Method::Kgw, &keyed()).unwrap();
        let b = generate_tasks(&m, &tasks(), Method::Kgw, &keyed()).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].record.id <= w[1].record.id));
        assert!(a.iter().all(|g| g.record.output_ids.len() == 20));
    }

    #[test]
    fn watermarking_without_key_is_a_usage_error() {
        let err = generate_tasks(&tiny_model(), &tasks(), Method::Dipmark, &Config::default()).unwrap_err();
        assert_eq!(crate::exit_code(&err), crate::EXIT_USAGE);
        assert!(generate_tasks(&tiny_model(), &tasks(), Method::None, &Config::default()).is_ok());
    }

    #[test]
    fn every_detector_scores_a_generation() {
        let m = tiny_model();
        let mut cfg = keyed();
        cfg.expedit.pseudo_length = 20;
        cfg.expedit.num_permutations = 5;
        let gens = generate_tasks(&m, &tasks(), Method::None, &cfg).unwrap();
        let inputs: Vec<_> = gens.iter().map(DetectInput::from_generation).collect();
        for d in Detector::ALL {
            let s = DetectSettings { detector: d, threshold: None, seed: 1 };
            let out = detect_all(&m, &inputs, &s, &cfg);
            match (d, out) {
                (_, Ok(rows)) => assert_eq!(rows.len(), 2),
                // Low-entropy toy text may leave nothing above the gate.
                (Detector::Sweet, Err(e)) => assert!(format!("{e:#}").contains("entropy")),
                (d, Err(e)) => panic!("{d}: {e:#}"),
            }
        }
    }

    #[test]
    fn plain_text_stream_starts_with_bos() {
        let m = tiny_model();
        let t = DetectInput::from_text(&m, "a".into(), "human", "the patient took aspirin");
        assert_eq!(t.scored_stream()[0], BOS_ID);
        assert_eq!(t.scored_stream().len(), t.tokens.len() + 1);
        assert_eq!(t.full(), t.scored_stream());
    }
}
