use std::path::Path;

use anyhow::Result;
use log::info;
use serde::Deserialize;
use serde_json::json;

use factmark::textmodel::NgramModel;

use super::{load_generations, load_model, load_tasks, Ctx};
use crate::args::{DetectArgs, GenerateArgs};
use crate::io;
use crate::pipeline::{detect_all, generate_tasks, parse_method, DetectInput, DetectSettings, Detector};

pub fn generate(ctx: &mut Ctx, a: GenerateArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    ctx.cfg.apply(&a.wm);
    if let Some(s) = a.seed {
        ctx.cfg.seed = s;
    }
    if let Some(m) = a.max_tokens {
        ctx.cfg.max_tokens = m;
    }
    let model = load_model(&a.model)?;
    let tasks = load_tasks(&a.tasks)?;
    info!("generating {} x {} tokens with method {method}", tasks.len(), ctx.cfg.max_tokens);
    let out = generate_tasks(&model, &tasks, method, &ctx.cfg)?;
    let header = ctx
        .header("generate", json!({"method": method, "config": ctx.cfg}))?
        .inputs([a.model.as_path(), a.tasks.as_path()])?;
    io::write_jsonl(&a.out, &header, &out)?;
    info!("wrote {} records to {}", out.len(), a.out.display());
    Ok(())
}

#[derive(Deserialize)]
struct TextLine {
    id: Option<String>,
    text: String,
}

/// Plain texts for detection: JSONL with `text` (and optional `id`), or one
/// text per non-empty line. Missing ids become zero-padded line numbers.
fn read_texts(model: &NgramModel, path: &Path, source: &str) -> Result<Vec<DetectInput>> {
    let raw = io::read_text(path)?;
    let jsonl = raw.lines().map(str::trim).find(|l| !l.is_empty()).is_some_and(|l| l.starts_with('{'));
    let lines: Vec<(Option<String>, String)> = if jsonl {
        io::read_jsonl::<TextLine>(path)?.into_iter().map(|t| (t.id, t.text)).collect()
    } else {
        raw.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| (None, l.trim().to_string()))
            .collect()
    };
    Ok(lines
        .into_iter()
        .enumerate()
        .map(|(i, (id, text))| {
            let id = id.unwrap_or_else(|| format!("{source}-{:06}", i + 1));
            DetectInput::from_text(model, id, source, &text)
        })
        .collect())
}

pub fn detect(ctx: &mut Ctx, a: DetectArgs) -> Result<()> {
    let detector: Detector = a.method.parse()?;
    ctx.cfg.apply(&a.wm);
    if let Some(s) = a.seed {
        ctx.cfg.seed = s;
    }
    if let Some(n) = a.num_perturbations {
        ctx.cfg.curvature.num_perturbations = n;
    }
    if let Some(f) = a.perturb_fraction {
        ctx.cfg.curvature.perturb_fraction = f;
    }
    if detector.watermark().is_some() {
        ctx.cfg.require_key()?;
    }
    let model = load_model(&a.model)?;
    let (inputs, source_file) = match (&a.input, &a.text) {
        (Some(p), _) => (
            load_generations(p)?.iter().map(DetectInput::from_generation).collect::<Vec<_>>(),
            p,
        ),
        (None, Some(p)) => (read_texts(&model, p, &a.source_label)?, p),
        (None, None) => unreachable!("clap requires one input"),
    };
    let settings = DetectSettings { detector, threshold: a.threshold, seed: ctx.cfg.seed };
    info!("scoring {} texts with {detector}", inputs.len());
    let scores = detect_all(&model, &inputs, &settings, &ctx.cfg)?;
    let flagged = scores.iter().filter(|s| s.score.is_watermarked).count();
    let header = ctx
        .header(
            "detect",
            json!({"detector": detector, "threshold": a.threshold, "config": ctx.cfg}),
        )?
        .inputs([a.model.as_path(), source_file.as_path()])?;
    io::write_jsonl(&a.out, &header, &scores)?;
    println!("{detector}: {flagged} of {} flagged", scores.len());
    Ok(())
}
