//! Detection and quality metrics per method, as a JSON report plus a table.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use factmark::taskeval::{
    auroc, rouge_l, rouge_n, similarity, token_f1, tpr_at_fpr0, CooccurrenceEmbedder,
    Direction, ExternalEmbeddings, ScorePair, SimilarityProvider,
};
use factmark::tasks::TaskItem;
use factmark::textmodel::LanguageModel;
use factmark::wmcore::Method;

use super::{fmt_opt, load_generations, load_model, load_tasks, match_tasks, render_table, Ctx};
use crate::args::EvaluateArgs;
use crate::pipeline::{DetectInput, Detector, GenOutput, ScoreRecord};
use crate::{io, schema, usage};

pub const METRICS: [&str; 7] = ["tpr", "auroc", "ppl", "similarity", "rouge2", "rougel", "f1"];

pub fn parse_metrics(list: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for m in list.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        if !METRICS.contains(&m) {
            return Err(usage!("unknown metric '{m}' (expected a subset of {})", METRICS.join(",")));
        }
        if !out.iter().any(|x| x == m) {
            out.push(m.to_string());
        }
    }
    if out.is_empty() {
        return Err(usage!("--metrics selects no metrics"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionRow {
    pub detector: Detector,
    pub positive: String,
    pub negative: String,
    pub n_positive: usize,
    pub n_negative: usize,
    pub tpr: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub items: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rougel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub metrics: Vec<String>,
    pub methods: Vec<MethodRow>,
    pub detection: Vec<DetectionRow>,
}

fn row(detector: Detector, pos: &str, neg: &str, by_source: &BTreeMap<&str, Vec<&ScoreRecord>>) -> Result<Option<DetectionRow>> {
    let (Some(p), Some(n)) = (by_source.get(pos), by_source.get(neg)) else {
        return Ok(None);
    };
    let direction = Direction::from(p[0].score.kind);
    let pair = ScorePair::new(
        p.iter().map(|r| r.score.statistic).collect(),
        n.iter().map(|r| r.score.statistic).collect(),
        direction,
    );
    Ok(Some(DetectionRow {
        detector,
        positive: pos.to_string(),
        negative: neg.to_string(),
        n_positive: p.len(),
        n_negative: n.len(),
        tpr: tpr_at_fpr0(&pair)?,
        auroc: auroc(&pair)?,
    }))
}

/// Watermark detectors: their own scheme against `none`. Post-hoc detectors:
/// every machine source against `human`.
pub fn detection_rows(scores: &[ScoreRecord]) -> Result<Vec<DetectionRow>> {
    let mut grouped: BTreeMap<Detector, BTreeMap<&str, Vec<&ScoreRecord>>> = BTreeMap::new();
    for s in scores {
        grouped.entry(s.detector).or_default().entry(s.source.as_str()).or_default().push(s);
    }
    let mut rows = Vec::new();
    for (detector, by_source) in &grouped {
        let pairs: Vec<(String, String)> = match detector.watermark() {
            Some(m) => vec![(m.as_str().to_string(), "none".to_string())],
            None => by_source
                .keys()
                .filter(|s| **s != "human")
                .map(|s| (s.to_string(), "human".to_string()))
                .collect(),
        };
        let mut any = false;
        for (pos, neg) in pairs {
            if let Some(r) = row(*detector, &pos, &neg, by_source)? {
                rows.push(r);
                any = true;
            }
        }
        if !any {
            let sources: Vec<&str> = by_source.keys().copied().collect();
            warn!("{detector}: no positive/negative pairing among sources {sources:?}");
        }
    }
    Ok(rows)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub(crate) fn embedder(tasks: &[TaskItem], embeddings: Option<&Path>) -> Result<Box<dyn SimilarityProvider>> {
    let corpus: Vec<&str> = tasks
        .iter()
        .flat_map(|t| [t.prompt.as_str(), t.reference.as_str()])
        .collect();
    let fitted = Box::new(CooccurrenceEmbedder::fit(&corpus));
    Ok(match embeddings {
        None => fitted,
        Some(p) => Box::new(
            ExternalEmbeddings::from_reader(io::open(p)?, fitted)
                .map_err(|e| usage!("{}: {e}", p.display()))?,
        ),
    })
}

pub fn build_report(
    model: &impl LanguageModel,
    tasks: &[TaskItem],
    gens: &[GenOutput],
    scores: &[ScoreRecord],
    metrics: &[String],
    embed: &dyn SimilarityProvider,
) -> Result<Report> {
    let want = |m: &str| metrics.iter().any(|x| x == m);
    let refs = match_tasks(tasks, gens)?;
    let mut by_method: BTreeMap<Method, Vec<(&GenOutput, &TaskItem)>> = BTreeMap::new();
    for (g, t) in gens.iter().zip(refs) {
        by_method.entry(g.record.method).or_default().push((g, t));
    }
    let detection = if want("tpr") || want("auroc") {
        detection_rows(scores)?
    } else {
        Vec::new()
    };
    let mut methods = Vec::new();
    for (method, items) in &by_method {
        let mut r = MethodRow { method: method.to_string(), items: items.len(), ..Default::default() };
        if let Some(d) = detection.iter().find(|d| {
            d.detector.watermark() == Some(*method) && d.positive == method.as_str() && d.negative == "none"
        }) {
            r.tpr = want("tpr").then_some(d.tpr);
            r.auroc = want("auroc").then_some(d.auroc);
        }
        if want("ppl") {
            let ppls = items
                .par_iter()
                .map(|(g, _)| {
                    let input = DetectInput::from_generation(g);
                    let ctx = input.full().len() - input.tokens.len();
                    model.perplexity_from(&input.full(), ctx).ok()
                })
                .collect::<Vec<_>>();
            r.ppl = mean(ppls.into_iter().flatten());
        }
        let avg = |f: &dyn Fn(&str, &str) -> f64| mean(items.iter().map(|(g, t)| f(&g.text, &t.reference)));
        if want("similarity") {
            r.similarity = avg(&|c, t| similarity(c, t, embed));
        }
        if want("rouge2") {
            r.rouge2 = avg(&|c, t| rouge_n(c, t, 2));
        }
        if want("rougel") {
            r.rougel = avg(&rouge_l);
        }
        if want("f1") {
            r.f1 = avg(&token_f1);
        }
        methods.push(r);
    }
    Ok(Report { metrics: metrics.to_vec(), methods, detection })
}

pub fn render(report: &Report) -> String {
    let labels: BTreeMap<&str, &str> = [
        ("tpr", "TPR@FPR0"),
        ("auroc", "AUROC"),
        ("ppl", "PPL"),
        ("similarity", "Sim"),
        ("rouge2", "ROUGE-2"),
        ("rougel", "ROUGE-L"),
        ("f1", "F1"),
    ]
    .into();
    let mut head = vec!["method"];
    head.extend(report.metrics.iter().map(|m| labels[m.as_str()]));
    let rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .map(|r| {
            let mut cells = vec![r.method.clone()];
            for m in &report.metrics {
                let (v, digits) = match m.as_str() {
                    "tpr" => (r.tpr, 3),
                    "auroc" => (r.auroc, 3),
                    "ppl" => (r.ppl, 2),
                    "similarity" => (r.similarity, 3),
                    "rouge2" => (r.rouge2, 3),
                    "rougel" => (r.rougel, 3),
                    _ => (r.f1, 3),
                };
                cells.push(fmt_opt(v, digits));
            }
            cells
        })
        .collect();
    let mut out = render_table(&head, &rows);
    let post: Vec<Vec<String>> = report
        .detection
        .iter()
        .filter(|d| d.detector.is_post_hoc())
        .map(|d| {
            vec![
                format!("{} ({} vs {})", d.detector, d.positive, d.negative),
                format!("{:.3}", d.tpr),
                format!("{:.3}", d.auroc),
            ]
        })
        .collect();
    if !post.is_empty() {
        out.push('\n');
        out.push_str(&render_table(&["post-hoc detector", "TPR@FPR0", "AUROC"], &post));
    }
    out
}

pub fn run(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    let model = load_model(&a.model)?;
    let tasks = load_tasks(&a.tasks)?;
    let mut gens = Vec::new();
    for p in &a.gen {
        gens.extend(load_generations(p)?);
    }
    let mut scores: Vec<ScoreRecord> = Vec::new();
    for p in &a.scores {
        scores.extend(io::read_jsonl::<ScoreRecord>(p)?);
    }
    let methods: BTreeSet<Method> = gens.iter().map(|g| g.record.method).collect();
    info!("evaluating {} generations across {} methods", gens.len(), methods.len());
    if (metrics.iter().any(|m| m == "tpr" || m == "auroc")) && scores.is_empty() {
        warn!("no --scores given; detection columns will be empty");
    }
    let embed = embedder(&tasks, a.embeddings.as_deref())?;
    let report = build_report(&model, &tasks, &gens, &scores, &metrics, embed.as_ref())?;

    let mut inputs: Vec<&Path> = vec![&a.model, &a.tasks];
    inputs.extend(a.gen.iter().map(|p| p.as_path()));
    inputs.extend(a.scores.iter().map(|p| p.as_path()));
    inputs.extend(a.embeddings.as_deref());
    let header = ctx
        .header("evaluate", json!({"metrics": metrics}))?
        .inputs(inputs)?;
    let mut value = serde_json::to_value(&report)?;
    value["header"] = serde_json::to_value(&header)?;
    let errors = schema::validate(&schema::report_schema(), &value);
    if !errors.is_empty() {
        bail!("report violates its schema:\n{}", errors.join("\n"));
    }
    io::write_json_report(&a.out, &header, &report)?;
    let table = render(&report);
    print!("{table}");
    if let Some(t) = &a.table {
        std::fs::write(t, &table)?;
    }
    Ok(())
}
