//! Entropy-shift, entity-entropy and hallucination analysis per method.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use factmark::factuality::{
    entity_entropy_stats, entropy_profile_from, extract_entities_from_tokens,
    hallucination_report, histogram_shift, summarize_reports, EntitySpan, EntityStats,
    EntropyProfile, Gazetteer, HallucinationSummary,
};
use factmark::tasks::TaskItem;
use factmark::textmodel::{NgramModel, BOS_ID};
use factmark::wmcore::Method;

use super::{evaluate::embedder, load_generations, load_model, load_tasks, match_tasks, Ctx};
use crate::args::AnalyzeArgs;
use crate::io;
use crate::pipeline::{DetectInput, GenOutput};

#[derive(Debug, Clone, Serialize)]
pub struct MethodAnalysis {
    pub method: Method,
    pub items: usize,
    pub tokens: u64,
    /// Total-variation distance of the entropy histogram from natural text.
    pub tv_shift_vs_reference: f64,
    /// The same against the unwatermarked generations, when present.
    pub tv_shift_vs_none: Option<f64>,
    pub entities: BTreeMap<String, EntityStats>,
    pub hallucination: HallucinationSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub reference_tokens: u64,
    pub similarity_threshold: f64,
    pub methods: Vec<MethodAnalysis>,
}

/// Entropy profile of the reference continuation of a task.
fn reference_profile(model: &NgramModel, task: &TaskItem) -> Result<Option<EntropyProfile>> {
    let mut full = model.vocab().tokenize(&task.prompt).into_inner();
    if full.is_empty() {
        full.push(BOS_ID);
    }
    let start = full.len();
    full.extend(model.vocab().tokenize(&task.reference).into_inner());
    if full.len() == start {
        return Ok(None);
    }
    Ok(Some(entropy_profile_from(&full, model, start)?))
}

/// Per-item profiles with entity spans re-indexed into the pooled profile.
fn pooled(model: &NgramModel, gens: &[&GenOutput], gaz: &Gazetteer) -> Result<(EntropyProfile, Vec<EntitySpan>)> {
    let per_item = gens
        .par_iter()
        .map(|g| {
            let input = DetectInput::from_generation(g);
            let full = input.full();
            let profile = entropy_profile_from(&full, model, full.len() - input.tokens.len())?;
            let words = model.vocab().decode_tokens(&input.tokens);
            Ok((profile, extract_entities_from_tokens(&words, gaz)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spans = Vec::new();
    let mut offset = 0;
    for (profile, item_spans) in &per_item {
        spans.extend(item_spans.iter().cloned().map(|mut s| {
            s.start += offset;
            s.end += offset;
            s
        }));
        offset += profile.per_token.len();
    }
    Ok((EntropyProfile::merge(per_item.iter().map(|p| &p.0)), spans))
}

fn write_histogram(path: &Path, profile: &EntropyProfile) -> Result<()> {
    let mut out = io::create(path)?;
    profile.write_histogram_csv(&mut out)?;
    std::io::Write::flush(&mut out)?;
    Ok(())
}

pub fn run(ctx: &mut Ctx, a: AnalyzeArgs) -> Result<()> {
    if let Some(t) = a.similarity_threshold {
        ctx.cfg.analyze.similarity_threshold = t;
    }
    let threshold = ctx.cfg.analyze.similarity_threshold;
    let model = load_model(&a.model)?;
    let tasks = load_tasks(&a.tasks)?;
    let gaz = match &a.gazetteer {
        Some(p) => Gazetteer::parse(&io::read_text(p)?)?,
        None => Gazetteer::bundled(),
    };
    let embed = embedder(&tasks, a.embeddings.as_deref())?;

    let mut gens = Vec::new();
    for p in &a.gen {
        gens.extend(load_generations(p)?);
    }
    let refs = match_tasks(&tasks, &gens)?;
    let mut by_method: BTreeMap<Method, Vec<(&GenOutput, &TaskItem)>> = BTreeMap::new();
    for (g, t) in gens.iter().zip(refs) {
        by_method.entry(g.record.method).or_default().push((g, t));
    }

    let reference_profiles = tasks
        .par_iter()
        .map(|t| reference_profile(&model, t))
        .collect::<Result<Vec<_>>>()?;
    let reference = EntropyProfile::merge(reference_profiles.iter().flatten());
    write_histogram(&a.out_dir.join("entropy_reference.csv"), &reference)?;

    let mut profiles = BTreeMap::new();
    let mut methods = Vec::new();
    for (method, items) in &by_method {
        let outputs: Vec<&GenOutput> = items.iter().map(|(g, _)| *g).collect();
        let (profile, spans) = pooled(&model, &outputs, &gaz)?;
        write_histogram(&a.out_dir.join(format!("entropy_{method}.csv")), &profile)?;
        let reports: Vec<_> = items
            .iter()
            .map(|(g, t)| hallucination_report(&g.text, &t.reference, &gaz, embed.as_ref(), threshold))
            .collect();
        methods.push(MethodAnalysis {
            method: *method,
            items: items.len(),
            tokens: profile.total_mass,
            tv_shift_vs_reference: histogram_shift(&reference, &profile)?,
            tv_shift_vs_none: None,
            entities: entity_entropy_stats(&spans, &profile)?,
            hallucination: summarize_reports(&reports, threshold),
        });
        profiles.insert(*method, profile);
    }
    if let Some(none) = profiles.get(&Method::None) {
        for m in &mut methods {
            m.tv_shift_vs_none = Some(histogram_shift(none, &profiles[&m.method])?);
        }
    }

    for m in &methods {
        let vs_none = m.tv_shift_vs_none.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{}: TV shift vs natural {:.4}, vs none {vs_none}; introduced entities/item {:.3}, hallucination rate {:.3}",
            m.method, m.tv_shift_vs_reference, m.hallucination.avg_introduced, m.hallucination.hallucination_rate
        );
    }

    let analysis = Analysis { reference_tokens: reference.total_mass, similarity_threshold: threshold, methods };
    let mut inputs: Vec<&Path> = vec![&a.model, &a.tasks];
    inputs.extend(a.gen.iter().map(|p| p.as_path()));
    inputs.extend(a.gazetteer.as_deref());
    inputs.extend(a.embeddings.as_deref());
    let header = ctx
        .header("analyze", json!({"similarity_threshold": threshold}))?
        .inputs(inputs)?;
    io::write_json_report(&a.out_dir.join("analysis.json"), &header, &analysis)?;
    Ok(())
}
