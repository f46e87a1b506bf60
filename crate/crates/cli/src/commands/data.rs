//! Corpus, model and task preparation.

use std::path::Path;

use anyhow::Result;
use log::info;
use serde_json::json;

use factmark::synth::{synth_qa, synth_summaries, synth_texts, SynthConfig};
use factmark::tasks::{build_from_records, select, RawRecord, Selection, TaskKind};
use factmark::textmodel::{LanguageModel, NgramModel, TrainConfig, BOS_ID};

use super::Ctx;
use crate::args::{BuildTasksArgs, SynthArgs, SynthKind, TrainLmArgs};
use crate::{io, usage};

/// Documents of a corpus file. JSONL records contribute their `text` (or
/// `answer`); plain text is split into blank-line-separated paragraphs, or
/// into lines when it has no blank lines.
pub(crate) fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let raw = io::read_text(path)?;
    let first = raw.lines().map(str::trim).find(|l| !l.is_empty());
    let docs: Vec<String> = if first.is_some_and(|l| l.starts_with('{')) {
        io::read_jsonl::<RawRecord>(path)?
            .into_iter()
            .filter_map(|r| r.text.or(r.answer))
            .collect()
    } else if raw.lines().any(|l| l.trim().is_empty()) {
        raw.split("\n\n")
            .flat_map(|p| p.split("\r\n\r\n"))
            .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
            .collect()
    } else {
        raw.lines().map(|l| l.trim().to_string()).collect()
    };
    let docs: Vec<String> = docs.into_iter().filter(|d| !d.trim().is_empty()).collect();
    if docs.is_empty() {
        return Err(usage!("{} contains no documents", path.display()));
    }
    Ok(docs)
}

/// Pooled perplexity of `docs`, each scored after a `<s>` context.
fn heldout_perplexity(model: &NgramModel, docs: &[String]) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for d in docs {
        let mut seq = vec![BOS_ID];
        seq.extend(model.vocab().tokenize(d).into_inner());
        for s in model.score_from(&seq, 1) {
            sum += s.logp;
            n += 1;
        }
    }
    (n > 0).then(|| (-sum / n as f64).exp())
}

pub fn train_lm(a: TrainLmArgs) -> Result<()> {
    if !(0.0..1.0).contains(&a.heldout) {
        return Err(usage!("--heldout must be in [0, 1)"));
    }
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        order: a.order.unwrap_or(defaults.order),
        smoothing_k: a.k.unwrap_or(defaults.smoothing_k),
        min_count: a.min_count.unwrap_or(defaults.min_count),
        max_vocab: a.max_vocab.or(defaults.max_vocab),
    };
    let docs = read_corpus(&a.corpus)?;
    let n_held = ((docs.len() as f64) * a.heldout).floor() as usize;
    let n_held = n_held.min(docs.len() - 1);
    let (train, held) = docs.split_at(docs.len() - n_held);
    info!("training order-{} model on {} documents", config.order, train.len());
    let model = NgramModel::train(train, &config)?;
    model.save(&a.out)?;
    println!("vocab size: {}", model.vocab_size());
    match heldout_perplexity(&model, held) {
        Some(p) => println!("held-out perplexity ({} documents): {p:.3}", held.len()),
        None => println!("held-out perplexity: n/a (no held-out documents)"),
    }
    Ok(())
}

pub fn synth_corpus(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let base = SynthConfig::default();
    let seed = a.seed.unwrap_or(base.seed);
    let records: Vec<RawRecord> = match a.kind {
        SynthKind::Text => synth_texts(&SynthConfig { seed, target_bytes: a.target_bytes, ..base }),
        SynthKind::Qa => synth_qa(seed, a.n),
        SynthKind::Summary => synth_summaries(seed, a.n),
    };
    let kind = format!("{:?}", a.kind).to_lowercase();
    let header = ctx.header(
        "synth-corpus",
        json!({"kind": kind, "seed": seed, "target_bytes": a.target_bytes, "n": a.n}),
    )?;
    io::write_jsonl(&a.out, &header, &records)?;
    info!("wrote {} {kind} records to {}", records.len(), a.out.display());
    Ok(())
}

pub fn build_tasks(ctx: &Ctx, a: BuildTasksArgs) -> Result<()> {
    let task: TaskKind = a.task.parse()?;
    let records: Vec<RawRecord> = io::read_jsonl(&a.input)?;
    let items = build_from_records(task, &records)?;
    let qualifying = items.len();
    let how = a.shuffle_seed.map_or(Selection::First, Selection::Shuffled);
    let items = select(items, a.n, how);
    if items.is_empty() {
        return Err(usage!("no {task} items qualify in {}", a.input.display()));
    }
    let header = ctx
        .header(
            "build-tasks",
            json!({"task": task, "n": a.n, "shuffle_seed": a.shuffle_seed}),
        )?
        .input(&a.input)?;
    io::write_jsonl(&a.out, &header, &items)?;
    info!("{} of {} records qualify; wrote {}", qualifying, records.len(), items.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_formats() {
        let dir = tempfile::tempdir().unwrap();
        let lines = dir.path().join("a.txt");
        std::fs::write(&lines, "one doc\nsecond doc\n").unwrap();
        assert_eq!(read_corpus(&lines).unwrap(), vec!["one doc", "second doc"]);

        let paras = dir.path().join("b.txt");
        std::fs::write(&paras, "first\nparagraph\n\nsecond one\n").unwrap();
        assert_eq!(read_corpus(&paras).unwrap(), vec!["first paragraph", "second one"]);

        let jsonl = dir.path().join("c.jsonl");
        std::fs::write(&jsonl, "{\"text\": \"t1\"}\n{\"question\": \"q\", \"answer\": \"a1\"}\n").unwrap();
        assert_eq!(read_corpus(&jsonl).unwrap(), vec!["t1", "a1"]);

        let empty = dir.path().join("d.txt");
        std::fs::write(&empty, "\n\n").unwrap();
        assert!(read_corpus(&empty).is_err());
    }
}
