//! Pairwise watermarked-vs-unwatermarked judgements.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use anyhow::Result;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use factmark::judger::{
    judge_batch, orient, BatchOptions, HttpTransport, JudgeCache, JudgePair, MockTransport,
    Transport,
};

use super::{load_generations, load_tasks, Ctx};
use crate::args::JudgeArgs;
use crate::{io, usage};

/// One line of a pairs file; `method` labels the watermarked side.
#[derive(Debug, Clone, Deserialize)]
struct PairLine {
    #[serde(flatten)]
    pair: JudgePair,
    #[serde(default)]
    method: Option<String>,
}

/// Judge scores in criterion order, re-oriented to watermarked/unwatermarked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub id: String,
    pub method: String,
    /// Whether the watermarked answer was shown as "B".
    pub swapped: bool,
    pub watermarked: Option<[u8; 3]>,
    pub unwatermarked: Option<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn pairs_from_generations(wm: &Path, unwm: &Path, tasks: &Path) -> Result<Vec<(JudgePair, String)>> {
    let tasks = load_tasks(tasks)?;
    let tasks: HashMap<&str, _> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let plain: HashMap<String, String> = load_generations(unwm)?
        .into_iter()
        .map(|g| (g.record.id, g.text))
        .collect();
    let mut out = Vec::new();
    for g in load_generations(wm)? {
        let id = &g.record.id;
        let task = tasks.get(id.as_str()).ok_or_else(|| usage!("generation {id} has no matching task"))?;
        let Some(other) = plain.get(id) else {
            warn!("{id}: no unwatermarked counterpart, skipped");
            continue;
        };
        out.push((
            JudgePair {
                id: id.clone(),
                task: task.task,
                prompt: task.prompt.clone(),
                watermarked: g.text.clone(),
                unwatermarked: other.clone(),
            },
            g.record.method.to_string(),
        ));
    }
    Ok(out)
}

pub fn run(ctx: &mut Ctx, a: JudgeArgs) -> Result<()> {
    let j = &mut ctx.cfg.judge;
    if let Some(m) = a.judge_model.clone() {
        j.model = m;
    }
    if let Some(e) = a.endpoint.clone() {
        j.endpoint = e;
    }
    if let Some(v) = a.api_key_env.clone() {
        j.api_key_env = v;
    }
    if let Some(n) = a.max_in_flight {
        j.max_in_flight = n;
    }
    if let Some(n) = a.max_retries {
        j.max_retries = n;
    }
    if a.cache.is_some() {
        j.cache = a.cache.clone();
    }
    let seed = a.seed.unwrap_or(ctx.cfg.seed);
    let j = ctx.cfg.judge.clone();

    let (pairs, inputs): (Vec<(JudgePair, String)>, Vec<&Path>) = match (&a.pairs, &a.watermarked) {
        (Some(p), _) => (
            io::read_jsonl::<PairLine>(p)?
                .into_iter()
                .map(|l| (l.pair, l.method.unwrap_or_else(|| "watermarked".into())))
                .collect(),
            vec![p.as_path()],
        ),
        (None, Some(w)) => {
            let (u, t) = (a.unwatermarked.as_ref().unwrap(), a.tasks.as_ref().unwrap());
            (pairs_from_generations(w, u, t)?, vec![w.as_path(), u.as_path(), t.as_path()])
        }
        (None, None) => return Err(usage!("give --pairs, or --watermarked with --unwatermarked and --tasks")),
    };
    if pairs.is_empty() {
        return Err(usage!("nothing to judge"));
    }

    let transport: Box<dyn Transport> = if a.mock {
        Box::new(MockTransport::hashed())
    } else {
        Box::new(HttpTransport::from_env(&j.endpoint, &j.api_key_env, Duration::from_secs(j.timeout_secs))?)
    };
    let cache = match &j.cache {
        Some(p) => JudgeCache::open(p)?,
        None => JudgeCache::in_memory(),
    };
    let opts = BatchOptions {
        model: j.model.clone(),
        system_prompt: j.system_prompt.clone(),
        max_retries: j.max_retries,
        backoff_base: Duration::from_millis(j.backoff_ms),
        max_in_flight: j.max_in_flight.max(1),
        ..BatchOptions::default()
    };

    let (requests, swaps): (Vec<_>, Vec<_>) = pairs.iter().map(|(p, _)| p.to_request(seed)).unzip();
    info!("judging {} pairs with {} ({} cached)", requests.len(), opts.model, cache.len());
    let outcomes = judge_batch(&requests, transport.as_ref(), &cache, &opts);
    cache.compact()?;
    let cached = outcomes.iter().filter(|o| o.from_cache).count();

    let mut records: Vec<JudgeRecord> = outcomes
        .iter()
        .zip(&pairs)
        .zip(&swaps)
        .map(|((o, (pair, method)), &swapped)| {
            let (wm, unwm, error) = match &o.verdict {
                Ok(v) => {
                    let (w, u) = orient(v, swapped);
                    (Some(w), Some(u), None)
                }
                Err(e) => (None, None, Some(e.clone())),
            };
            JudgeRecord { id: pair.id.clone(), method: method.clone(), swapped, watermarked: wm, unwatermarked: unwm, error }
        })
        .collect();
    records.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.method.cmp(&b.method)));
    let failed = records.iter().filter(|r| r.error.is_some()).count();

    let header = ctx
        .header(
            "judge",
            json!({
                "seed": seed,
                "model": opts.model,
                "system_prompt": opts.system_prompt,
                "mock": a.mock,
            }),
        )?
        .inputs(inputs)?;
    io::write_jsonl(&a.out, &header, &records)?;
    println!("judged {} pairs: {cached} from cache, {failed} failed", records.len());
    if failed == records.len() {
        anyhow::bail!("every judgement failed");
    }
    Ok(())
}
