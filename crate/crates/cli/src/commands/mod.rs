mod analyze;
mod data;
mod detect;
mod evaluate;
mod fws;
mod judge;
mod sweep;

use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use factmark::tasks::TaskItem;
use factmark::textmodel::NgramModel;

use crate::args::{Cli, Command};
use crate::config::Config;
use crate::io::{self, Header};
use crate::pipeline::GenOutput;
use crate::usage;

/// Settings shared by every subcommand.
pub struct Ctx {
    pub cfg: Config,
    pub deterministic: bool,
}

impl Ctx {
    pub fn header(&self, command: &str, params: impl Serialize) -> Result<Header> {
        Ok(Header::new(command, serde_json::to_value(params)?, self.deterministic))
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if cfg.jobs == 0 {
        return Err(usage!("--jobs must be at least 1"));
    }
    // Only the first call in a process takes effect; later ones keep that pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    let mut ctx = Ctx { cfg, deterministic: cli.deterministic };
    match cli.command {
        Command::TrainLm(a) => data::train_lm(a),
        Command::SynthCorpus(a) => data::synth_corpus(&ctx, a),
        Command::BuildTasks(a) => data::build_tasks(&ctx, a),
        Command::Generate(a) => detect::generate(&mut ctx, a),
        Command::Detect(a) => detect::detect(&mut ctx, a),
        Command::Evaluate(a) => evaluate::run(&ctx, a),
        Command::Analyze(a) => analyze::run(&mut ctx, a),
        Command::Judge(a) => judge::run(&mut ctx, a),
        Command::Fws(a) => fws::run(&ctx, a),
        Command::Sweep(a) => sweep::run(&mut ctx, a),
    }
}

pub(crate) fn load_model(path: &Path) -> Result<NgramModel> {
    if !path.is_file() {
        return Err(usage!("model file {} not found", path.display()));
    }
    NgramModel::load(path).map_err(|e| usage!("cannot load model {}: {e}", path.display()))
}

pub(crate) fn load_tasks(path: &Path) -> Result<Vec<TaskItem>> {
    let tasks: Vec<TaskItem> = io::read_jsonl(path)?;
    if tasks.is_empty() {
        return Err(usage!("{} contains no tasks", path.display()));
    }
    Ok(tasks)
}

pub(crate) fn load_generations(path: &Path) -> Result<Vec<GenOutput>> {
    let gens: Vec<GenOutput> = io::read_jsonl(path)?;
    if gens.is_empty() {
        return Err(usage!("{} contains no generations", path.display()));
    }
    Ok(gens)
}

/// Looks up the task for each generation by id.
pub(crate) fn match_tasks<'a>(
    tasks: &'a [TaskItem],
    gens: &[GenOutput],
) -> Result<Vec<&'a TaskItem>> {
    let by_id: std::collections::HashMap<&str, &TaskItem> =
        tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    gens.iter()
        .map(|g| {
            by_id
                .get(g.record.id.as_str())
                .copied()
                .ok_or_else(|| usage!("generation {} has no matching task", g.record.id))
        })
        .collect()
}

/// Left-aligned first column, right-aligned others, widths fitted to content.
pub(crate) fn render_table(head: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = head.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(head.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub(crate) fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => "-".into(),
    }
}
