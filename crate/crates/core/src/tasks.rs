//! Benchmark task construction from raw question/answer corpora.
//!
//! Word counts are taken on whitespace-delimited tokens of the raw text, so
//! task selection does not depend on any model vocabulary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::wmcore::SplitMix64;

/// Leading instruction of a summarization prompt.
pub const SUMMARY_PREFIX: &str = "Write a short question that summarizes this question:";
/// Trailing cue of a summarization prompt.
pub const SUMMARY_SUFFIX: &str = "Summarized Question:";

pub const COMPLETION_WINDOW: usize = 230;
pub const COMPLETION_PROMPT_WORDS: usize = 30;
pub const QA_QUESTION_WORDS: usize = 10;
pub const QA_MAX_ANSWER_WORDS: usize = 250;
pub const SUMMARY_MAX_INPUT_WORDS: usize = 60;
pub const SUMMARY_MIN_TARGET_WORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Completion,
    Qa,
    Summarization,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Completion, TaskKind::Qa, TaskKind::Summarization];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Completion => "completion",
            TaskKind::Qa => "qa",
            TaskKind::Summarization => "summarization",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task '{s}' (expected completion, qa or summarization)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    pub task: TaskKind,
    pub prompt: String,
    pub reference: String,
    /// Word counts of the source fields, kept for inspection.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, u64>,
}

impl TaskItem {
    fn new(task: TaskKind, prompt: String, reference: String, metadata: BTreeMap<String, u64>) -> Self {
        Self {
            id: content_id(task, &prompt, &reference),
            task,
            prompt,
            reference,
            metadata,
        }
    }
}

/// Stable id: truncated SHA-256 over task, prompt and reference.
pub fn content_id(task: TaskKind, prompt: &str, reference: &str) -> String {
    let mut h = Sha256::new();
    for part in [task.as_str(), prompt, reference] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..16].to_string()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn meta(pairs: &[(&str, usize)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v as u64)).collect()
}

/// Answers longer than 230 words: of their last 230 words, the first 30
/// become the prompt and the other 200 the reference continuation.
pub fn build_completion<S: AsRef<str>>(answers: &[S]) -> Vec<TaskItem> {
    answers
        .iter()
        .filter_map(|a| {
            let words: Vec<&str> = a.as_ref().split_whitespace().collect();
            if words.len() <= COMPLETION_WINDOW {
                return None;
            }
            let tail = &words[words.len() - COMPLETION_WINDOW..];
            let (p, r) = tail.split_at(COMPLETION_PROMPT_WORDS);
            Some(TaskItem::new(
                TaskKind::Completion,
                p.join(" "),
                r.join(" "),
                meta(&[("source_words", words.len())]),
            ))
        })
        .collect()
}

/// Ten-word questions ending in `?` with answers under 250 words; the
/// question is the prompt as-is.
pub fn build_qa<Q: AsRef<str>, A: AsRef<str>>(pairs: &[(Q, A)]) -> Vec<TaskItem> {
    pairs
        .iter()
        .filter_map(|(q, a)| {
            let (q, a) = (q.as_ref().trim(), a.as_ref().trim());
            let (qw, aw) = (word_count(q), word_count(a));
            (qw == QA_QUESTION_WORDS && q.ends_with('?') && aw > 0 && aw < QA_MAX_ANSWER_WORDS).then(|| {
                TaskItem::new(
                    TaskKind::Qa,
                    q.to_string(),
                    a.to_string(),
                    meta(&[("question_words", qw), ("answer_words", aw)]),
                )
            })
        })
        .collect()
}

/// Summarization prompt around a clinical question.
pub fn summary_prompt(question: &str) -> String {
    format!("{SUMMARY_PREFIX}\n{}\n{SUMMARY_SUFFIX}", question.trim())
}

/// Inputs of at most 60 words whose summaries have at least 10 words.
pub fn build_summarization<Q: AsRef<str>, S: AsRef<str>>(pairs: &[(Q, S)]) -> Vec<TaskItem> {
    pairs
        .iter()
        .filter_map(|(q, s)| {
            let (q, s) = (q.as_ref().trim(), s.as_ref().trim());
            let (qw, sw) = (word_count(q), word_count(s));
            (qw > 0 && qw <= SUMMARY_MAX_INPUT_WORDS && sw >= SUMMARY_MIN_TARGET_WORDS).then(|| {
                TaskItem::new(
                    TaskKind::Summarization,
                    summary_prompt(q),
                    s.to_string(),
                    meta(&[("input_words", qw), ("summary_words", sw)]),
                )
            })
        })
        .collect()
}

/// How to pick `n` items out of the qualifying ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// The first `n` in input order.
    First,
    /// A seeded random subset, returned in input order.
    Shuffled(u64),
}

pub fn select(items: Vec<TaskItem>, n: usize, how: Selection) -> Vec<TaskItem> {
    match how {
        Selection::First => items.into_iter().take(n).collect(),
        Selection::Shuffled(seed) => {
            let mut idx: Vec<usize> = (0..items.len()).collect();
            let mut rng = SplitMix64::new(seed);
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.next_below(i as u64 + 1) as usize);
            }
            let mut keep = idx[..n.min(idx.len())].to_vec();
            keep.sort_unstable();
            let mut slots: Vec<Option<TaskItem>> = items.into_iter().map(Some).collect();
            keep.into_iter().filter_map(|i| slots[i].take()).collect()
        }
    }
}

/// One line of a raw dataset file; which fields are present depends on the
/// dataset (`{text}`, `{question, answer}` or `{question, summary}`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub question: Option<String>,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
}

/// Builds the qualifying items of `task` from raw JSONL records. Completion
/// reads `text`, falling back to `answer`.
pub fn build_from_records(task: TaskKind, records: &[RawRecord]) -> Result<Vec<TaskItem>> {
    let missing = |i: usize, field: &str| Error::Input(format!("record {} has no '{field}' field", i + 1));
    match task {
        TaskKind::Completion => {
            let texts = records
                .iter()
                .enumerate()
                .map(|(i, r)| r.text.as_deref().or(r.answer.as_deref()).ok_or_else(|| missing(i, "text")))
                .collect::<Result<Vec<_>>>()?;
            Ok(build_completion(&texts))
        }
        TaskKind::Qa | TaskKind::Summarization => {
            let second = if task == TaskKind::Qa { "answer" } else { "summary" };
            let pairs = records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let q = r.question.as_deref().ok_or_else(|| missing(i, "question"))?;
                    let t = if task == TaskKind::Qa { &r.answer } else { &r.summary };
                    Ok((q, t.as_deref().ok_or_else(|| missing(i, second))?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(if task == TaskKind::Qa {
                build_qa(&pairs)
            } else {
                build_summarization(&pairs)
            })
        }
    }
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<RawRecord>> {
    crate::wmcore::read_jsonl(input)
}
