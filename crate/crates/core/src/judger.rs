//! Pairwise LLM-judge client: prompt rendering, verdict parsing, a cached
//! and retrying batch runner, and transports (HTTP and an offline mock).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tasks::TaskKind;
use crate::taskeval::fnv1a64;
use crate::wmcore::{splitmix64_mix, SplitMix64};

pub const DEFAULT_MODEL: &str = "GPT-4o-2024-08-06";
pub const DEFAULT_SYSTEM_PROMPT: &str = "You are an impartial expert evaluator of medical text.";
pub const API_KEY_ENV: &str = "FACTMARK_JUDGE_API_KEY";

/// One scored aspect: heading, definition and the guiding question.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Criterion {
    pub name: &'static str,
    pub definition: &'static str,
    pub question: &'static str,
}

const COHERENCE_DEF: &str = "Whether the language is coherent, clear, and understandable.";
const FACTUAL_DEF: &str =
    "Whether the generated text introduces inaccurate or unrelated medical terms not present in the original reference.";

/// The three aspects judged for `task`, in verdict order.
pub fn criteria(task: TaskKind) -> [Criterion; 3] {
    let coherence = Criterion {
        name: "Coherence",
        definition: COHERENCE_DEF,
        question: "Is the language coherence, clear, understandable for a general audience?",
    };
    match task {
        TaskKind::Completion => [
            coherence,
            Criterion {
                name: "Relevance",
                definition: "Whether the text includes relevant information for the prompt.",
                question: "Does the generated text continue the prompt with information relevant to it?",
            },
            Criterion {
                name: "Factual Accuracy",
                definition: FACTUAL_DEF,
                question: "Does the generated text introduce any inaccurate or unrelated medical terms not found in the prompt?",
            },
        ],
        TaskKind::Qa => [
            coherence,
            Criterion {
                name: "Relevance",
                definition: "Whether the answer addresses the question without going off-topic and covering all essential parts.",
                question: "Does the generated answer address the question without going off-topic while covering all of its essential parts?",
            },
            Criterion {
                name: "Factual Accuracy",
                definition: FACTUAL_DEF,
                question: "Does the generated answer introduce any inaccurate or unrelated medical terms not found in the original question?",
            },
        ],
        TaskKind::Summarization => [
            coherence,
            Criterion {
                name: "Completeness",
                definition: "Whether the generated summary misses any important information from the original text.",
                question: "Does the generated summary miss any important information from the original question?",
            },
            Criterion {
                name: "Factual Accuracy",
                definition: FACTUAL_DEF,
                question: "Does the generated summary introduce any inaccurate or unrelated medical terms not found in the original question?",
            },
        ],
    }
}

fn subject(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Completion => "Medical Text Completion",
        TaskKind::Qa => "Answer to the Medical Question",
        TaskKind::Summarization => "Summarized Medical Question",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub task: TaskKind,
    pub prompt_text: String,
    pub answer_a: String,
    pub answer_b: String,
}

impl JudgeRequest {
    pub fn criteria(&self) -> [Criterion; 3] {
        criteria(self.task)
    }

    fn validate(&self) -> Result<()> {
        if self.answer_a.trim().is_empty() || self.answer_b.trim().is_empty() {
            return Err(Error::Input("judge request has an empty answer".into()));
        }
        Ok(())
    }
}

/// Renders the full judging prompt.
pub fn build_prompt(req: &JudgeRequest) -> Result<String> {
    req.validate()?;
    let cs = req.criteria();
    let order = cs.map(|c| c.name).join(", ");
    let mut s = String::new();
    s.push_str(&format!(
        "Please act as an impartial judge and evaluate the quality of the {} provided by two large language models to the prompt displayed below.\n\n",
        subject(req.task)
    ));
    s.push_str(
        "Assess each response according to the criteria outlined, using a 1-5 Likert scale where 1 indicates strong disagreement or the lowest quality, and 5 indicates strong agreement or the highest quality.\n\n",
    );
    s.push_str("Criteria:\n");
    for (i, c) in cs.iter().enumerate() {
        s.push_str(&format!("{}. {}. {} {}\n", i + 1, c.name, c.definition, c.question));
    }
    s.push_str(
        "\nAfter scoring each criterion, provide a short summary for each response, including specific examples that influenced your scoring.\n\
         Additionally, don't let the length of the responses influence your evaluation.\n\
         Be as objective as possible and ensure that the order in which the responses are presented does not affect your decision.\n\n",
    );
    s.push_str(
        "Start with a brief statement about which response you think is superior. Then, for each response and criterion, provide a score, followed by a brief justification for that score. At the very end of your response, declare your verdict by choosing one of the choices below, strictly following the given format:\n\n",
    );
    s.push_str(&format!("[[A]]: [list of scores for LLM A output, in order of {order}]\n"));
    s.push_str(&format!("[[B]]: [list of scores for LLM B output, in order of {order}]\n\n"));
    s.push_str(&format!("[Prompt]\n{}\n\n", req.prompt_text.trim()));
    s.push_str(&format!("[LLM A's Answer]\n{}\n\n", req.answer_a.trim()));
    s.push_str(&format!("[LLM B's Answer]\n{}\n", req.answer_b.trim()));
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub scores_a: [u8; 3],
    pub scores_b: [u8; 3],
    pub raw_response: String,
}

fn verdict_regex(label: char) -> Regex {
    Regex::new(&format!(
        r"\[\[{label}\]\]\s*:\s*\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]"
    ))
    .expect("static regex")
}

fn last_scores(re: &Regex, label: char, raw: &str) -> Result<[u8; 3]> {
    let caps = re.captures_iter(raw).last().ok_or_else(|| Error::Parse {
        message: format!("no [[{label}]] verdict line"),
        raw: raw.to_string(),
    })?;
    let mut out = [0u8; 3];
    for (i, slot) in out.iter_mut().enumerate() {
        let text = &caps[i + 1];
        let v: i64 = text.parse().map_err(|_| Error::Parse {
            message: format!("unreadable score '{text}' for [[{label}]]"),
            raw: raw.to_string(),
        })?;
        if !(1..=5).contains(&v) {
            return Err(Error::Validation(format!("[[{label}]] score {v} outside 1..=5")));
        }
        *slot = v as u8;
    }
    Ok(out)
}

/// Extracts the last `[[A]]: [i, j, k]` and `[[B]]: [i, j, k]` lines.
pub fn parse_verdict(response: &str) -> Result<JudgeVerdict> {
    static RES: OnceLock<(Regex, Regex)> = OnceLock::new();
    let (ra, rb) = RES.get_or_init(|| (verdict_regex('A'), verdict_regex('B')));
    Ok(JudgeVerdict {
        scores_a: last_scores(ra, 'A', response)?,
        scores_b: last_scores(rb, 'B', response)?,
        raw_response: response.to_string(),
    })
}

/// Verdict lines in the format `parse_verdict` reads.
pub fn render_verdict(a: [u8; 3], b: [u8; 3]) -> String {
    format!(
        "[[A]]: [{}, {}, {}]\n[[B]]: [{}, {}, {}]",
        a[0], a[1], a[2], b[0], b[1], b[2]
    )
}

/// A watermarked/unwatermarked answer pair awaiting judgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgePair {
    pub id: String,
    pub task: TaskKind,
    pub prompt: String,
    pub watermarked: String,
    pub unwatermarked: String,
}

/// Whether the watermarked answer is shown in position B for this item.
pub fn swap_bit(seed: u64, id: &str) -> bool {
    splitmix64_mix(seed ^ fnv1a64(id.as_bytes())) & 1 == 1
}

impl JudgePair {
    /// The request to send, and whether A/B were swapped.
    pub fn to_request(&self, seed: u64) -> (JudgeRequest, bool) {
        let swapped = swap_bit(seed, &self.id);
        let (a, b) = if swapped {
            (&self.unwatermarked, &self.watermarked)
        } else {
            (&self.watermarked, &self.unwatermarked)
        };
        let req = JudgeRequest {
            task: self.task,
            prompt_text: self.prompt.clone(),
            answer_a: a.clone(),
            answer_b: b.clone(),
        };
        (req, swapped)
    }
}

/// `(watermarked, unwatermarked)` scores, undoing any presentation swap.
pub fn orient(verdict: &JudgeVerdict, swapped: bool) -> ([u8; 3], [u8; 3]) {
    if swapped {
        (verdict.scores_b, verdict.scores_a)
    } else {
        (verdict.scores_a, verdict.scores_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of a chat-completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model: &str, system: &str, user: String) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage { role: "system".into(), content: system.to_string() },
                ChatMessage { role: "user".into(), content: user },
            ],
            temperature: 0.0,
        }
    }

    pub fn user_prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

/// Something that answers chat-completion requests.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// OpenAI-style `/chat/completions` endpoint over HTTPS.
pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            api_key,
            agent,
        }
    }

    /// Reads the bearer token from environment variable `var`.
    pub fn from_env(endpoint: &str, var: &str, timeout: Duration) -> Result<Self> {
        let key = std::env::var(var)
            .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?;
        Ok(Self::new(endpoint, key, timeout))
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request)
            .map_err(|e| Error::Transport(e.to_string()))?;
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(e.to_string()))?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Transport("response has no choices[0].message.content".into()))
    }
}

type Responder = dyn Fn(&ChatRequest, usize) -> Result<String> + Send + Sync;

/// Offline transport driven by a closure; counts every call.
pub struct MockTransport {
    responder: Box<Responder>,
    calls: AtomicUsize,
}

impl MockTransport {
    /// `f(request, call_number)` with calls numbered from 0.
    pub fn new(f: impl Fn(&ChatRequest, usize) -> Result<String> + Send + Sync + 'static) -> Self {
        Self {
            responder: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    /// Always replies with `response`.
    pub fn canned(response: &str) -> Self {
        let r = response.to_string();
        Self::new(move |_, _| Ok(r.clone()))
    }

    /// Fails the first `failures` calls, then replies with `response`.
    pub fn flaky(failures: usize, response: &str) -> Self {
        let r = response.to_string();
        Self::new(move |_, n| {
            if n < failures {
                Err(Error::Transport(format!("simulated failure {}", n + 1)))
            } else {
                Ok(r.clone())
            }
        })
    }

    /// Scores drawn from a hash of the prompt: deterministic, content-blind.
    pub fn hashed() -> Self {
        Self::new(|req, _| {
            let mut rng = SplitMix64::new(fnv1a64(req.user_prompt().as_bytes()));
            let mut s = || 1 + rng.next_below(5) as u8;
            let (a, b) = ([s(), s(), s()], [s(), s(), s()]);
            Ok(format!("Mock evaluation.\n\n{}", render_verdict(a, b)))
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for MockTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(request, n)
    }
}

fn sha256_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Cache key of a prompt sent to `model`.
pub fn cache_key(model: &str, prompt: &str) -> String {
    sha256_hex(&[model, prompt])
}

/// Parsed scores as stored in the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedScores {
    pub scores_a: [u8; 3],
    pub scores_b: [u8; 3],
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request_hash: String,
    pub raw_response: String,
    pub parsed: CachedScores,
}

/// Judged responses keyed by [`cache_key`], optionally appended to a JSONL
/// file as they arrive so an interrupted batch can resume.
pub struct JudgeCache {
    entries: Mutex<HashMap<String, CacheEntry>>,
    file: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl JudgeCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
            path: None,
        }
    }

    /// Loads existing entries from `path` (if present) and appends new ones there.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let loaded: Vec<CacheEntry> = crate::wmcore::read_jsonl(BufReader::new(File::open(path)?))?;
            for e in loaded {
                entries.insert(e.key.clone(), e);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<()> {
        let mut file = self.file.lock().unwrap();
        if let Some(f) = file.as_mut() {
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries.lock().unwrap().insert(entry.key.clone(), entry);
        Ok(())
    }

    /// Rewrites the backing file with one line per key, sorted by key.
    /// Entries are appended in completion order during a batch; compacting
    /// afterwards makes the file independent of scheduling.
    pub fn compact(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut file = self.file.lock().unwrap();
        let mut entries: Vec<CacheEntry> = self.entries.lock().unwrap().values().cloned().collect();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        let tmp = path.with_extension("compact.tmp");
        let mut out = std::io::BufWriter::new(File::create(&tmp)?);
        crate::wmcore::write_jsonl(&mut out, &entries)?;
        out.flush()?;
        drop(out);
        std::fs::rename(&tmp, path)?;
        *file = Some(OpenOptions::new().append(true).open(path)?);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    pub model: String,
    pub system_prompt: String,
    /// Extra attempts after the first transport failure.
    pub max_retries: usize,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
    pub max_in_flight: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

/// Result for one request of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeOutcome {
    pub index: usize,
    pub key: String,
    pub verdict: std::result::Result<JudgeVerdict, String>,
    pub from_cache: bool,
    /// Transport calls made for this item (0 on a cache hit).
    pub attempts: usize,
}

fn judge_one(
    index: usize,
    req: &JudgeRequest,
    transport: &dyn Transport,
    cache: &JudgeCache,
    opts: &BatchOptions,
) -> JudgeOutcome {
    let prompt = match build_prompt(req) {
        Ok(p) => p,
        Err(e) => {
            return JudgeOutcome {
                index,
                key: String::new(),
                verdict: Err(e.to_string()),
                from_cache: false,
                attempts: 0,
            }
        }
    };
    let key = cache_key(&opts.model, &prompt);
    if let Some(hit) = cache.get(&key) {
        return JudgeOutcome {
            index,
            key,
            verdict: Ok(JudgeVerdict {
                scores_a: hit.parsed.scores_a,
                scores_b: hit.parsed.scores_b,
                raw_response: hit.raw_response,
            }),
            from_cache: true,
            attempts: 0,
        };
    }
    let chat = ChatRequest::new(&opts.model, &opts.system_prompt, prompt);
    let mut attempts = 0;
    let mut delay = opts.backoff_base;
    let response = loop {
        attempts += 1;
        match transport.complete(&chat) {
            Ok(r) => break Ok(r),
            Err(e) if attempts > opts.max_retries => break Err(format!("{e} (after {attempts} attempts)")),
            Err(_) => {
                std::thread::sleep(delay);
                delay = (delay * 2).min(opts.backoff_max);
            }
        }
    };
    let verdict = response.and_then(|raw| parse_verdict(&raw).map_err(|e| e.to_string()));
    let verdict = verdict.and_then(|v| {
        let entry = CacheEntry {
            key: key.clone(),
            request_hash: sha256_hex(&[&serde_json::to_string(&chat).unwrap_or_default()]),
            raw_response: v.raw_response.clone(),
            parsed: CachedScores { scores_a: v.scores_a, scores_b: v.scores_b },
        };
        cache.insert(entry).map_err(|e| format!("cache write failed: {e}"))?;
        Ok(v)
    });
    JudgeOutcome {
        index,
        key,
        verdict,
        from_cache: false,
        attempts,
    }
}

/// Judges every request, at most `max_in_flight` at a time. Cached prompts
/// are never resent; failures are reported per item. Output is in request order.
pub fn judge_batch(
    requests: &[JudgeRequest],
    transport: &dyn Transport,
    cache: &JudgeCache,
    opts: &BatchOptions,
) -> Vec<JudgeOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<JudgeOutcome>>> = Mutex::new(vec![None; requests.len()]);
    let workers = opts.max_in_flight.clamp(1, requests.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = requests.get(i) else { break };
                let out = judge_one(i, req, transport, cache, opts);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "Overall Superior Response: LLM A provides a more detailed summary.\n\nVerdict\n[[A]]: [4, 5, 5]\n[[B]]: [3, 3, 4]";

    fn request(task: TaskKind, n: usize) -> JudgeRequest {
        JudgeRequest {
            task,
            prompt_text: format!("prompt {n}"),
            answer_a: format!("first answer {n}"),
            answer_b: format!("second answer {n}"),
        }
    }

    fn fast() -> BatchOptions {
        BatchOptions {
            backoff_base: Duration::ZERO,
            backoff_max: Duration::ZERO,
            ..BatchOptions::default()
        }
    }

    #[test]
    fn parses_sample_verdict() {
        let v = parse_verdict(SAMPLE).unwrap();
        assert_eq!(v.scores_a, [4, 5, 5]);
        assert_eq!(v.scores_b, [3, 3, 4]);
        assert_eq!(v.raw_response, SAMPLE);
    }

    #[test]
    fn last_block_wins_and_spacing_is_free() {
        let r = "[[A]]: [1, 1, 1]\n[[B]]: [1, 1, 1]\nrevised:\n[[A]] :[ 2,3 ,4 ]\n[[B]]:[5,5,5]";
        let v = parse_verdict(r).unwrap();
        assert_eq!((v.scores_a, v.scores_b), ([2, 3, 4], [5, 5, 5]));
    }

    #[test]
    fn parse_errors() {
        match parse_verdict("[[A]]: [6, 1, 1]\n[[B]]: [1, 1, 1]") {
            Err(Error::Validation(_)) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_verdict("[[A]]: [0, 1, 1]\n[[B]]: [1, 1, 1]"), Err(Error::Validation(_))));
        assert!(matches!(parse_verdict("[[A]]: [-1, 1, 1]\n[[B]]: [1, 1, 1]"), Err(Error::Validation(_))));
        match parse_verdict("[[A]]: [1, 2]\n[[B]]: [1, 1, 1]") {
            Err(Error::Parse { raw, .. }) => assert!(raw.contains("[[A]]")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_verdict("no verdict"), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_verdict("[[A]]: [99999999999999999999, 1, 1]\n[[B]]: [1, 1, 1]"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn render_round_trips_every_verdict() {
        for code in 0..5usize.pow(6) {
            let d: Vec<u8> = (0..6).map(|i| (code / 5usize.pow(i) % 5) as u8 + 1).collect();
            let (a, b) = ([d[0], d[1], d[2]], [d[3], d[4], d[5]]);
            let v = parse_verdict(&render_verdict(a, b)).unwrap();
            assert_eq!((v.scores_a, v.scores_b), (a, b));
        }
    }

    #[test]
    fn prompt_structure() {
        let p = build_prompt(&request(TaskKind::Summarization, 0)).unwrap();
        assert!(p.starts_with("Please act as an impartial judge"));
        assert!(p.contains("misses any important information"));
        assert!(p.contains("in order of Coherence, Completeness, Factual Accuracy]"));
        let a = p.find("[Prompt]").unwrap();
        let b = p.find("[LLM A's Answer]").unwrap();
        let c = p.find("[LLM B's Answer]").unwrap();
        assert!(p.find("Criteria:").unwrap() < a && a < b && b < c);

        let q = build_prompt(&request(TaskKind::Qa, 0)).unwrap();
        assert!(q.contains("without going off-topic and covering all essential parts"));
        assert!(q.contains("in order of Coherence, Relevance, Factual Accuracy]"));
        assert_eq!(q, build_prompt(&request(TaskKind::Qa, 0)).unwrap());
    }

    #[test]
    fn empty_answer_is_rejected() {
        let mut r = request(TaskKind::Qa, 0);
        r.answer_b = "  ".into();
        assert!(build_prompt(&r).is_err());
    }

    #[test]
    fn swap_is_undone() {
        let pair = JudgePair {
            id: "x".into(),
            task: TaskKind::Qa,
            prompt: "p".into(),
            watermarked: "wm".into(),
            unwatermarked: "plain".into(),
        };
        let mut seen = [false; 2];
        for seed in 0..40 {
            let (req, swapped) = pair.to_request(seed);
            seen[swapped as usize] = true;
            // Judge that gives 5s to the watermarked text wherever it is shown.
            let wm_first = req.answer_a == "wm";
            assert_eq!(wm_first, !swapped);
            let v = if wm_first {
                parse_verdict(&render_verdict([5; 3], [1; 3])).unwrap()
            } else {
                parse_verdict(&render_verdict([1; 3], [5; 3])).unwrap()
            };
            assert_eq!(orient(&v, swapped), ([5; 3], [1; 3]));
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn retries_until_success() {
        let t = MockTransport::flaky(2, SAMPLE);
        let out = judge_batch(&[request(TaskKind::Qa, 0)], &t, &JudgeCache::in_memory(), &fast());
        assert_eq!(out[0].verdict.as_ref().unwrap().scores_a, [4, 5, 5]);
        assert_eq!(out[0].attempts, 3);
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn exhausted_retries_fail_one_item_only() {
        let t = MockTransport::new(|req, _| {
            if req.user_prompt().contains("prompt 1\n") {
                Err(Error::Transport("down".into()))
            } else {
                Ok(SAMPLE.to_string())
            }
        });
        let reqs: Vec<_> = (0..3).map(|i| request(TaskKind::Qa, i)).collect();
        let opts = BatchOptions { max_retries: 2, ..fast() };
        let out = judge_batch(&reqs, &t, &JudgeCache::in_memory(), &opts);
        assert!(out[0].verdict.is_ok() && out[2].verdict.is_ok());
        assert!(out[1].verdict.as_ref().unwrap_err().contains("down"));
        assert_eq!(out[1].attempts, 3);
    }

    #[test]
    fn cache_hits_skip_transport() {
        let cache = JudgeCache::in_memory();
        let reqs: Vec<_> = (0..5).map(|i| request(TaskKind::Completion, i)).collect();
        let t = MockTransport::canned(SAMPLE);
        let first = judge_batch(&reqs, &t, &cache, &fast());
        assert_eq!(t.calls(), 5);
        let t2 = MockTransport::canned("unused");
        let second = judge_batch(&reqs, &t2, &cache, &fast());
        assert_eq!(t2.calls(), 0);
        assert!(second.iter().all(|o| o.from_cache));
        let v = |o: &[JudgeOutcome]| o.iter().map(|x| x.verdict.clone().unwrap()).collect::<Vec<_>>();
        assert_eq!(v(&first), v(&second));
    }

    #[test]
    fn compacted_cache_is_sorted_and_still_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let reqs: Vec<_> = (0..12).map(|i| request(TaskKind::Qa, i)).collect();
        let cache = JudgeCache::open(&path).unwrap();
        judge_batch(&reqs, &MockTransport::hashed(), &cache, &BatchOptions { max_in_flight: 4, ..fast() });
        cache.compact().unwrap();
        let lines: Vec<CacheEntry> = crate::wmcore::read_jsonl(BufReader::new(File::open(&path).unwrap())).unwrap();
        assert_eq!(lines.len(), 12);
        assert!(lines.windows(2).all(|w| w[0].key < w[1].key));
        // Appends after compaction land in the rewritten file.
        let more = [request(TaskKind::Summarization, 99)];
        judge_batch(&more, &MockTransport::hashed(), &cache, &fast());
        let t = MockTransport::hashed();
        let reopened = JudgeCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 13);
        judge_batch(&reqs, &t, &reopened, &fast());
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn results_follow_request_order() {
        let t = MockTransport::hashed();
        let reqs: Vec<_> = (0..20).map(|i| request(TaskKind::Qa, i)).collect();
        let opts = BatchOptions { max_in_flight: 6, ..fast() };
        let out = judge_batch(&reqs, &t, &JudgeCache::in_memory(), &opts);
        assert!(out.iter().enumerate().all(|(i, o)| o.index == i));
        let serial = judge_batch(&reqs, &t, &JudgeCache::in_memory(), &BatchOptions { max_in_flight: 1, ..fast() });
        assert_eq!(
            out.iter().map(|o| o.verdict.clone().unwrap()).collect::<Vec<_>>(),
            serial.iter().map(|o| o.verdict.clone().unwrap()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn model_name_is_part_of_the_key() {
        assert_ne!(cache_key("m1", "p"), cache_key("m2", "p"));
        assert_eq!(cache_key("m1", "p").len(), 64);
    }
}
