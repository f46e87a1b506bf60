//! Seeded generator of clinical-style prose, questions and summaries.
//!
//! Stands in for a real corpus when none is available: a small probabilistic
//! grammar over disease terms, drugs, body parts and clinical phrasing. The
//! output is varied enough for an n-gram model to have genuinely uncertain
//! next-token distributions, which the watermarks need.

use std::collections::BTreeMap;

use crate::factuality::Gazetteer;
use crate::tasks::RawRecord;
use crate::wmcore::SplitMix64;

const SUBJECTS: &[&str] = &[
    "the patient", "a patient", "the woman", "the man", "an elderly patient", "a young adult",
    "the child", "her mother", "his father", "the athlete", "a pregnant woman", "the teenager",
    "an older man", "a middle aged woman", "the resident", "the caregiver", "my sister",
    "my husband", "our son", "the worker",
];

const CLINICIANS: &[&str] = &[
    "the doctor", "the nurse", "a specialist", "the pharmacist", "the cardiologist",
    "the neurologist", "the surgeon", "a physiotherapist", "the general practitioner",
    "the dermatologist", "the midwife", "the emergency team", "a dietitian", "the consultant",
];

const BODY_PARTS: &[&str] = &[
    "knee", "lower back", "left arm", "right hand", "chest", "stomach", "throat", "neck",
    "shoulder", "ankle", "foot", "hip", "wrist", "jaw", "eyes", "ears", "skin", "scalp",
    "abdomen", "lungs", "liver", "kidneys", "heart", "bladder", "spine", "elbow", "toes",
];

const DRUGS: &[&str] = &[
    "ibuprofen", "paracetamol", "amoxicillin", "metformin", "insulin", "aspirin", "omeprazole",
    "lisinopril", "atorvastatin", "prednisolone", "salbutamol", "sertraline", "codeine",
    "naproxen", "levothyroxine", "warfarin", "amlodipine", "doxycycline", "loratadine",
    "pseudoephedrine", "ramipril", "citalopram", "gabapentin", "diclofenac", "furosemide",
    "cetirizine", "azithromycin", "bisoprolol", "simvastatin", "tramadol",
];

const DURATIONS: &[&str] = &[
    "two days", "three days", "a week", "two weeks", "ten days", "a month", "several months",
    "six weeks", "a few hours", "the last year", "several years", "four days", "a fortnight",
    "most of the winter", "three months", "since childhood",
];

const FREQUENCIES: &[&str] = &[
    "once a day", "twice a day", "three times a day", "every morning", "at night",
    "every four hours", "with meals", "before bed", "as needed", "every other day", "weekly",
];

const TESTS: &[&str] = &[
    "a blood test", "an x-ray", "an ultrasound", "a urine sample", "a biopsy", "an mri scan",
    "a ct scan", "an ecg", "a stool sample", "a skin swab", "a lung function test",
    "a glucose tolerance test", "a thyroid panel", "a liver function test",
];

const ADVICE: &[&str] = &[
    "drink plenty of fluids", "rest as much as possible", "avoid heavy lifting",
    "reduce salt in the diet", "stop smoking", "keep a symptom diary", "sleep with the head raised",
    "avoid alcohol", "take regular gentle exercise", "apply a cold compress",
    "wear loose clothing", "eat smaller meals", "limit caffeine", "keep the area clean and dry",
    "lose some weight", "stay at home until the fever settles",
];

const SEVERITY: &[&str] = &[
    "mild", "moderate", "severe", "persistent", "sudden", "recurrent", "worsening", "occasional",
    "sharp", "dull", "constant", "intermittent", "chronic", "acute",
];

const OUTCOMES: &[&str] = &[
    "the symptoms improved", "the pain eased", "the fever came down", "the rash cleared",
    "nothing changed", "the swelling went down", "the cough got worse", "sleep improved",
    "the results came back normal", "the blood pressure settled", "the dizziness stopped",
    "the infection cleared",
];

const TIMES: &[&str] = &[
    "in the morning", "at night", "after eating", "during exercise", "when standing up",
    "after a long walk", "in cold weather", "when lying down", "at work", "after coughing",
];

const CONNECTIVES: &[&str] = &[
    "however", "in addition", "as a result", "for this reason", "in most cases", "sometimes",
    "usually", "if needed", "after that", "in rare cases", "at first", "later",
];

const SENTENCES: &[&str] = &[
    "{subj} has had {sev} {cond} for {dur} .",
    "{subj} reported {sev} pain in the {body} {time} .",
    "{clin} suggested {test} to rule out {cond} .",
    "{clin} prescribed {drug} {freq} for {dur} .",
    "{conn} , {cond} can cause {sev} {cond2} and {cond3} .",
    "the most common symptoms of {cond} are {cond2} , {cond3} and {sev} pain in the {body} .",
    "if you have {cond} , you should {adv} and {adv2} .",
    "{drug} is often used to treat {cond} , but it may cause {cond2} .",
    "do not take {drug} with {drug2} unless {clin} says it is safe .",
    "after {dur} of treatment with {drug} , {out} .",
    "{subj} was admitted with {cond} and {sev} {cond2} .",
    "{conn} , {subj} should see {clin} if the {body} becomes swollen or painful .",
    "{test} showed signs of {cond} in the {body} .",
    "people with {cond} are more likely to develop {cond2} later in life .",
    "{clin} explained that {cond} is not usually serious , but {cond2} can be .",
    "the risk of {cond} is higher in people who smoke or have {cond2} .",
    "{subj} felt {sev} {cond} {time} and could not sleep .",
    "it is important to {adv} while taking {drug} .",
    "{conn} , {out} within {dur} .",
    "{subj} asked whether {drug} could help with {cond} .",
    "symptoms of {cond} include {cond2} , {cond3} and a {sev} feeling of {cond4} .",
    "{clin} checked the {body} and ordered {test} .",
    "{subj} stopped taking {drug} because of {cond} .",
    "treatment for {cond} depends on the cause , and {clin} may recommend {drug} .",
    "call {clin} straight away if {subj} develops {cond} or {sev} {cond2} .",
    "most people recover from {cond} in {dur} without treatment .",
    "{subj} had {cond} {dur} ago and now has {sev} pain in the {body} .",
    "a diet low in sugar helps to control {cond} and may prevent {cond2} .",
];

const QUESTIONS: &[&str] = &[
    "what is the best treatment for {cond} in adults?",
    "can {drug} be taken together with {drug2} safely?",
    "how long does {cond} usually last in young children?",
    "is it normal to have {sev} pain after {cond}?",
    "why does my {body} hurt {time} every day?",
    "what are the early warning signs of {cond} in women?",
    "how should {drug} be taken for {cond} and {cond2}?",
    "should i see {clin} about {sev} {cond} {time}?",
];

const LONG_QUESTIONS: &[&str] = &[
    "i have had {sev} {cond} for {dur} and {drug} does not help . my {body} also hurts {time} . what should i do next and is it serious?",
    "my {rel} was told by {clin} that she has {cond} . she already takes {drug} {freq} . can she also take {drug2} , or will it make the {cond2} worse?",
    "hello , {subj} has {sev} {cond2} and {cond} after {test} . how long will recovery take and what can we do at home to help?",
    "is there any link between {cond} and {cond2} ? i have both and i take {drug} {freq} . thank you for any advice .",
];

const SUMMARIES: &[&str] = &[
    "what are the treatments for {cond} when {drug} does not help?",
    "can {drug2} be taken with {drug} by someone who has {cond}?",
    "how long is recovery from {cond} and {cond2} and how can it be managed at home?",
    "is there a relationship between {cond} and {cond2} for a patient taking {drug}?",
];

const RELATIVES: &[&str] = &["mother", "sister", "wife", "daughter", "grandmother", "aunt"];

struct Filler<'a> {
    rng: SplitMix64,
    conditions: &'a [String],
}

impl Filler<'_> {
    fn pick<'b>(&mut self, list: &'b [&'b str]) -> &'b str {
        list[self.rng.next_below(list.len() as u64) as usize]
    }

    fn condition(&mut self) -> String {
        self.conditions[self.rng.next_below(self.conditions.len() as u64) as usize].clone()
    }

    /// Replaces every `{slot}`. A slot name seen before in `memo` reuses its
    /// value; distinct names (`cond`, `cond2`) are drawn independently.
    fn fill_with(&mut self, template: &str, memo: &mut BTreeMap<String, String>) -> String {
        let mut out = String::with_capacity(template.len() * 2);
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = open + rest[open..].find('}').expect("closed slot");
            let name = &rest[open + 1..close];
            if !memo.contains_key(name) {
                let word = self.draw(name.trim_end_matches(|c: char| c.is_ascii_digit()));
                memo.insert(name.to_string(), word);
            }
            out.push_str(&memo[name]);
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        out
    }

    fn fill(&mut self, template: &str) -> String {
        self.fill_with(template, &mut BTreeMap::new())
    }

    fn draw(&mut self, slot: &str) -> String {
        match slot {
            "subj" => self.pick(SUBJECTS).to_string(),
            "clin" => self.pick(CLINICIANS).to_string(),
            "body" => self.pick(BODY_PARTS).to_string(),
            "drug" => self.pick(DRUGS).to_string(),
            "dur" => self.pick(DURATIONS).to_string(),
            "freq" => self.pick(FREQUENCIES).to_string(),
            "test" => self.pick(TESTS).to_string(),
            "adv" => self.pick(ADVICE).to_string(),
            "sev" => self.pick(SEVERITY).to_string(),
            "out" => self.pick(OUTCOMES).to_string(),
            "time" => self.pick(TIMES).to_string(),
            "conn" => self.pick(CONNECTIVES).to_string(),
            "rel" => self.pick(RELATIVES).to_string(),
            "cond" => self.condition(),
            other => unreachable!("unknown slot {other}"),
        }
    }

    fn between(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.rng.next_below((hi - lo + 1) as u64) as usize
    }
}

/// Parameters of [`synth_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Stop once the documents total at least this many bytes.
    pub target_bytes: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0x0C11_1A1C,
            target_bytes: 1_200_000,
            min_sentences: 14,
            max_sentences: 30,
        }
    }
}

fn filler(seed: u64) -> (SplitMix64, Vec<String>) {
    (SplitMix64::new(seed), Gazetteer::bundled().terms())
}

/// Multi-sentence clinical documents, deterministic in `config`.
pub fn synth_corpus(config: &SynthConfig) -> Vec<String> {
    let (rng, conditions) = filler(config.seed);
    let mut f = Filler { rng, conditions: &conditions };
    let mut docs = Vec::new();
    let mut bytes = 0;
    while bytes < config.target_bytes {
        let n = f.between(config.min_sentences, config.max_sentences.max(config.min_sentences));
        let doc = (0..n)
            .map(|_| {
                let t = f.pick(SENTENCES);
                f.fill(t)
            })
            .collect::<Vec<_>>()
            .join(" ");
        bytes += doc.len() + 1;
        docs.push(doc);
    }
    docs
}

/// Question/answer records; some questions miss the ten-word filter on
/// purpose, as in real data.
pub fn synth_qa(seed: u64, n: usize) -> Vec<RawRecord> {
    let (rng, conditions) = filler(seed);
    let mut f = Filler { rng, conditions: &conditions };
    (0..n)
        .map(|_| {
            let q = f.pick(QUESTIONS);
            let question = f.fill(q);
            let k = f.between(3, 12);
            let answer = (0..k)
                .map(|_| {
                    let t = f.pick(SENTENCES);
                    f.fill(t)
                })
                .collect::<Vec<_>>()
                .join(" ");
            RawRecord {
                question: Some(question),
                answer: Some(answer),
                ..RawRecord::default()
            }
        })
        .collect()
}

/// Long consumer question / short summary records.
pub fn synth_summaries(seed: u64, n: usize) -> Vec<RawRecord> {
    let (rng, conditions) = filler(seed);
    let mut f = Filler { rng, conditions: &conditions };
    (0..n)
        .map(|_| {
            let i = f.rng.next_below(LONG_QUESTIONS.len() as u64) as usize;
            let mut memo = BTreeMap::new();
            let question = f.fill_with(LONG_QUESTIONS[i], &mut memo);
            let summary = f.fill_with(SUMMARIES[i], &mut memo);
            RawRecord {
                question: Some(question),
                summary: Some(summary),
                ..RawRecord::default()
            }
        })
        .collect()
}

/// Plain-text records (`{text}`) from [`synth_corpus`].
pub fn synth_texts(config: &SynthConfig) -> Vec<RawRecord> {
    synth_corpus(config)
        .into_iter()
        .map(|t| RawRecord {
            text: Some(t),
            ..RawRecord::default()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{build_completion, build_from_records, TaskKind};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            target_bytes: 50_000,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_corpus(&small(1)), synth_corpus(&small(1)));
        assert_ne!(synth_corpus(&small(1)), synth_corpus(&small(2)));
    }

    #[test]
    fn reaches_target_size_with_no_slots_left() {
        let docs = synth_corpus(&small(3));
        let total: usize = docs.iter().map(|d| d.len() + 1).sum();
        assert!(total >= 50_000);
        assert!(docs.iter().all(|d| !d.contains('{') && !d.contains('}')));
    }

    #[test]
    fn mentions_gazetteer_terms() {
        let gaz = Gazetteer::bundled();
        let docs = synth_corpus(&small(4));
        let hits = docs
            .iter()
            .filter(|d| !crate::factuality::extract_entities(d, &gaz).is_empty())
            .count();
        assert_eq!(hits, docs.len());
    }

    #[test]
    fn feeds_every_task_builder() {
        assert!(!build_completion(&synth_corpus(&small(5))).is_empty());
        let qa = build_from_records(TaskKind::Qa, &synth_qa(5, 200)).unwrap();
        assert!(qa.len() > 10);
        let sm = build_from_records(TaskKind::Summarization, &synth_summaries(5, 50)).unwrap();
        assert!(sm.len() > 10);
    }

    #[test]
    fn summaries_reuse_question_terms() {
        for r in synth_summaries(8, 20) {
            let (q, s) = (r.question.unwrap(), r.summary.unwrap());
            let gaz = Gazetteer::bundled();
            let in_q: Vec<String> = crate::factuality::extract_entities(&q, &gaz)
                .into_iter()
                .map(|e| e.canonical)
                .collect();
            for e in crate::factuality::extract_entities(&s, &gaz) {
                assert!(in_q.contains(&e.canonical), "{s} / {q}");
            }
        }
    }
}
