//! End-to-end library use: synthetic corpus → model → tasks → watermarked
//! generation → detection, plus on-disk persistence.

use factmark::dipmark::{dip_detect, DipHook, DipParams};
use factmark::greenlist::{kgw_detect, KgwHook, KgwParams, DEFAULT_Z_THRESHOLD};
use factmark::judger::{judge_batch, BatchOptions, JudgePair, JudgeCache, MockTransport};
use factmark::synth::{synth_corpus, synth_qa, SynthConfig};
use factmark::taskeval::{auroc, Direction, ScorePair};
use factmark::tasks::{build_from_records, TaskKind};
use factmark::textmodel::{LanguageModel, NgramModel, TrainConfig};
use factmark::wmcore::{generate, Identity, WatermarkKey};

fn small_model() -> NgramModel {
    let docs = synth_corpus(&SynthConfig { target_bytes: 150_000, ..SynthConfig::default() });
    NgramModel::train(&docs, &TrainConfig::default()).unwrap()
}

#[test]
fn watermarks_survive_the_full_library_path() {
    let model = small_model();
    let v = model.vocab_size();
    let key = WatermarkKey(2024);
    let tasks = build_from_records(TaskKind::Qa, &synth_qa(3, 400)).unwrap();
    assert!(tasks.len() >= 20);

    let (mut kgw_pos, mut dip_pos, mut kgw_neg, mut dip_neg) = (vec![], vec![], vec![], vec![]);
    for (i, t) in tasks.iter().take(20).enumerate() {
        let prompt = model.vocab().tokenize(&t.prompt).into_inner();
        let mut kh = KgwHook::new(key, v, KgwParams::default()).unwrap();
        let mut dh = DipHook::new(key, v, DipParams::default()).unwrap();
        let k = generate(&model, &prompt, 120, &mut kh, i as u64);
        let d = generate(&model, &prompt, 120, &mut dh, i as u64);
        let n = generate(&model, &prompt, 120, &mut Identity, i as u64 + 1000);
        let z = |ids: &[u32]| kgw_detect(ids, key, 0.5, v, DEFAULT_Z_THRESHOLD).unwrap().statistic;
        let dz = |ids: &[u32]| dip_detect(ids, key, 0.5, v, DEFAULT_Z_THRESHOLD).unwrap().statistic;
        kgw_pos.push(z(&k.scored_stream()));
        kgw_neg.push(z(&n.scored_stream()));
        dip_pos.push(dz(&d.scored_stream()));
        dip_neg.push(dz(&n.scored_stream()));
    }
    let kgw = auroc(&ScorePair::new(kgw_pos, kgw_neg, Direction::HigherIsPositive)).unwrap();
    let dip = auroc(&ScorePair::new(dip_pos, dip_neg, Direction::HigherIsPositive)).unwrap();
    assert!(kgw > 0.95, "kgw auroc {kgw}");
    assert!(dip > 0.9, "dipmark auroc {dip}");
}

#[test]
fn saved_model_scores_identically() {
    let model = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = NgramModel::load(&path).unwrap();
    let seq = model.vocab().tokenize("the patient reported mild fever after the new dose").into_inner();
    assert_eq!(model.perplexity(&seq).unwrap(), back.perplexity(&seq).unwrap());
    assert_eq!(model, back);
}

#[test]
fn judge_cache_file_resumes_without_calls() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let requests: Vec<_> = (0..6)
        .map(|i| {
            JudgePair {
                id: format!("item-{i}"),
                task: TaskKind::Qa,
                prompt: format!("question {i}?"),
                watermarked: format!("answer {i} with a watermark"),
                unwatermarked: format!("answer {i} without one"),
            }
            .to_request(9)
            .0
        })
        .collect();
    let opts = BatchOptions::default();
    let first = {
        let cache = JudgeCache::open(&path).unwrap();
        let mock = MockTransport::hashed();
        let out = judge_batch(&requests, &mock, &cache, &opts);
        assert_eq!(mock.calls(), 6);
        out
    };
    let cache = JudgeCache::open(&path).unwrap();
    assert_eq!(cache.len(), 6);
    let mock = MockTransport::hashed();
    let again = judge_batch(&requests, &mock, &cache, &opts);
    assert_eq!(mock.calls(), 0);
    for (a, b) in first.iter().zip(&again) {
        assert_eq!(a.verdict, b.verdict);
        assert!(b.from_cache);
    }
}
