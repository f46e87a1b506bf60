use proptest::prelude::*;

use factmark::expedit::{exp_detect, AlignParams, ExpKey};
use factmark::fws::{friedman_nemenyi, fws, AspectScores, FwsConfig, RatingMatrix};
use factmark::tasks::{build_completion, build_qa, build_summarization, select, Selection};
use factmark::textmodel::{shannon_entropy, NgramModel, ProbDist, TrainConfig};
use factmark::wmcore::WatermarkKey;

fn weights(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, n).prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-6)
}

fn aspect() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_ignores_order(w in weights(2..20), seed in any::<u64>()) {
        let d = ProbDist::from_weights(w).unwrap();
        let mut p = d.probs().to_vec();
        let mut rng = factmark::wmcore::SplitMix64::new(seed);
        for i in (1..p.len()).rev() {
            p.swap(i, rng.next_below(i as u64 + 1) as usize);
        }
        prop_assert!((shannon_entropy(&p) - d.entropy()).abs() < 1e-12);
    }

    #[test]
    fn fws_is_monotone_and_linear(c in aspect(), r in aspect(), f in aspect(), bump in 0.0f64..0.5, a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let cfg = FwsConfig::new(a, b).unwrap();
        let s = AspectScores::new(c, r, f).unwrap();
        let base = fws(&s, &cfg);
        let up = |x: f64| (x + bump).min(1.0);
        prop_assert!(fws(&AspectScores::new(up(c), r, f).unwrap(), &cfg) >= base);
        prop_assert!(fws(&AspectScores::new(c, up(r), f).unwrap(), &cfg) >= base);
        prop_assert!(fws(&AspectScores::new(c, r, up(f)).unwrap(), &cfg) >= base);
        // Linear: the midpoint of two score vectors maps to the midpoint of their FWS.
        let t = AspectScores::new(1.0 - c, 1.0 - r, 1.0 - f).unwrap();
        let mid = AspectScores::new(0.5, 0.5, 0.5).unwrap();
        prop_assert!((fws(&mid, &cfg) - (base + fws(&t, &cfg)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn friedman_p_in_unit_interval(rows in prop::collection::vec(prop::collection::vec(0u8..5, 3), 4..20)) {
        let m = RatingMatrix::complete(rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect());
        let out = friedman_nemenyi(&m).unwrap();
        prop_assert!(out.friedman_p > 0.0 && out.friedman_p <= 1.0);
        for p in &out.pairwise {
            prop_assert!(p.p > 0.0 && p.p <= 1.0);
        }
    }

    #[test]
    fn task_builders_are_deterministic_and_order_preserving(
        texts in prop::collection::vec(prop::collection::vec("[a-e]{1,3}", 225..260), 1..5),
        seed in any::<u64>(),
    ) {
        let docs: Vec<String> = texts.iter().map(|w| w.join(" ")).collect();
        let a = build_completion(&docs);
        prop_assert_eq!(&a, &build_completion(&docs));
        // Items follow their source documents.
        let order: Vec<usize> = a
            .iter()
            .map(|t| docs.iter().position(|d| d.contains(&t.reference)).unwrap())
            .collect();
        prop_assert!(order.windows(2).all(|w| w[0] <= w[1]));
        let picked = select(a.clone(), 2, Selection::Shuffled(seed));
        let pos: Vec<usize> = picked.iter().map(|p| a.iter().position(|t| t.id == p.id).unwrap()).collect();
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exp_p_values_lie_in_unit_interval(y in prop::collection::vec(0u32..30, 12..30), key in any::<u64>()) {
        let k = ExpKey::new(WatermarkKey(key), 16, 30).unwrap();
        let params = AlignParams { num_permutations: 19, ..AlignParams::default() };
        let s = exp_detect(&y, &k, &params).unwrap();
        prop_assert!(s.statistic > 0.0 && s.statistic <= 1.0);
    }

    #[test]
    fn training_is_bit_identical(
        docs in prop::collection::vec(prop::collection::vec("[a-f]{1,2}", 3..15), 1..8),
        order in 1usize..4,
    ) {
        let docs: Vec<String> = docs.iter().map(|w| w.join(" ")).collect();
        let cfg = TrainConfig { order, ..TrainConfig::default() };
        let a = NgramModel::train(&docs, &cfg).unwrap();
        let b = NgramModel::train(&docs, &cfg).unwrap();
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}

#[test]
fn qa_and_summary_builders_repeat() {
    let qa = [("what are the most common side effects of this drug?", "nausea and mild headache")];
    assert_eq!(build_qa(&qa), build_qa(&qa));
    let sm = [(
        "my father has had a persistent cough for three weeks and now reports chest pain at night",
        "what causes a persistent cough with chest pain at night",
    )];
    let items = build_summarization(&sm);
    assert_eq!(items.len(), 1);
    assert_eq!(items, build_summarization(&sm));
}
