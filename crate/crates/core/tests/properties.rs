use std::collections::BTreeMap;

use proptest::prelude::*;

use curator::curate::{aggregate_judgments, allocate, select_stratified, topk_indices, Judgment};
use curator::numerics::spearman;
use curator::quality_labels::{average_label, EvalReport};
use curator::selector::{format_hex_f64, parse_hex_f64, Architecture, SelectorKind, SelectorModel};

fn judgment() -> impl Strategy<Value = Judgment> {
    prop::sample::select(Judgment::ALL.to_vec())
}

proptest! {
    #[test]
    fn quotas_sum_to_alpha_and_stay_within_one(
        sizes in prop::collection::vec(1usize..2000, 1..16),
        frac in 0.0f64..=1.0,
    ) {
        let total: usize = sizes.iter().sum();
        let alpha = (frac * total as f64).floor() as usize;
        let q = allocate(&sizes, alpha).unwrap();
        prop_assert_eq!(q.iter().sum::<usize>(), alpha);
        for (qi, si) in q.iter().zip(&sizes) {
            prop_assert!(qi <= si);
            prop_assert!((*qi as f64 - alpha as f64 * *si as f64 / total as f64).abs() < 1.0);
        }
    }

    #[test]
    fn topk_returns_the_k_largest(scores in prop::collection::vec(-1e6f64..1e6, 1..60), k in 0usize..60) {
        let k = k.min(scores.len());
        let idx = topk_indices(&scores, k).unwrap();
        prop_assert_eq!(idx.len(), k);
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut picked: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        picked.sort_by(|a, b| b.total_cmp(a));
        prop_assert_eq!(picked, sorted[..k].to_vec());
    }

    #[test]
    fn stratified_selection_respects_quotas(
        items in prop::collection::vec((0usize..4, -5.0f64..5.0), 4..120),
        frac in 0.0f64..=1.0,
    ) {
        let ids: Vec<String> = (0..items.len()).map(|i| format!("i{i:04}")).collect();
        // The first four items seed every cluster so none is empty.
        let labels: Vec<usize> = items.iter().enumerate().map(|(i, t)| if i < 4 { i } else { t.0 }).collect();
        let scores: Vec<f64> = items.iter().map(|t| t.1).collect();
        let alpha = ((frac * items.len() as f64) as usize).max(1);
        let res = select_stratified(&ids, &labels, &scores, alpha).unwrap();
        prop_assert_eq!(res.selected.len(), alpha);
        for (c, picks) in res.per_cluster.iter().enumerate() {
            prop_assert_eq!(picks.len(), res.quotas[c]);
        }
        let mut sorted = res.selected.clone();
        sorted.sort();
        prop_assert_eq!(sorted, res.selected.clone());
    }

    #[test]
    fn judgment_aggregation_is_symmetric(a in judgment(), b in judgment()) {
        prop_assert_eq!(aggregate_judgments(a, b), aggregate_judgments(b, a));
    }

    #[test]
    fn average_label_ignores_benchmark_order(values in prop::collection::vec(0.0f64..100.0, 1..8), rot in 0usize..8) {
        let names: Vec<String> = (0..values.len()).map(|i| format!("bench{i}")).collect();
        let a: BTreeMap<String, f64> = names.iter().cloned().zip(values.iter().copied()).collect();
        let mut rotated = values.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        let b: BTreeMap<String, f64> = names.iter().cloned().zip(rotated.iter().copied()).collect();
        let la = average_label(&EvalReport { subset_id: 0, scores: a }).unwrap();
        let lb = average_label(&EvalReport { subset_id: 0, scores: b }).unwrap();
        prop_assert!((la - lb).abs() < 1e-12);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((la - mean).abs() < 1e-9);
    }

    #[test]
    fn hex_floats_round_trip(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        prop_assert_eq!(parse_hex_f64(&format_hex_f64(x)).unwrap().to_bits(), bits);
    }

    #[test]
    fn spearman_is_invariant_to_monotone_maps(v in prop::collection::vec(-3.0f64..3.0, 3..40)) {
        let w: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let base: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
        prop_assert!((spearman(&v, &base) - spearman(&w, &base)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn selector_ignores_item_order(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut model = SelectorModel::init(Architecture::new(SelectorKind::Attention, 6), seed).unwrap();
        // A fresh head is zero; nudge every weight so the output depends on the input.
        for (i, p) in model.params.iter_mut().enumerate() {
            *p += 0.1 * (i as f64 * 0.7).cos();
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
        let mut seq: Vec<Vec<f64>> = (0..7).map(|i| (0..6).map(|j| ((i * 6 + j) as f64 * 0.37).sin()).collect()).collect();
        let a = model.predict(&seq).unwrap();
        prop_assert!(a != model.predict(&seq[..3]).unwrap());
        seq.shuffle(&mut rng);
        prop_assert_eq!(a.to_bits(), model.predict(&seq).unwrap().to_bits());
    }
}
