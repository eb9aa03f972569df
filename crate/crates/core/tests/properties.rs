use gpf_core::data::{
    apply_shift, gen_classification, gen_retrieval_groups, parse_embeddings, write_embeddings,
    Dataset, ShiftSpec,
};
use gpf_core::metrics::{aggregate_runs, binary_ece};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_files_round_trip(groups in 1usize..6, dim in 2usize..6, k in 1usize..4, seed in 0u64..1000) {
        let data = Dataset::from_groups(&gen_retrieval_groups(groups, dim, k, 1.5, seed).unwrap()).unwrap();
        let back = parse_embeddings(&write_embeddings(&data)).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn rotation_and_translation_preserve_distances(seed in 0u64..1000, t in 0.0f64..10.0) {
        let data = gen_classification(12, 4, 2.0, seed).unwrap();
        let spec = ShiftSpec { rotation_seed: Some(seed), ..ShiftSpec::uniform_translation(4, t) };
        let moved = apply_shift(&data, &spec, seed).unwrap();
        for i in 0..data.len() {
            for j in 0..i {
                let before = (&data.examples[i].features - &data.examples[j].features).norm();
                let after = (&moved.examples[i].features - &moved.examples[j].features).norm();
                prop_assert!((before - after).abs() < 1e-9);
            }
            prop_assert_eq!(moved.examples[i].label, data.examples[i].label);
        }
    }

    #[test]
    fn ece_of_saturated_correct_predictions_is_zero(labels in prop::collection::vec(0u8..2, 1..50)) {
        let probs: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
        prop_assert!(binary_ece(&probs, &labels, 10).unwrap().ece.abs() < 1e-12);
    }

    #[test]
    fn aggregate_mean_is_bounded(values in prop::collection::vec(-5.0f64..5.0, 1..10)) {
        let s = aggregate_runs(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean >= lo - 1e-12 && s.mean <= hi + 1e-12);
        prop_assert_eq!(s.stderr.is_some(), values.len() >= 2);
        prop_assert_eq!(s.runs, values.len());
    }
}
