//! Property tests for the pipeline's structural invariants.

use ndarray::Array2;
use proptest::prelude::*;

use shapca_core::consistency::{cosine_sim, pearson_corr};
use shapca_core::preprocess::normalize_max;
use shapca_core::spectra_io::{
    kfold_indices, split, KFoldMode, SpectraDataset, SpectralAxis, SplitMode, SplitSpec,
};

fn dataset(n_groups: usize, per_group: usize) -> SpectraDataset {
    let n = n_groups * per_group;
    let axis = SpectralAxis::new(vec![1.0, 2.0, 3.0], "").unwrap();
    SpectraDataset::new(
        axis,
        Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64),
        (0..n).map(|i| i % 2).collect(),
        Some((0..n).map(|i| format!("g{}", i / per_group)).collect()),
        vec!["a".into(), "b".into()],
        (0..n).map(|i| format!("s{i}")).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_every_sample(
        n_groups in 3usize..10,
        per_group in 1usize..5,
        fraction in 0.1f64..0.9,
        seed in 0u64..500,
        group_mode in any::<bool>(),
    ) {
        let ds = dataset(n_groups, per_group);
        let spec = SplitSpec {
            mode: if group_mode { SplitMode::GroupLevel } else { SplitMode::SampleLevelStratified },
            test_fraction: fraction,
            seed,
        };
        // stratified mode needs 2 samples per class
        if !group_mode {
            for class in 0..2 {
                if ds.labels.iter().filter(|&&l| l == class).count() < 2 {
                    return Ok(());
                }
            }
        }
        let (train, test) = split(&ds, &spec).unwrap();
        prop_assert_eq!(train.n_samples() + test.n_samples(), ds.n_samples());
        let mut ids: Vec<&String> = train.sample_ids.iter().chain(&test.sample_ids).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), ds.n_samples());
        if group_mode {
            for g in test.groups.as_ref().unwrap() {
                prop_assert!(!train.groups.as_ref().unwrap().contains(g));
            }
        }
    }

    #[test]
    fn kfold_test_sets_are_a_partition(
        n_groups in 4usize..9,
        per_group in 1usize..4,
        k in 2usize..4,
        seed in 0u64..200,
    ) {
        let ds = dataset(n_groups, per_group);
        let folds = kfold_indices(&ds, k, KFoldMode::GroupKFold, seed).unwrap();
        let mut seen = vec![0usize; ds.n_samples()];
        for (train, test) in &folds {
            prop_assert_eq!(train.len() + test.len(), ds.n_samples());
            for &i in test {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn normalize_max_is_scale_invariant(
        y in prop::collection::vec(0.01f64..10.0, 2..40),
        c in 0.001f64..1000.0,
    ) {
        let a = normalize_max(&y).unwrap();
        let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
        let b = normalize_max(&scaled).unwrap();
        for (x, z) in a.iter().zip(&b) {
            prop_assert!((x - z).abs() < 1e-9);
        }
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metric_bounds_and_symmetry(
        a in prop::collection::vec(-10.0f64..10.0, 3..20),
        b_seed in 0u64..1000,
    ) {
        let b: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, v)| v * ((b_seed + i as u64) % 7) as f64 - 3.0)
            .collect();
        if let Some(c) = cosine_sim(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - cosine_sim(&b, &a).unwrap()).abs() < 1e-12);
        }
        if let Some(r) = pearson_corr(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - pearson_corr(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}

/// Pair-mean consistency scores do not depend on the order models are
/// listed in.
#[test]
fn pairwise_means_are_fold_order_invariant() {
    use shapca_core::consistency::pairwise_scores;
    let vectors: Vec<Option<Vec<f64>>> = vec![
        Some(vec![1.0, 0.5, -0.25]),
        Some(vec![0.9, 0.6, -0.2]),
        Some(vec![-0.1, 0.7, 0.3]),
        Some(vec![0.4, 0.4, 0.4]),
    ];
    let mean = |scores: &[Option<f64>]| {
        let inc: Vec<f64> = scores.iter().filter_map(|s| *s).collect();
        inc.iter().sum::<f64>() / inc.len() as f64
    };
    let base = mean(&pairwise_scores(&vectors, cosine_sim));
    let mut permuted = vectors.clone();
    permuted.rotate_left(2);
    permuted.swap(0, 1);
    let after = mean(&pairwise_scores(&permuted, cosine_sim));
    assert!((base - after).abs() < 1e-12);
}
