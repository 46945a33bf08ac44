use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phalanx::apf::{run_apf, ApfConfig};
use phalanx::data::{load_dataset, make_folds, write_dataset, BlockedDataset, Schema};
use phalanx::learner::{cv_probabilities, fit_logistic, fit_rows};
use phalanx::metrics::{apr_block, permutation_reference, MetricSpec};
use phalanx::synthetic::{planted_pairs, PlantedConfig};

fn dataset_strategy() -> impl Strategy<Value = BlockedDataset> {
    (2usize..12, 1usize..4).prop_flat_map(|(blocks, d)| {
        let rows = prop::collection::vec((0..blocks, prop::collection::vec(-1e6f64..1e6, d), any::<bool>()), 1..60);
        rows.prop_map(move |rows| {
            let ids = rows.iter().map(|r| format!("blk{}", r.0)).collect();
            let labels = rows.iter().map(|r| u8::from(r.2)).collect();
            let feats = rows.iter().flat_map(|r| r.1.clone()).collect();
            BlockedDataset::new(ids, None, Some(labels), feats, d).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn written_files_reload_bit_exactly(ds in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let mut schema = Schema::kdd_train();
        schema.require_positive_blocks = false;
        write_dataset(&ds, &path, &schema).unwrap();
        let back = load_dataset(&path, &schema).unwrap();
        prop_assert_eq!(back.labels(), ds.labels());
        let same = back.features().iter().zip(ds.features()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn folds_partition_blocks(ds in dataset_strategy(), v in 1usize..6, seed in any::<u64>()) {
        prop_assume!(v <= ds.n_blocks());
        let folds = make_folds(&ds, v, seed).unwrap();
        let keys: BTreeSet<&String> = ds.block_keys().iter().collect();
        let assigned: BTreeSet<&String> = folds.block_to_fold.keys().collect();
        prop_assert_eq!(keys, assigned);
        prop_assert!(folds.block_to_fold.values().all(|&f| f < v));
        let sizes = folds.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn folds_ignore_row_order(ds in dataset_strategy(), seed in any::<u64>(), shuffle in any::<u64>()) {
        let v = 2.min(ds.n_blocks());
        let mut order: Vec<usize> = (0..ds.n_cases()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let ids = order.iter().map(|&r| ds.block_key_of_row(r).to_string()).collect();
        let labels = order.iter().map(|&r| ds.labels().unwrap()[r]).collect();
        let feats = order.iter().flat_map(|&r| ds.row(r).to_vec()).collect();
        let shuffled = BlockedDataset::new(ids, None, Some(labels), feats, ds.n_vars()).unwrap();
        prop_assert_eq!(
            make_folds(&ds, v, seed).unwrap().block_to_fold,
            make_folds(&shuffled, v, seed).unwrap().block_to_fold
        );
    }

    /// Tie-free scores: mean over positives of (position among positives) / rank.
    #[test]
    fn apr_matches_definition(labels in prop::collection::vec(any::<bool>(), 1..80), seed in any::<u64>()) {
        prop_assume!(labels.iter().any(|&y| y));
        let y: Vec<u8> = labels.iter().map(|&b| u8::from(b)).collect();
        let mut scores: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
        scores.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut ranked: Vec<usize> = (0..y.len()).collect();
        ranked.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let mut k = 0.0;
        let mut total = 0.0;
        for (pos, &i) in ranked.iter().enumerate() {
            if y[i] == 1 {
                k += 1.0;
                total += k / (pos + 1) as f64;
            }
        }
        let want = total / k;
        prop_assert!((apr_block(&y, &scores).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn reference_is_bit_identical_for_one_seed() {
    let ds = planted_pairs(&PlantedConfig::small(), 3);
    let a = permutation_reference(&ds, &MetricSpec::apr(), 300, 17).unwrap();
    let b = permutation_reference(&ds, &MetricSpec::apr(), 300, 17).unwrap();
    let c = permutation_reference(&ds, &MetricSpec::apr(), 300, 18).unwrap();
    assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a.samples, c.samples);
}

#[test]
fn probabilities_survive_affine_rescaling() {
    let ds = planted_pairs(&PlantedConfig::small(), 4);
    let vars = [0, 1, 4];
    let base = fit_logistic(&ds, &vars, 0.0).unwrap();
    let mut scale = vec![1.0; ds.n_vars()];
    scale[1] = 250.0;
    scale[4] = -0.01;
    let scaled = ds.scaled(&scale);
    let refit = fit_logistic(&scaled, &vars, 0.0).unwrap();
    for r in 0..ds.n_cases() {
        let gap = (base.probability(ds.row(r)) - refit.probability(scaled.row(r))).abs();
        assert!(gap < 1e-6, "row {r}: {gap}");
    }
}

#[test]
fn cv_never_trains_on_own_block() {
    let ds = planted_pairs(&PlantedConfig::small(), 5);
    let folds = make_folds(&ds, 4, 5).unwrap();
    let vars = [0, 1];
    let cv = cv_probabilities(&ds, &vars, &folds, 1e-6).unwrap();
    let fold_of = folds.block_folds(&ds).unwrap();
    for f in 0..4 {
        let train: Vec<usize> = (0..ds.n_cases()).filter(|&r| fold_of[ds.block_of_row()[r]] != f).collect();
        let model = fit_rows(&ds, &vars, &train, 1e-6).unwrap();
        for r in (0..ds.n_cases()).filter(|&r| fold_of[ds.block_of_row()[r]] == f) {
            assert_eq!(cv.values()[r], model.probability(ds.row(r)));
        }
    }
}

#[test]
fn apf_result_is_well_formed() {
    let ds = planted_pairs(&PlantedConfig::small(), 7);
    let config = ApfConfig {
        folds: 4,
        n_perm: 200,
        seed: 7,
        ..ApfConfig::default()
    };
    for metric in [MetricSpec::apr(), MetricSpec::rkl()] {
        let r = run_apf(&ds, &metric, &config).unwrap();
        let c = r.counts();
        assert!(1 <= c.finals && c.finals <= c.candidates && c.candidates <= c.survivors && c.survivors <= c.total);
        let mut seen = BTreeSet::new();
        for p in &r.final_phase3 {
            assert!(p.variables.windows(2).all(|w| w[0] < w[1]));
            for &v in &p.variables {
                assert!(r.survivors_phase1.contains(&v));
                assert!(seen.insert(v), "variable {v} in two phalanxes");
            }
            assert!(r.candidates_phase2.iter().any(|q| q.variables == p.variables));
        }
        // The best candidate always survives phase 3.
        let best = r
            .candidates_phase2
            .iter()
            .max_by(|a, b| {
                let o = a.cv_score.total_cmp(&b.cv_score);
                if metric.maximize() { o } else { o.reverse() }
            })
            .unwrap();
        assert!(r.final_phase3.iter().any(|p| p.cv_score == best.cv_score));

        let again = run_apf(&ds, &metric, &config).unwrap();
        assert_eq!(again.final_phase3, r.final_phase3);
        assert_eq!(format!("{:?}", again.trace), format!("{:?}", r.trace));
    }
}

#[test]
fn pure_noise_keeps_a_single_variable_at_least() {
    let ds = planted_pairs(&PlantedConfig::small(), 8);
    let mut labels = ds.labels().unwrap().to_vec();
    // Permute labels within blocks: no feature carries signal any more.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for rows in ds.block_rows() {
        let mut ys: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
        ys.shuffle(&mut rng);
        for (&r, y) in rows.iter().zip(ys) {
            labels[r] = y;
        }
    }
    let noise = ds.with_labels(labels).unwrap();
    let config = ApfConfig {
        folds: 4,
        n_perm: 200,
        seed: 8,
        ..ApfConfig::default()
    };
    let r = run_apf(&noise, &MetricSpec::apr(), &config).unwrap();
    assert!(!r.final_phase3.is_empty());
    if r.degenerate {
        assert_eq!(r.survivors_phase1.len(), 1);
        assert_eq!(r.final_phase3.len(), 1);
    }
}
