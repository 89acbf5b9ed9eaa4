mod common;

use std::collections::BTreeSet;

use common::{auroc_pairs, close, desk_model_kv, desk_single_kv, features_by_hand, tiny_generator};
use hipal::harness::{
    auroc, grouped_cv_split, offset_evaluation, operating_point, risk_map, run_cv, train_recipe, CvConfig, FeatureConfig,
    FeatureExtractor, Recipe, RunConfig, Target, Trained,
};
use hipal::hipal::TrainConfig;
use hipal::logstore::MonthRecord;
use hipal::synthgen::{generate_dataset, vocabulary, GeneratorConfig};
use proptest::prelude::*;

fn quick_run(epochs: usize) -> RunConfig {
    RunConfig {
        model: desk_model_kv(),
        single: desk_single_kv(),
        train: TrainConfig {
            epochs,
            batch_size: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn auroc_matches_pair_counting(
        data in prop::collection::vec((any::<bool>(), 0u8..10), 2..50),
    ) {
        let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
        let scores: Vec<f64> = data.iter().map(|d| d.1 as f64 / 3.0).collect();
        match (auroc(&labels, &scores), auroc_pairs(&labels, &scores)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn auroc_ignores_monotone_rescaling(
        data in prop::collection::vec((any::<bool>(), -5.0f64..5.0), 2..40),
    ) {
        let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
        let scores: Vec<f64> = data.iter().map(|d| d.1).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        prop_assert_eq!(auroc(&labels, &scores), auroc(&labels, &squashed));
    }

    #[test]
    fn splits_never_share_participants(
        n in 6usize..20,
        folds in 2usize..6,
        rounds in 1usize..4,
        seed in 0u64..1000,
    ) {
        let gen = GeneratorConfig {
            n_participants: n,
            months_per_participant: 1,
            mean_shifts_per_month: 2.0,
            max_shifts_per_month: 3,
            mean_events_per_shift: 3.0,
            max_events_per_shift: 4,
            seed,
            ..Default::default()
        };
        let (ds, _) = generate_dataset(&gen).unwrap();
        let cv = CvConfig { folds, rounds, seed, ..Default::default() };
        let labeled: BTreeSet<String> = ds.labeled().map(|m| m.participant_id.clone()).collect();
        prop_assume!(labeled.len() >= folds);
        let splits = grouped_cv_split(&ds, &cv).unwrap();
        prop_assert_eq!(splits.len(), folds * rounds);
        for sp in &splits {
            let all: Vec<&String> = sp.train.iter().chain(&sp.val).chain(&sp.test).collect();
            let distinct: BTreeSet<&String> = all.iter().copied().collect();
            prop_assert_eq!(all.len(), distinct.len());
        }
        for r in 0..rounds {
            let mut tested: Vec<&String> = splits.iter().filter(|s| s.round == r).flat_map(|s| &s.test).collect();
            tested.sort();
            let n_tested = tested.len();
            tested.dedup();
            prop_assert_eq!(n_tested, tested.len());
            prop_assert_eq!(tested.into_iter().cloned().collect::<BTreeSet<_>>(), labeled.clone());
        }
    }
}

#[test]
fn features_agree_with_direct_recomputation() {
    let mut compared = 0;
    for seed in 0..6 {
        let gen = GeneratorConfig {
            n_participants: 10,
            months_per_participant: 2,
            mean_shifts_per_month: 5.0,
            mean_events_per_shift: 10.0,
            seed: 40 + seed,
            ..Default::default()
        };
        let (ds, _) = generate_dataset(&gen).unwrap();
        let fx = FeatureExtractor::new(&vocabulary(&gen), FeatureConfig::default()).unwrap();
        for m in &ds.months {
            let got = fx.extract(m).unwrap();
            assert_eq!(got.len(), fx.len());
            if got[fx.len() - 1] != 0.0 {
                continue;
            }
            compared += 1;
            let want = features_by_hand(m, &gen);
            assert_eq!(got[0], m.shifts.len() as f64);
            for (k, (a, b)) in got.iter().zip(&want).enumerate() {
                assert!(close(*a, *b, 1e-9), "{} {}: {a} vs {b}", m.participant_id, fx.names()[k]);
            }
        }
    }
    assert!(compared >= 100, "{compared}");
}

#[test]
fn operating_point_honours_its_target() {
    let labels = [true, true, true, true, false, false, false, false];
    let scores = [0.9, 0.8, 0.6, 0.3, 0.7, 0.4, 0.2, 0.1];
    let p = operating_point(&labels, &scores, Target::Sensitivity(0.75)).unwrap();
    assert_eq!((p.threshold, p.sensitivity, p.specificity), (0.6, 0.75, 0.75));
    let p = operating_point(&labels, &scores, Target::Specificity(1.0)).unwrap();
    assert_eq!((p.threshold, p.sensitivity, p.specificity), (0.8, 0.5, 1.0));
    let p = operating_point(&labels, &scores, Target::Sensitivity(1.0)).unwrap();
    assert_eq!((p.threshold, p.sensitivity), (0.3, 1.0));
    assert!(operating_point(&[true, true], &[0.1, 0.2], Target::Sensitivity(0.5)).is_err());
    assert!(operating_point(&labels, &scores, Target::Specificity(1.5)).is_err());
}

#[test]
fn recipes_round_trip_through_their_names() {
    for name in ["hipal-c", "hipal-f", "semi-hipal-r", "single-level-c", "baseline-features"] {
        let r: Recipe = name.parse().unwrap();
        assert_eq!(r.to_string(), name);
    }
    assert!("hipal-x".parse::<Recipe>().is_err());
    assert!("deep-c".parse::<Recipe>().is_err());
}

#[test]
fn baseline_features_find_no_signal_in_null_data() {
    let null = GeneratorConfig {
        signal_strength: 0.0,
        ..Default::default()
    };
    let (ds, _) = generate_dataset(&null).unwrap();
    let cv = CvConfig {
        rounds: 1,
        ..Default::default()
    };
    let report = run_cv(&ds, Recipe::BaselineFeatures, &cv, &RunConfig::default()).unwrap();
    let mean = report.auroc().unwrap().mean;
    assert!((mean - 0.5).abs() <= 0.1, "{mean}");
}

#[test]
fn metrics_report_lists_folds_then_summary_rows() {
    let (ds, _) = generate_dataset(&GeneratorConfig {
        n_participants: 12,
        months_per_participant: 2,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let cv = CvConfig {
        folds: 3,
        rounds: 1,
        ..Default::default()
    };
    let report = run_cv(&ds, Recipe::BaselineFeatures, &cv, &RunConfig::default()).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "recipe,round,fold,auroc,auprc,accuracy,epoch_seconds");
    assert_eq!(lines.len(), 1 + 3 + 2);
    for (f, line) in lines[1..4].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(&cells[..3], &["baseline-features", "0", &f.to_string()]);
        assert_eq!(cells[6], "");
    }
    assert!(lines[4].starts_with("baseline-features,mean,,"));
    assert!(lines[5].starts_with("baseline-features,std,,"));
}

fn trained_tiny() -> (hipal::logstore::Dataset, Trained) {
    let (ds, _) = generate_dataset(&GeneratorConfig {
        n_participants: 8,
        months_per_participant: 3,
        unlabeled_fraction: 0.0,
        mean_shifts_per_month: 6.0,
        max_shifts_per_month: 10,
        mean_events_per_shift: 8.0,
        max_events_per_shift: 16,
        tail_jitter_days: 3,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let cv = CvConfig {
        folds: 3,
        rounds: 1,
        ..Default::default()
    };
    let split = grouped_cv_split(&ds, &cv).unwrap().remove(0);
    let (model, _) = train_recipe(&ds, "hipal-c".parse().unwrap(), &split, &quick_run(2), 4).unwrap();
    (ds, model)
}

#[test]
fn offset_zero_is_the_standard_evaluation_and_offsets_nest() {
    let (ds, model) = trained_tiny();
    let months: Vec<&MonthRecord> = ds.months.iter().collect();
    let labeled: Vec<&MonthRecord> = ds.labeled().collect();
    let labels: Vec<bool> = labeled.iter().filter_map(|m| m.label).collect();
    let direct = auroc(&labels, &model.predict(&labeled).unwrap());
    let sweep = offset_evaluation(&months, &[0, 3, 5], |ms| model.predict(ms)).unwrap();
    assert_eq!(sweep[0], (0, direct));
    assert_eq!(sweep.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 3, 5]);

    let mut seen = Vec::new();
    offset_evaluation(&labeled, &[2, 5], |ms| {
        seen.push(ms.iter().map(|m| m.num_events()).collect::<Vec<_>>());
        model.predict(ms)
    })
    .unwrap();
    for (short, long) in seen[1].iter().zip(&seen[0]) {
        assert!(short <= long);
    }
}

#[test]
fn risk_maps_repeat_the_model_predictions() {
    let (ds, model) = trained_tiny();
    let Trained::Hipal(model) = model else { panic!("expected a hierarchical model") };
    let pid = ds.participants()[0].clone();
    let map = risk_map(&model, &ds, &pid).unwrap();
    let months: Vec<&MonthRecord> = ds.months_of(&pid).collect();
    let preds = model.predict_batch(&months).unwrap();
    assert_eq!(map.rows.len(), months.len());
    for ((row, m), p) in map.rows.iter().zip(&months).zip(&preds) {
        assert_eq!(row.month_index, m.month_index);
        assert_eq!(row.gamma, p.gamma);
        assert_eq!(row.alphas, p.daily_risks);
        assert_eq!(row.alphas.len(), m.shifts.len().min(model.cfg.max_shifts));
    }
    let grid = map.grid();
    for (cells, row) in grid.iter().zip(&map.rows) {
        let tail: Vec<f64> = cells[cells.len() - row.alphas.len()..].iter().map(|c| c.unwrap()).collect();
        assert_eq!(tail, row.alphas);
        assert!(cells[..cells.len() - row.alphas.len()].iter().all(Option::is_none));
    }
    assert!(risk_map(&model, &ds, "nobody").is_err());
}

#[test]
fn baseline_recipe_trains_on_tiny_data() {
    let (ds, _) = generate_dataset(&tiny_generator(6)).unwrap();
    let cv = CvConfig {
        folds: 2,
        rounds: 1,
        ..Default::default()
    };
    let split = grouped_cv_split(&ds, &cv).unwrap().remove(0);
    let (model, secs) = train_recipe(&ds, Recipe::BaselineFeatures, &split, &RunConfig::default(), 0).unwrap();
    assert!(secs.is_none());
    let months: Vec<&MonthRecord> = ds.months.iter().collect();
    let p = model.predict(&months).unwrap();
    assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
}
