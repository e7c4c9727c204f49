//! Preprocessing behavior: hot-deck, LOF against a brute-force oracle,
//! consistency fixes, discretization, Breiman replacement, and pipeline
//! idempotence/replay.

mod common;

use phsf_core::preprocess::{
    apply_consistency_fixes, apply_report, breiman_replace, default_fix_rules,
    discretize_distance, hot_deck_impute, lof_outliers, run_pipeline, DiscretizeMode, ImputeField,
    LofOptions, NumericField, PreprocessOptions,
};
use phsf_core::records::{AdmissionRecord, DistanceLevel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn base(id: &str, patient: &str) -> AdmissionRecord {
    common::record(id, patient, "2011-10-02 08:30", "2011-10-06 14:00")
}

#[test]
fn hot_deck_identity_without_missing() {
    let mut records: Vec<AdmissionRecord> = (0..5).map(|i| base(&format!("r{i}"), "p")).collect();
    let before = records.clone();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let entries = hot_deck_impute(&mut records, ImputeField::CanScore, &mut rng).unwrap();
    assert!(entries.is_empty());
    assert_eq!(records, before);
}

#[test]
fn hot_deck_single_donor_is_forced() {
    let mut donor = base("donor", "p1");
    donor.covariates.can_score = Some(88);
    let mut hole = base("hole", "p2");
    hole.covariates.can_score = None;
    let mut records = vec![donor, hole];
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let entries = hot_deck_impute(&mut records, ImputeField::CanScore, &mut rng).unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(records[1].covariates.can_score, Some(88));
    assert_eq!(entries[0].donor_id.as_deref(), Some("donor"));
}

#[test]
fn hot_deck_preserves_marginal_mean_under_mar() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let mut records: Vec<AdmissionRecord> = (0..800)
        .map(|i| {
            let mut r = base(&format!("r{i}"), &format!("p{i}"));
            r.covariates.income = Some(20_000.0 + rng.random::<f64>() * 30_000.0);
            r
        })
        .collect();
    let complete_mean: f64 = records
        .iter()
        .map(|r| r.covariates.income.unwrap())
        .sum::<f64>()
        / records.len() as f64;
    // Knock out 20% at random.
    for r in records.iter_mut() {
        if rng.random::<f64>() < 0.2 {
            r.covariates.income = None;
        }
    }
    let entries = hot_deck_impute(&mut records, ImputeField::Income, &mut rng).unwrap();
    assert!(!entries.is_empty());
    let post_mean: f64 = records
        .iter()
        .map(|r| r.covariates.income.unwrap())
        .sum::<f64>()
        / records.len() as f64;
    assert!(
        (post_mean - complete_mean).abs() / complete_mean < 0.1,
        "post-imputation mean {post_mean} vs complete {complete_mean}"
    );
}

/// Straight-line transcription of the LOF definition, used as the oracle on
/// tiny inputs: k-distance, reachability distance, lrd, then the ratio.
fn lof_bruteforce(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let d = |a: usize, b: usize| -> f64 {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut kdist = vec![0.0; n];
    let mut neigh: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..n {
        let mut ds: Vec<(f64, usize)> = (0..n).filter(|&o| o != p).map(|o| (d(p, o), o)).collect();
        ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        kdist[p] = ds[k - 1].0;
        neigh[p] = ds
            .iter()
            .take_while(|(dist, _)| *dist <= kdist[p])
            .map(|&(_, o)| o)
            .collect();
    }
    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let mean: f64 = neigh[p]
                .iter()
                .map(|&o| d(p, o).max(kdist[o]))
                .sum::<f64>()
                / neigh[p].len() as f64;
            1.0 / (mean + 1e-12)
        })
        .collect();
    (0..n)
        .map(|p| neigh[p].iter().map(|&o| lrd[o]).sum::<f64>() / (neigh[p].len() as f64 * lrd[p]))
        .collect()
}

#[test]
fn far_point_has_max_lof_and_is_flagged() {
    // Uniform cluster on ages 60..75, one record far away in age and charge.
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut records: Vec<AdmissionRecord> = (0..19)
        .map(|i| {
            let mut r = base(&format!("r{i}"), &format!("p{i}"));
            r.covariates.age = 60 + (rng.random::<f64>() * 15.0) as u32;
            r.charge = 9_000.0 + rng.random::<f64>() * 2_000.0;
            r
        })
        .collect();
    // Far in both coordinates, but not so extreme that standardizing
    // collapses the cluster onto the quantized age axis.
    let mut far = base("far", "pfar");
    far.covariates.age = 99;
    far.charge = 40_000.0;
    records.push(far);

    let options = LofOptions {
        k_neighbors: 3,
        threshold: 1.5,
        features: vec![NumericField::Age, NumericField::Charge],
    };
    let flagged = lof_outliers(&records, &options).unwrap();
    assert!(flagged.iter().any(|f| f.record_id == "far"));

    // Oracle comparison on the standardized feature matrix.
    let raw: Vec<Vec<f64>> = records
        .iter()
        .map(|r| vec![f64::from(r.covariates.age), r.charge])
        .collect();
    let n = raw.len() as f64;
    let mut mean = [0.0; 2];
    for v in &raw {
        mean[0] += v[0] / n;
        mean[1] += v[1] / n;
    }
    let mut std = [0.0; 2];
    for v in &raw {
        std[0] += (v[0] - mean[0]).powi(2) / n;
        std[1] += (v[1] - mean[1]).powi(2) / n;
    }
    let std = [std[0].sqrt(), std[1].sqrt()];
    let standardized: Vec<Vec<f64>> = raw
        .iter()
        .map(|v| vec![(v[0] - mean[0]) / std[0], (v[1] - mean[1]) / std[1]])
        .collect();
    let scores = lof_bruteforce(&standardized, 3);
    let far_idx = records.len() - 1;
    let max_idx = (0..scores.len())
        .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
        .unwrap();
    assert_eq!(max_idx, far_idx, "oracle says the far point has max LOF");
    let far_flagged = flagged.iter().find(|f| f.record_id == "far").unwrap();
    assert!(
        (far_flagged.lof_score - scores[far_idx]).abs() < 1e-9,
        "implementation {} vs oracle {}",
        far_flagged.lof_score,
        scores[far_idx]
    );
}

#[test]
fn identical_points_are_not_outliers() {
    let records: Vec<AdmissionRecord> =
        (0..12).map(|i| base(&format!("r{i}"), &format!("p{i}"))).collect();
    let options = LofOptions {
        k_neighbors: 3,
        threshold: 1.5,
        ..LofOptions::default()
    };
    let flagged = lof_outliers(&records, &options).unwrap();
    assert!(flagged.is_empty());
}

#[test]
fn infinite_threshold_flags_nothing() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let records: Vec<AdmissionRecord> = (0..30)
        .map(|i| {
            let mut r = base(&format!("r{i}"), &format!("p{i}"));
            r.covariates.age = 50 + (rng.random::<f64>() * 40.0) as u32;
            r
        })
        .collect();
    let options = LofOptions {
        k_neighbors: 5,
        threshold: f64::INFINITY,
        ..LofOptions::default()
    };
    assert!(lof_outliers(&records, &options).unwrap().is_empty());
}

#[test]
fn too_few_records_for_lof_is_an_error() {
    let records: Vec<AdmissionRecord> =
        (0..4).map(|i| base(&format!("r{i}"), &format!("p{i}"))).collect();
    let options = LofOptions {
        k_neighbors: 5,
        ..LofOptions::default()
    };
    assert!(lof_outliers(&records, &options).is_err());
}

#[test]
fn pow_implies_veteran_fix() {
    let mut r = base("r1", "p1");
    r.covariates.pow = true;
    r.covariates.veteran = false;
    let mut records = vec![r, base("r2", "p2")];
    let entries = apply_consistency_fixes(&mut records, &default_fix_rules()).unwrap();
    assert_eq!(entries.len(), 1);
    assert!(records[0].covariates.veteran);
    assert_eq!(entries[0].rule, "pow_implies_veteran");
    // No-match case leaves the second record alone.
    assert!(!records[1].covariates.pow);
}

#[test]
fn fix_rule_match_count_is_exact() {
    let mut records: Vec<AdmissionRecord> = (0..10)
        .map(|i| {
            let mut r = base(&format!("r{i}"), &format!("p{i}"));
            if i % 3 == 0 {
                // 0, 3, 6, 9 → but flip veteran only for 0, 3, 6.
                r.covariates.pow = true;
                r.covariates.veteran = i == 9;
            }
            r
        })
        .collect();
    let entries = apply_consistency_fixes(&mut records, &default_fix_rules()).unwrap();
    assert_eq!(entries.len(), 3);
}

#[test]
fn contradictory_rules_are_rejected() {
    use phsf_core::preprocess::{BoolField, FixRule};
    let rules = vec![
        FixRule {
            name: "a".into(),
            when: vec![(BoolField::Pow, true)],
            set: vec![(BoolField::Veteran, true)],
        },
        FixRule {
            name: "b".into(),
            when: vec![(BoolField::Pow, true)],
            set: vec![(BoolField::Veteran, false)],
        },
    ];
    let mut records = vec![base("r1", "p1")];
    assert!(apply_consistency_fixes(&mut records, &rules).is_err());
}

#[test]
fn distance_levels_follow_published_intervals() {
    let mut records: Vec<AdmissionRecord> = [10.0, 25.0, 40.0, 50.0, 60.0]
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut r = base(&format!("r{i}"), &format!("p{i}"));
            r.covariates.distance_miles = Some(d);
            r
        })
        .collect();
    let entry = discretize_distance(&mut records, DiscretizeMode::FixedThresholds).unwrap();
    assert_eq!(entry.thresholds, (25.0, 50.0));
    let levels: Vec<DistanceLevel> = records
        .iter()
        .map(|r| r.covariates.distance_level.unwrap())
        .collect();
    assert_eq!(
        levels,
        vec![
            DistanceLevel::Near,
            DistanceLevel::Middle, // exactly 25 is middle
            DistanceLevel::Middle,
            DistanceLevel::Middle, // exactly 50 is middle
            DistanceLevel::Far,
        ]
    );
}

#[test]
fn kmeans_mode_reports_learned_boundaries() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let mut records: Vec<AdmissionRecord> = (0..300)
        .map(|i| {
            let mut r = base(&format!("r{i}"), &format!("p{i}"));
            let d = match i % 3 {
                0 => 5.0 + rng.random::<f64>() * 10.0,
                1 => 35.0 + rng.random::<f64>() * 10.0,
                _ => 80.0 + rng.random::<f64>() * 20.0,
            };
            r.covariates.distance_miles = Some(d);
            r
        })
        .collect();
    let entry = discretize_distance(&mut records, DiscretizeMode::KMeans).unwrap();
    let (t1, t2) = entry.thresholds;
    assert!(t1 > 15.0 && t1 < 35.0, "near/middle boundary {t1}");
    assert!(t2 > 45.0 && t2 < 80.0, "middle/far boundary {t2}");
    // Assignment must respect the learned thresholds.
    for r in &records {
        let d = r.covariates.distance_miles.unwrap();
        let level = r.covariates.distance_level.unwrap();
        let expected = if d < t1 {
            DistanceLevel::Near
        } else if d <= t2 {
            DistanceLevel::Middle
        } else {
            DistanceLevel::Far
        };
        assert_eq!(level, expected);
    }
}

#[test]
fn breiman_median_and_mode() {
    let mut records: Vec<AdmissionRecord> = (0..4)
        .map(|i| base(&format!("r{i}"), &format!("p{i}")))
        .collect();
    records[0].covariates.charlson_index = Some(2.0);
    records[1].covariates.charlson_index = Some(4.0);
    records[2].covariates.charlson_index = Some(9.0);
    records[3].covariates.charlson_index = None;
    records[0].covariates.distance_level = Some(DistanceLevel::Near);
    records[1].covariates.distance_level = Some(DistanceLevel::Near);
    records[2].covariates.distance_level = Some(DistanceLevel::Far);
    records[3].covariates.distance_level = None;
    let entries = breiman_replace(&mut records).unwrap();
    assert_eq!(records[3].covariates.charlson_index, Some(4.0));
    assert_eq!(records[3].covariates.distance_level, Some(DistanceLevel::Near));
    assert!(entries.iter().any(|e| e.record_id == "r3"));
}

#[test]
fn breiman_all_missing_field_errors() {
    let mut records: Vec<AdmissionRecord> = (0..3)
        .map(|i| {
            let mut r = base(&format!("r{i}"), &format!("p{i}"));
            r.covariates.charlson_index = None;
            r
        })
        .collect();
    let err = breiman_replace(&mut records).unwrap_err();
    assert!(err.to_string().contains("charlson_index"));
}

fn pipeline_fixture(seed: u64) -> Vec<AdmissionRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut records: Vec<AdmissionRecord> = (0..60)
        .map(|i| {
            let mut r = base(&format!("r{i}"), &format!("p{i}"));
            r.covariates.age = 55 + (rng.random::<f64>() * 30.0) as u32;
            r.charge = 8_000.0 + rng.random::<f64>() * 4_000.0;
            r.covariates.distance_miles = if rng.random::<f64>() < 0.1 {
                None
            } else {
                Some(rng.random::<f64>() * 80.0)
            };
            if rng.random::<f64>() < 0.15 {
                r.covariates.income = None;
            }
            if i == 7 {
                r.covariates.pow = true;
                r.covariates.veteran = false;
            }
            r
        })
        .collect();
    // One far outlier.
    records[30].covariates.age = 99;
    records[30].charge = 3_500_000.0;
    records
}

#[test]
fn pipeline_is_idempotent_and_counts_add_up() {
    let records = pipeline_fixture(7);
    let n_input = records.len();
    let options = PreprocessOptions {
        lof: LofOptions {
            k_neighbors: 5,
            threshold: 2.0,
            features: vec![NumericField::Age, NumericField::Charge],
        },
        ..PreprocessOptions::default()
    };
    let (once, report) = run_pipeline(records, &options).unwrap();
    assert_eq!(n_input, once.len() + report.outliers_removed.len());
    assert!(!report.outliers_removed.is_empty());

    let (twice, report2) = run_pipeline(once.clone(), &options).unwrap();
    assert_eq!(once, twice, "second pipeline run changed the data");
    assert!(report2.imputed.is_empty());
    assert!(report2.outliers_removed.is_empty());
}

#[test]
fn report_replay_reconstructs_the_output() {
    let records = pipeline_fixture(8);
    let options = PreprocessOptions {
        lof: LofOptions {
            k_neighbors: 5,
            threshold: 2.0,
            features: vec![NumericField::Age, NumericField::Charge],
        },
        ..PreprocessOptions::default()
    };
    let (processed, report) = run_pipeline(records.clone(), &options).unwrap();
    let replayed = apply_report(records, &report);
    assert_eq!(processed, replayed);
}
