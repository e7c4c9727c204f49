//! Dataset preprocessing: consistency fixes, outlier removal, imputation,
//! and distance discretization, in that order, plus the model-time Breiman
//! replacement fill. Every transformation lands in a report detailed enough
//! to replay it against the raw data.

use crate::error::{CoreError, Result};
use crate::records::{AdmissionRecord, Cohort, DistanceLevel, Sex};
use crate::seed::derive_seed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Covariates that may be missing and are imputable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeField {
    Income,
    DistanceMiles,
    CanScore,
    CharlsonIndex,
}

impl ImputeField {
    pub const ALL: [ImputeField; 4] = [
        ImputeField::Income,
        ImputeField::DistanceMiles,
        ImputeField::CanScore,
        ImputeField::CharlsonIndex,
    ];

    fn get(self, record: &AdmissionRecord) -> Option<f64> {
        let c = &record.covariates;
        match self {
            ImputeField::Income => c.income,
            ImputeField::DistanceMiles => c.distance_miles,
            ImputeField::CanScore => c.can_score.map(f64::from),
            ImputeField::CharlsonIndex => c.charlson_index,
        }
    }

    fn set(self, record: &mut AdmissionRecord, value: f64) {
        let c = &mut record.covariates;
        match self {
            ImputeField::Income => c.income = Some(value),
            ImputeField::DistanceMiles => c.distance_miles = Some(value),
            ImputeField::CanScore => c.can_score = Some(value.round().clamp(0.0, 99.0) as u8),
            ImputeField::CharlsonIndex => c.charlson_index = Some(value),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ImputeField::Income => "income",
            ImputeField::DistanceMiles => "distance_miles",
            ImputeField::CanScore => "can_score",
            ImputeField::CharlsonIndex => "charlson_index",
        }
    }
}

/// One imputation event (hot-deck donor copy or Breiman fill).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeEntry {
    pub record_id: String,
    pub field: ImputeField,
    pub value: f64,
    pub donor_id: Option<String>,
    pub method: String,
    /// Donor came from the global pool because the cell was empty.
    pub global_fallback: bool,
}

/// Boolean covariates addressable by consistency-fix rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoolField {
    AgentOrange,
    Pow,
    Radiation,
    Veteran,
}

impl BoolField {
    fn get(self, record: &AdmissionRecord) -> bool {
        let c = &record.covariates;
        match self {
            BoolField::AgentOrange => c.agent_orange,
            BoolField::Pow => c.pow,
            BoolField::Radiation => c.radiation,
            BoolField::Veteran => c.veteran,
        }
    }

    fn set(self, record: &mut AdmissionRecord, value: bool) {
        let c = &mut record.covariates;
        match self {
            BoolField::AgentOrange => c.agent_orange = value,
            BoolField::Pow => c.pow = value,
            BoolField::Radiation => c.radiation = value,
            BoolField::Veteran => c.veteran = value,
        }
    }
}

/// `(condition, correction)` pair applied record by record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixRule {
    pub name: String,
    /// All conditions must hold.
    pub when: Vec<(BoolField, bool)>,
    pub set: Vec<(BoolField, bool)>,
}

/// The example rule: a prisoner of war must be a veteran.
pub fn default_fix_rules() -> Vec<FixRule> {
    vec![FixRule {
        name: "pow_implies_veteran".into(),
        when: vec![(BoolField::Pow, true), (BoolField::Veteran, false)],
        set: vec![(BoolField::Veteran, true)],
    }]
}

/// One applied fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixEntry {
    pub record_id: String,
    pub rule: String,
    pub field: BoolField,
    pub value: bool,
}

/// One removed outlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierEntry {
    pub record_id: String,
    pub lof_score: f64,
}

/// Distance discretization bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationEntry {
    /// `[near/middle, middle/far]` boundaries actually used.
    pub thresholds: (f64, f64),
    pub levels: Vec<(String, DistanceLevel)>,
}

/// Complete, replayable transformation log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub fixes_applied: Vec<FixEntry>,
    pub outliers_removed: Vec<OutlierEntry>,
    pub imputed: Vec<ImputeEntry>,
    pub discretization: Option<DiscretizationEntry>,
}

/// Numeric fields usable as the LOF subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericField {
    Age,
    LengthOfStay,
    Charge,
    PastYearHospitalizations,
    Sequence,
    CanScore,
    DistanceMiles,
    Income,
    CharlsonIndex,
}

impl NumericField {
    fn get(self, record: &AdmissionRecord) -> Option<f64> {
        let c = &record.covariates;
        match self {
            NumericField::Age => Some(f64::from(c.age)),
            NumericField::LengthOfStay => Some(c.length_of_stay),
            NumericField::Charge => Some(record.charge),
            NumericField::PastYearHospitalizations => {
                Some(f64::from(c.past_year_hospitalizations))
            }
            NumericField::Sequence => Some(f64::from(c.sequence)),
            NumericField::CanScore => c.can_score.map(f64::from),
            NumericField::DistanceMiles => c.distance_miles,
            NumericField::Income => c.income,
            NumericField::CharlsonIndex => c.charlson_index,
        }
    }
}

/// Local-outlier-factor options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofOptions {
    pub k_neighbors: usize,
    pub threshold: f64,
    pub features: Vec<NumericField>,
}

impl Default for LofOptions {
    fn default() -> Self {
        LofOptions {
            k_neighbors: 20,
            threshold: 1.5,
            features: vec![
                NumericField::Age,
                NumericField::LengthOfStay,
                NumericField::Charge,
                NumericField::PastYearHospitalizations,
                NumericField::Sequence,
            ],
        }
    }
}

/// Hot-deck imputation: each missing value is copied from a randomly chosen
/// donor in the same cohort-by-sex cell, falling back to the global donor
/// pool when the cell is empty.
pub fn hot_deck_impute<R: Rng + ?Sized>(
    records: &mut [AdmissionRecord],
    field: ImputeField,
    rng: &mut R,
) -> Result<Vec<ImputeEntry>> {
    let mut cells: BTreeMap<(Cohort, Sex), Vec<usize>> = BTreeMap::new();
    let mut global: Vec<usize> = Vec::new();
    for (i, record) in records.iter().enumerate() {
        if field.get(record).is_some() {
            cells
                .entry((record.cohort, record.covariates.sex))
                .or_default()
                .push(i);
            global.push(i);
        }
    }
    let mut entries = Vec::new();
    for i in 0..records.len() {
        if field.get(&records[i]).is_some() {
            continue;
        }
        let key = (records[i].cohort, records[i].covariates.sex);
        let (pool, fallback) = match cells.get(&key) {
            Some(pool) if !pool.is_empty() => (pool, false),
            _ => (&global, true),
        };
        if pool.is_empty() {
            return Err(CoreError::Preprocess(format!(
                "no donors anywhere for field {}",
                field.name()
            )));
        }
        let donor = pool[rng.random_range(0..pool.len())];
        let value = field.get(&records[donor]).unwrap();
        field.set(&mut records[i], value);
        entries.push(ImputeEntry {
            record_id: records[i].record_id.clone(),
            field,
            value,
            donor_id: Some(records[donor].record_id.clone()),
            method: "hot_deck".into(),
            global_fallback: fallback,
        });
    }
    Ok(entries)
}

/// Standard LOF scores on standardized numeric covariates. Records missing
/// any subspace feature are left out of the index and never flagged.
/// Returns `(record_id, score)` for records exceeding the threshold.
pub fn lof_outliers(
    records: &[AdmissionRecord],
    options: &LofOptions,
) -> Result<Vec<OutlierEntry>> {
    let participating: Vec<(usize, Vec<f64>)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            options
                .features
                .iter()
                .map(|f| f.get(r))
                .collect::<Option<Vec<f64>>>()
                .map(|v| (i, v))
        })
        .collect();
    let n = participating.len();
    let k = options.k_neighbors;
    if n == 0 {
        return Ok(Vec::new());
    }
    if n <= k {
        return Err(CoreError::Preprocess(format!(
            "LOF needs more than k_neighbors = {k} records, have {n}"
        )));
    }
    let dims = options.features.len();

    // Standardize.
    let mut mean = vec![0.0; dims];
    for (_, v) in &participating {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut std = vec![0.0; dims];
    for (_, v) in &participating {
        for (s, (x, m)) in std.iter_mut().zip(v.iter().zip(&mean)) {
            *s += (x - m).powi(2);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0; // constant feature contributes nothing
        }
    }
    let points: Vec<Vec<f64>> = participating
        .iter()
        .map(|(_, v)| {
            v.iter()
                .zip(mean.iter().zip(&std))
                .map(|(x, (m, s))| (x - m) / s)
                .collect()
        })
        .collect();

    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    // k-distance neighborhoods (all points within the k-th nearest distance).
    let mut neighborhoods: Vec<(f64, Vec<usize>)> = Vec::with_capacity(n);
    for p in 0..n {
        let mut distances: Vec<(f64, usize)> = (0..n)
            .filter(|&o| o != p)
            .map(|o| (dist(&points[p], &points[o]), o))
            .collect();
        distances.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let k_distance = distances[k - 1].0;
        let neighbors: Vec<usize> = distances
            .iter()
            .take_while(|(d, _)| *d <= k_distance)
            .map(|&(_, o)| o)
            .collect();
        neighborhoods.push((k_distance, neighbors));
    }

    // Local reachability densities with a small epsilon so duplicate-heavy
    // neighborhoods stay finite (and score out near 1).
    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let (_, neighbors) = &neighborhoods[p];
            let mean_reach: f64 = neighbors
                .iter()
                .map(|&o| dist(&points[p], &points[o]).max(neighborhoods[o].0))
                .sum::<f64>()
                / neighbors.len() as f64;
            1.0 / (mean_reach + 1e-12)
        })
        .collect();

    let mut flagged = Vec::new();
    for p in 0..n {
        let (_, neighbors) = &neighborhoods[p];
        let score =
            neighbors.iter().map(|&o| lrd[o]).sum::<f64>() / (neighbors.len() as f64 * lrd[p]);
        if score > options.threshold {
            flagged.push(OutlierEntry {
                record_id: records[participating[p].0].record_id.clone(),
                lof_score: score,
            });
        }
    }
    Ok(flagged)
}

fn validate_fix_rules(rules: &[FixRule]) -> Result<()> {
    for (i, a) in rules.iter().enumerate() {
        for b in &rules[i + 1..] {
            let mut wa = a.when.clone();
            let mut wb = b.when.clone();
            wa.sort_by_key(|(f, v)| (*f as u8, *v));
            wb.sort_by_key(|(f, v)| (*f as u8, *v));
            if wa != wb {
                continue;
            }
            for (fa, va) in &a.set {
                for (fb, vb) in &b.set {
                    if fa == fb && va != vb {
                        return Err(CoreError::Config(format!(
                            "contradictory fix rules {} and {} on the same condition",
                            a.name, b.name
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Apply manual consistency-fix rules; each matched record is corrected and
/// logged.
pub fn apply_consistency_fixes(
    records: &mut [AdmissionRecord],
    rules: &[FixRule],
) -> Result<Vec<FixEntry>> {
    validate_fix_rules(rules)?;
    let mut entries = Vec::new();
    for record in records.iter_mut() {
        for rule in rules {
            if rule.when.iter().all(|&(f, v)| f.get(record) == v) {
                for &(field, value) in &rule.set {
                    field.set(record, value);
                    entries.push(FixEntry {
                        record_id: record.record_id.clone(),
                        rule: rule.name.clone(),
                        field,
                        value,
                    });
                }
            }
        }
    }
    Ok(entries)
}

/// How the distance thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizeMode {
    /// The published boundaries: near < 25 miles, middle 25–50, far > 50.
    #[default]
    FixedThresholds,
    /// Re-derive boundaries from the data with one-dimensional k-means (k=3).
    KMeans,
}

/// Assign each record a distance level. Interval convention:
/// `[0, t1)` near, `[t1, t2]` middle, `(t2, ∞)` far.
pub fn discretize_distance(
    records: &mut [AdmissionRecord],
    mode: DiscretizeMode,
) -> Result<DiscretizationEntry> {
    let thresholds = match mode {
        DiscretizeMode::FixedThresholds => (25.0, 50.0),
        DiscretizeMode::KMeans => {
            let mut values: Vec<f64> = records
                .iter()
                .filter_map(|r| r.covariates.distance_miles)
                .collect();
            if values.len() < 3 {
                return Err(CoreError::Preprocess(
                    "k-means discretization needs at least three distances".into(),
                ));
            }
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            kmeans_boundaries(&values)
        }
    };
    let (t1, t2) = thresholds;
    let mut levels = Vec::new();
    for record in records.iter_mut() {
        if let Some(d) = record.covariates.distance_miles {
            let level = if d < t1 {
                DistanceLevel::Near
            } else if d <= t2 {
                DistanceLevel::Middle
            } else {
                DistanceLevel::Far
            };
            record.covariates.distance_level = Some(level);
            levels.push((record.record_id.clone(), level));
        }
    }
    Ok(DiscretizationEntry { thresholds, levels })
}

/// Lloyd iterations on sorted 1-D data, three clusters seeded at the 10th,
/// 50th and 90th percentiles; boundaries are midpoints between centers.
fn kmeans_boundaries(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let mut centers = [
        sorted[n / 10],
        sorted[n / 2],
        sorted[9 * n / 10],
    ];
    for _ in 0..100 {
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for &x in sorted {
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    (x - centers[a])
                        .abs()
                        .partial_cmp(&(x - centers[b]).abs())
                        .unwrap()
                })
                .unwrap();
            sums[nearest] += x;
            counts[nearest] += 1;
        }
        let mut next = centers;
        for c in 0..3 {
            if counts[c] > 0 {
                next[c] = sums[c] / counts[c] as f64;
            }
        }
        if next == centers {
            break;
        }
        centers = next;
    }
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ((centers[0] + centers[1]) / 2.0, (centers[1] + centers[2]) / 2.0)
}

/// Non-iterative Breiman replacement: missing numerics take the median of
/// the non-missing values, missing categoricals the most frequent level
/// (ties to the lower level). Errors if a field is missing everywhere.
pub fn breiman_replace(records: &mut [AdmissionRecord]) -> Result<Vec<ImputeEntry>> {
    let mut entries = Vec::new();
    for field in ImputeField::ALL {
        let mut present: Vec<f64> = records.iter().filter_map(|r| field.get(r)).collect();
        let missing: Vec<usize> = (0..records.len())
            .filter(|&i| field.get(&records[i]).is_none())
            .collect();
        if missing.is_empty() {
            continue;
        }
        if present.is_empty() {
            return Err(CoreError::Preprocess(format!(
                "field {} is missing in every record",
                field.name()
            )));
        }
        present.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = present.len() / 2;
        let median = if present.len() % 2 == 1 {
            present[mid]
        } else {
            (present[mid - 1] + present[mid]) / 2.0
        };
        for i in missing {
            field.set(&mut records[i], median);
            entries.push(ImputeEntry {
                record_id: records[i].record_id.clone(),
                field,
                value: median,
                donor_id: None,
                method: "breiman".into(),
                global_fallback: false,
            });
        }
    }
    // Categorical: the derived distance level.
    let missing_level: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].covariates.distance_level.is_none())
        .collect();
    if !missing_level.is_empty() {
        let mut counts: BTreeMap<DistanceLevel, usize> = BTreeMap::new();
        for record in records.iter() {
            if let Some(level) = record.covariates.distance_level {
                *counts.entry(level).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(CoreError::Preprocess(
                "field distance_level is missing in every record".into(),
            ));
        }
        let mode_level = *counts
            .iter()
            .max_by_key(|(level, count)| (**count, std::cmp::Reverse(**level)))
            .map(|(level, _)| level)
            .unwrap();
        for i in missing_level {
            records[i].covariates.distance_level = Some(mode_level);
        }
    }
    Ok(entries)
}

/// Pipeline options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub fix_rules: Vec<FixRule>,
    pub lof: LofOptions,
    /// Skip outlier removal entirely (small fixtures).
    pub remove_outliers: bool,
    pub impute_fields: Vec<ImputeField>,
    pub discretize: DiscretizeMode,
    pub seed: u64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            fix_rules: default_fix_rules(),
            lof: LofOptions::default(),
            remove_outliers: true,
            impute_fields: ImputeField::ALL.to_vec(),
            discretize: DiscretizeMode::FixedThresholds,
            seed: 0,
        }
    }
}

/// Run fixes → outlier removal → hot-deck imputation → discretization.
pub fn run_pipeline(
    mut records: Vec<AdmissionRecord>,
    options: &PreprocessOptions,
) -> Result<(Vec<AdmissionRecord>, PreprocessReport)> {
    let mut report = PreprocessReport::default();
    report.fixes_applied = apply_consistency_fixes(&mut records, &options.fix_rules)?;
    if options.remove_outliers {
        report.outliers_removed = lof_outliers(&records, &options.lof)?;
        let removed: std::collections::BTreeSet<&str> = report
            .outliers_removed
            .iter()
            .map(|o| o.record_id.as_str())
            .collect();
        records.retain(|r| !removed.contains(r.record_id.as_str()));
    }
    for (i, field) in options.impute_fields.iter().enumerate() {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(options.seed, "hot_deck", i as u64));
        let entries = hot_deck_impute(&mut records, *field, &mut rng)?;
        report.imputed.extend(entries);
    }
    report.discretization = Some(discretize_distance(&mut records, options.discretize)?);
    Ok((records, report))
}

/// Replay a report against the raw records; the result must equal the
/// pipeline output.
pub fn apply_report(
    mut records: Vec<AdmissionRecord>,
    report: &PreprocessReport,
) -> Vec<AdmissionRecord> {
    let mut by_id: BTreeMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.clone(), i))
        .collect();
    for fix in &report.fixes_applied {
        if let Some(&i) = by_id.get(&fix.record_id) {
            fix.field.set(&mut records[i], fix.value);
        }
    }
    let removed: std::collections::BTreeSet<&str> = report
        .outliers_removed
        .iter()
        .map(|o| o.record_id.as_str())
        .collect();
    records.retain(|r| !removed.contains(r.record_id.as_str()));
    by_id = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.clone(), i))
        .collect();
    for entry in &report.imputed {
        if let Some(&i) = by_id.get(&entry.record_id) {
            entry.field.set(&mut records[i], entry.value);
        }
    }
    if let Some(disc) = &report.discretization {
        for (record_id, level) in &disc.levels {
            if let Some(&i) = by_id.get(record_id) {
                records[i].covariates.distance_level = Some(*level);
            }
        }
    }
    records
}
