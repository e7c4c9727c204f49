//! Classification metrics, ROC/AUROC, risk-decile calibration, and repeated
//! split-sample validation with optimism correction.

use crate::error::{CoreError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Confusion-matrix counts with PAR as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[bool], labels: &[bool]) -> Self {
        let mut counts = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        for (&p, &l) in predicted.iter().zip(labels) {
            match (p, l) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, false) => counts.tn += 1,
                (false, true) => counts.fn_ += 1,
            }
        }
        counts
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Count-based metrics; denominator-free entries are `None`, never zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f_score: Option<f64>,
    pub mcc: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Standard confusion-matrix formulas.
pub fn classification_metrics(counts: &ConfusionCounts) -> ClassificationMetrics {
    let (tp, fp, tn, fn_) = (
        counts.tp as f64,
        counts.fp as f64,
        counts.tn as f64,
        counts.fn_ as f64,
    );
    let ratio = |num: f64, den: f64| if den > 0.0 { Some(num / den) } else { None };
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    let ppv = ratio(tp, tp + fp);
    let npv = ratio(tn, tn + fn_);
    let f_score = match (sensitivity, ppv) {
        (Some(s), Some(p)) if s + p > 0.0 => Some(2.0 * s * p / (s + p)),
        _ => None,
    };
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = if mcc_den > 0.0 {
        Some((tp * tn - fp * fn_) / mcc_den)
    } else {
        None
    };
    let accuracy = ratio(tp + tn, tp + fp + tn + fn_);
    ClassificationMetrics {
        sensitivity,
        specificity,
        ppv,
        npv,
        f_score,
        mcc,
        accuracy,
    }
}

/// Mean squared error of probability scores against 0/1 labels.
pub fn mean_squared_error(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return None;
    }
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| (s - if l { 1.0 } else { 0.0 }).powi(2))
        .sum();
    Some(sum / scores.len() as f64)
}

fn check_two_classes(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(CoreError::Metrics("scores/labels length mismatch".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(CoreError::Metrics(
            "AUROC undefined: both classes must be present".into(),
        ));
    }
    Ok(())
}

/// The c-statistic: probability a random positive outscores a random
/// negative, ties counted half (Mann–Whitney form).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_two_classes(scores, labels)?;
    // Rank-sum with midranks for ties.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j].
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// ROC stair points from (0,0) to (1,1); tied scores produce one point, so
/// the trapezoid area equals the Mann–Whitney statistic exactly.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_two_classes(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        points.push((fp / n_neg, tp / n_pos));
        i = j + 1;
    }
    Ok(points)
}

/// Trapezoid area under an ROC stair.
pub fn roc_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// One calibration row (risk decile).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub decile: usize,
    pub sample_size: usize,
    /// Rounded sum of predicted probabilities in the bin.
    pub predicted_par: u64,
    pub observed_par: u64,
    /// Observed / predicted; zero when nothing was observed.
    pub op_ratio: f64,
}

/// Score binning for the calibration table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    /// Ten equal-width bins on the score range [0, 1].
    #[default]
    EqualWidth,
    /// Equal-count bins by score rank; ties stay in one bin.
    EqualCount,
}

/// Observed-vs-predicted event counts per risk decile.
pub fn calibration_table(
    scores: &[f64],
    labels: &[bool],
    n_bins: usize,
    strategy: BinStrategy,
) -> Result<Vec<CalibrationRow>> {
    if scores.len() != labels.len() {
        return Err(CoreError::Metrics("scores/labels length mismatch".into()));
    }
    if n_bins == 0 {
        return Err(CoreError::Metrics("need at least one bin".into()));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(CoreError::Metrics("scores must lie in [0, 1]".into()));
    }
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    match strategy {
        BinStrategy::EqualWidth => {
            for (i, &s) in scores.iter().enumerate() {
                let bin = ((s * n_bins as f64) as usize).min(n_bins - 1);
                bins[bin].push(i);
            }
        }
        BinStrategy::EqualCount => {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
            let per_bin = scores.len().div_ceil(n_bins);
            let mut bin = 0;
            let mut i = 0;
            while i < order.len() {
                let mut j = i;
                // Keep tied scores together.
                while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
                    j += 1;
                }
                for &idx in &order[i..=j] {
                    bins[bin].push(idx);
                }
                if bins[bin].len() >= per_bin && bin + 1 < n_bins {
                    bin += 1;
                }
                i = j + 1;
            }
        }
    }
    Ok(bins
        .into_iter()
        .enumerate()
        .map(|(b, members)| {
            let predicted: f64 = members.iter().map(|&i| scores[i]).sum();
            let predicted_par = predicted.round() as u64;
            let observed_par = members.iter().filter(|&&i| labels[i]).count() as u64;
            let op_ratio = if predicted_par > 0 {
                observed_par as f64 / predicted_par as f64
            } else {
                0.0
            };
            CalibrationRow {
                decile: b + 1,
                sample_size: members.len(),
                predicted_par,
                observed_par,
                op_ratio,
            }
        })
        .collect())
}

/// Render calibration rows as delimited text (decile, n, predicted,
/// observed, O/P).
pub fn calibration_tsv(rows: &[CalibrationRow]) -> String {
    let mut out = String::from("decile\tsample_size\tpredicted_par\tobserved_par\top_ratio\n");
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.3}\n",
            row.decile, row.sample_size, row.predicted_par, row.observed_par, row.op_ratio
        ));
    }
    out
}

/// A model trainer used by split-sample validation: given train/test row
/// indices and a derived seed, return scores for both sides.
pub trait ValidationTrainer {
    fn fit_and_score(
        &self,
        train: &[usize],
        test: &[usize],
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl<F> ValidationTrainer for F
where
    F: Fn(&[usize], &[usize], u64) -> Result<(Vec<f64>, Vec<f64>)>,
{
    fn fit_and_score(
        &self,
        train: &[usize],
        test: &[usize],
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self(train, test, seed)
    }
}

/// Split-sample validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub repeats: usize,
    pub train_c: Vec<f64>,
    pub test_c: Vec<f64>,
    pub mean_train_c: f64,
    pub mean_test_c: f64,
    /// `mean_train_c - mean_test_c`.
    pub optimism: f64,
    /// `mean_train_c - optimism`.
    pub corrected_c: f64,
}

/// Repeated stratified split-sample validation at the patient level.
///
/// Patients (not records) are split so repeated admissions never leak across
/// the halves; stratification is on the patient-level outcome (any positive
/// record). `optimism` is the mean train-minus-test c-statistic and the
/// corrected estimate subtracts it from the training mean.
pub fn split_sample_validation<T: ValidationTrainer>(
    labels: &[bool],
    patient_of: &[usize],
    trainer: &T,
    n_repeats: usize,
    split: f64,
    master_seed: u64,
) -> Result<ValidationReport> {
    if labels.len() != patient_of.len() {
        return Err(CoreError::Metrics("labels/patients length mismatch".into()));
    }
    if !(0.0 < split && split < 1.0) {
        return Err(CoreError::Metrics("split fraction must be in (0, 1)".into()));
    }
    if n_repeats == 0 {
        return Err(CoreError::Metrics("need at least one repeat".into()));
    }
    let n_patients = patient_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut patient_rows: Vec<Vec<usize>> = vec![Vec::new(); n_patients];
    for (row, &p) in patient_of.iter().enumerate() {
        patient_rows[p].push(row);
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (p, rows) in patient_rows.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.iter().any(|&r| labels[r]) {
            positives.push(p);
        } else {
            negatives.push(p);
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(CoreError::Metrics(
            "validation needs patients of both outcomes".into(),
        ));
    }

    let mut train_c = Vec::with_capacity(n_repeats);
    let mut test_c = Vec::with_capacity(n_repeats);
    for repeat in 0..n_repeats {
        let seed = crate::seed::derive_seed(master_seed, "validation", repeat as u64);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let take_half = |pool: &[usize], rng: &mut ChaCha12Rng| -> (Vec<usize>, Vec<usize>) {
            let mut shuffled = pool.to_vec();
            shuffled.shuffle(rng);
            let cut = ((shuffled.len() as f64) * split).round() as usize;
            let cut = cut.clamp(1, shuffled.len().saturating_sub(1).max(1));
            let (a, b) = shuffled.split_at(cut.min(shuffled.len()));
            (a.to_vec(), b.to_vec())
        };
        let (train_pos, test_pos) = take_half(&positives, &mut rng);
        let (train_neg, test_neg) = take_half(&negatives, &mut rng);
        let collect_rows = |patients: &[usize], more: &[usize]| -> Vec<usize> {
            let mut rows: Vec<usize> = patients
                .iter()
                .chain(more)
                .flat_map(|&p| patient_rows[p].iter().copied())
                .collect();
            rows.sort_unstable();
            rows
        };
        let train_rows = collect_rows(&train_pos, &train_neg);
        let test_rows = collect_rows(&test_pos, &test_neg);
        if train_rows.is_empty() || test_rows.is_empty() {
            return Err(CoreError::Metrics("degenerate split".into()));
        }
        let (train_scores, test_scores) = trainer.fit_and_score(&train_rows, &test_rows, seed)?;
        let labels_for = |rows: &[usize]| -> Vec<bool> { rows.iter().map(|&r| labels[r]).collect() };
        let c_of = |scores: &[f64], rows: &[usize]| -> f64 {
            auroc(scores, &labels_for(rows)).unwrap_or(0.5)
        };
        train_c.push(c_of(&train_scores, &train_rows));
        test_c.push(c_of(&test_scores, &test_rows));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_train_c = mean(&train_c);
    let mean_test_c = mean(&test_c);
    let optimism = mean_train_c - mean_test_c;
    Ok(ValidationReport {
        repeats: n_repeats,
        train_c,
        test_c,
        mean_train_c,
        mean_test_c,
        optimism,
        corrected_c: mean_train_c - optimism,
    })
}
