//! Training data layout shared by the splitting and forest modules.
//!
//! A [`TrainingSet`] holds one row per at-risk hospitalization: the outcome
//! pair `(time_days, complete)` used by the phase-type likelihood, the class
//! label (`complete` = a potentially avoidable readmission followed), and an
//! encoded covariate vector. The schema is fixed by enum domains rather than
//! observed data so that two files prepared the same way always share a
//! fingerprint.

use crate::error::{CoreError, Result};
use crate::par::{LabelReport, Role};
use crate::records::{DistanceLevel, PatientTimeline};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Kind of a model feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureKind {
    Numeric,
    Categorical { levels: Vec<String> },
}

/// Named feature definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

/// Ordered feature list; order is part of the fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSchema {
    pub features: Vec<FeatureDef>,
}

impl TrainingSchema {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// Encoded covariate value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureValue {
    Num(f64),
    Cat(u32),
}

impl FeatureValue {
    pub fn as_num(self) -> f64 {
        match self {
            FeatureValue::Num(x) => x,
            FeatureValue::Cat(c) => f64::from(c),
        }
    }
}

/// One at-risk hospitalization with outcome and encoded covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub record_id: String,
    pub patient_id: String,
    /// Days from discharge to the next potentially avoidable readmission,
    /// or the censoring horizon.
    pub time_days: f64,
    /// True if a PAR followed within the window.
    pub complete: bool,
    pub values: Vec<FeatureValue>,
}

/// Rows of one patient, in timeline order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientGroup {
    pub patient_id: String,
    pub row_indices: Vec<usize>,
}

/// Validated training data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    schema: TrainingSchema,
    rows: Vec<TrainingRow>,
    patients: Vec<PatientGroup>,
}

impl TrainingSet {
    pub fn new(schema: TrainingSchema, rows: Vec<TrainingRow>) -> Result<Self> {
        for row in &rows {
            if row.values.len() != schema.n_features() {
                return Err(CoreError::Config(format!(
                    "row {} has {} values, schema has {} features",
                    row.record_id,
                    row.values.len(),
                    schema.n_features()
                )));
            }
            if !(row.time_days > 0.0) || !row.time_days.is_finite() {
                return Err(CoreError::Config(format!(
                    "row {} has nonpositive outcome time {}",
                    row.record_id, row.time_days
                )));
            }
            for (def, value) in schema.features.iter().zip(&row.values) {
                match (&def.kind, value) {
                    (FeatureKind::Numeric, FeatureValue::Num(x)) => {
                        if !x.is_finite() {
                            return Err(CoreError::Config(format!(
                                "row {}: feature {} is not finite",
                                row.record_id, def.name
                            )));
                        }
                    }
                    (FeatureKind::Categorical { levels }, FeatureValue::Cat(c)) => {
                        if *c as usize >= levels.len() {
                            return Err(CoreError::Config(format!(
                                "row {}: feature {} has unknown level {}",
                                row.record_id, def.name, c
                            )));
                        }
                    }
                    _ => {
                        return Err(CoreError::Config(format!(
                            "row {}: feature {} has a value of the wrong kind",
                            row.record_id, def.name
                        )));
                    }
                }
            }
        }
        // Group rows by patient in first-appearance order.
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            let entry = groups.entry(row.patient_id.clone()).or_insert_with(|| {
                order.push(row.patient_id.clone());
                Vec::new()
            });
            entry.push(i);
        }
        let patients = order
            .into_iter()
            .map(|patient_id| {
                let row_indices = groups.remove(&patient_id).unwrap();
                PatientGroup {
                    patient_id,
                    row_indices,
                }
            })
            .collect();
        Ok(TrainingSet {
            schema,
            rows,
            patients,
        })
    }

    pub fn schema(&self) -> &TrainingSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[TrainingRow] {
        &self.rows
    }

    pub fn patients(&self) -> &[PatientGroup] {
        &self.patients
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn value(&self, row: usize, feature: usize) -> FeatureValue {
        self.rows[row].values[feature]
    }
}

fn cat(name: &str, levels: &[&str]) -> FeatureDef {
    FeatureDef {
        name: name.into(),
        kind: FeatureKind::Categorical {
            levels: levels.iter().map(|s| s.to_string()).collect(),
        },
    }
}

fn num(name: &str) -> FeatureDef {
    FeatureDef {
        name: name.into(),
        kind: FeatureKind::Numeric,
    }
}

const BOOL_LEVELS: [&str; 2] = ["no", "yes"];

/// The standard covariate schema used by the pipeline. Domains come from the
/// record enums, so the fingerprint is stable across datasets.
pub fn standard_schema() -> TrainingSchema {
    let mut features = vec![
        num("age"),
        num("length_of_stay"),
        num("can_score"),
        num("past_year_hospitalizations"),
        num("sequence"),
        num("charlson_index"),
        num("income"),
        cat("distance_level", &["near", "middle", "far"]),
        cat("sex", &["m", "f"]),
        cat("race", &["black", "white", "other"]),
        cat(
            "marital_status",
            &["current_spouse", "never_married", "previously_married"],
        ),
        cat("insurance", &["medicare", "medicaid", "private", "none"]),
        cat(
            "admission_source",
            &["home", "outpatient", "transfer", "nhcu", "domiciliary", "other"],
        ),
        cat(
            "enrollment_priority",
            &["1", "2", "3", "4", "5", "6", "7", "8"],
        ),
        cat(
            "facility",
            &["ann_arbor", "battle_creek", "detroit", "saginaw"],
        ),
        cat("cohort", &["hf", "ami", "pn", "copd", "other"]),
        cat("agent_orange", &BOOL_LEVELS),
        cat("pow", &BOOL_LEVELS),
        cat("radiation", &BOOL_LEVELS),
    ];
    for flag in crate::records::ComorbidityFlags::NAMES {
        features.push(cat(&format!("comorb_{flag}"), &BOOL_LEVELS));
    }
    TrainingSchema { features }
}

/// Assemble training rows from labeled timelines.
///
/// A row is emitted for every record whose final role keeps it at risk of a
/// readmission (eligible admissions and PAR readmissions). The outcome is
/// complete when the patient's next record is a PAR readmitted within the
/// window; otherwise the row is censored at `horizon_days`.
///
/// Covariates must be complete (run Breiman replacement and distance
/// discretization first); a missing value is an error naming the field.
pub fn build_training_set(
    timelines: &[PatientTimeline],
    report: &LabelReport,
    horizon_days: f64,
) -> Result<TrainingSet> {
    let schema = standard_schema();
    let mut roles: BTreeMap<&str, (Role, bool)> = BTreeMap::new();
    for outcome in &report.outcomes {
        roles.insert(&outcome.record_id, (outcome.role, outcome.is_par));
    }
    let mut rows = Vec::new();
    for timeline in timelines {
        let records = timeline.records();
        for (i, record) in records.iter().enumerate() {
            let Some(&(role, _)) = roles.get(record.record_id.as_str()) else {
                continue;
            };
            let at_risk = matches!(role, Role::EligibleAdmission)
                || (matches!(role, Role::Readmission));
            if !at_risk {
                continue;
            }
            let mut time_days = horizon_days;
            let mut complete = false;
            if let Some(next) = records.get(i + 1) {
                if let Some(&(_, next_par)) = roles.get(next.record_id.as_str()) {
                    if next_par {
                        let gap = next.gap_days_after(record);
                        if gap >= 0.0 && gap <= horizon_days {
                            time_days = gap.max(1.0 / 1440.0); // at least one minute
                            complete = true;
                        }
                    }
                }
            }
            let values = encode_record(record)?;
            rows.push(TrainingRow {
                record_id: record.record_id.clone(),
                patient_id: record.patient_id.clone(),
                time_days,
                complete,
                values,
            });
        }
    }
    TrainingSet::new(schema, rows)
}

fn require<T>(value: Option<T>, record: &str, field: &str) -> Result<T> {
    value.ok_or_else(|| {
        CoreError::Config(format!(
            "record {record}: covariate {field} is missing; run Breiman replacement first"
        ))
    })
}

fn encode_record(record: &crate::records::AdmissionRecord) -> Result<Vec<FeatureValue>> {
    use FeatureValue::{Cat, Num};
    let c = &record.covariates;
    let id = &record.record_id;
    let mut values = vec![
        Num(f64::from(c.age)),
        Num(c.length_of_stay),
        Num(f64::from(require(c.can_score, id, "can_score")?)),
        Num(f64::from(c.past_year_hospitalizations)),
        Num(f64::from(c.sequence)),
        Num(require(c.charlson_index, id, "charlson_index")?),
        Num(require(c.income, id, "income")?),
        Cat(match require(c.distance_level, id, "distance_level")? {
            DistanceLevel::Near => 0,
            DistanceLevel::Middle => 1,
            DistanceLevel::Far => 2,
        }),
        Cat(c.sex as u32),
        Cat(c.race as u32),
        Cat(c.marital_status as u32),
        Cat(c.insurance as u32),
        Cat(c.admission_source as u32),
        Cat(u32::from(c.enrollment_priority) - 1),
        Cat(record.facility as u32),
        Cat(record.cohort as u32),
        Cat(u32::from(c.agent_orange)),
        Cat(u32::from(c.pow)),
        Cat(u32::from(c.radiation)),
    ];
    for flag in c.comorbidity_flags.iter() {
        values.push(Cat(u32::from(flag)));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = standard_schema();
        let b = standard_schema();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = standard_schema();
        c.features.push(num("extra"));
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn rejects_unknown_level() {
        let schema = TrainingSchema {
            features: vec![cat("sex", &["m", "f"])],
        };
        let row = TrainingRow {
            record_id: "r1".into(),
            patient_id: "p1".into(),
            time_days: 30.0,
            complete: false,
            values: vec![FeatureValue::Cat(2)],
        };
        assert!(TrainingSet::new(schema, vec![row]).is_err());
    }

    #[test]
    fn groups_rows_by_patient_in_order() {
        let schema = TrainingSchema {
            features: vec![num("x")],
        };
        let mk = |id: &str, pid: &str| TrainingRow {
            record_id: id.into(),
            patient_id: pid.into(),
            time_days: 30.0,
            complete: false,
            values: vec![FeatureValue::Num(1.0)],
        };
        let set = TrainingSet::new(
            schema,
            vec![mk("a", "p2"), mk("b", "p1"), mk("c", "p2")],
        )
        .unwrap();
        assert_eq!(set.n_patients(), 2);
        assert_eq!(set.patients()[0].patient_id, "p2");
        assert_eq!(set.patients()[0].row_indices, vec![0, 2]);
        assert_eq!(set.patients()[1].row_indices, vec![1]);
    }
}
