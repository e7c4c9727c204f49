//! Per-patient timelines with same-day same-unit merging.

use super::AdmissionRecord;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Time-ordered hospitalizations of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTimeline {
    patient_id: String,
    records: Vec<AdmissionRecord>,
}

impl PatientTimeline {
    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn records(&self) -> &[AdmissionRecord] {
        &self.records
    }
}

/// One merge event: `absorbed` records were folded into `kept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEntry {
    pub kept: String,
    pub absorbed: Vec<String>,
}

/// Merge bookkeeping for the audit trail.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimelineReport {
    pub merged: Vec<MergeEntry>,
}

/// Build one timeline per patient.
///
/// Records of the same patient admitted on the same calendar day to the same
/// medical unit — the `(facility, ward_type)` pair — merge into one stay
/// keeping the earliest admission and the latest discharge; charges sum and
/// code lists union. The grouping key makes the merge independent of input
/// order.
pub fn build_timelines(records: &[AdmissionRecord]) -> (Vec<PatientTimeline>, TimelineReport) {
    let mut by_patient: BTreeMap<&str, Vec<&AdmissionRecord>> = BTreeMap::new();
    for record in records {
        by_patient.entry(&record.patient_id).or_default().push(record);
    }

    let mut report = TimelineReport::default();
    let mut timelines = Vec::with_capacity(by_patient.len());
    for (patient_id, patient_records) in by_patient {
        let mut groups: BTreeMap<(chrono::NaiveDate, u8, u8), Vec<&AdmissionRecord>> =
            BTreeMap::new();
        for record in patient_records {
            let key = (
                record.admit_time.date(),
                record.facility as u8,
                record.ward_type as u8,
            );
            groups.entry(key).or_default().push(record);
        }
        let mut merged_records: Vec<AdmissionRecord> = Vec::new();
        for (_, mut group) in groups {
            group.sort_by(|a, b| {
                (a.admit_time, &a.record_id).cmp(&(b.admit_time, &b.record_id))
            });
            if group.len() == 1 {
                merged_records.push(group[0].clone());
                continue;
            }
            let mut merged = group[0].clone();
            let mut absorbed = Vec::new();
            for other in &group[1..] {
                absorbed.push(other.record_id.clone());
                if other.discharge_time > merged.discharge_time {
                    merged.discharge_time = other.discharge_time;
                }
                merged.charge += other.charge;
                merged.secondary_dx.extend(other.secondary_dx.iter().cloned());
                merged.procedures.extend(other.procedures.iter().cloned());
                merged
                    .covariates
                    .hcc_codes
                    .extend(other.covariates.hcc_codes.iter().cloned());
            }
            merged.secondary_dx.sort();
            merged.secondary_dx.dedup();
            merged.procedures.sort();
            merged.procedures.dedup();
            merged.covariates.length_of_stay = merged.stay_days();
            report.merged.push(MergeEntry {
                kept: merged.record_id.clone(),
                absorbed,
            });
            merged_records.push(merged);
        }
        merged_records.sort_by(|a, b| {
            (a.admit_time, &a.record_id).cmp(&(b.admit_time, &b.record_id))
        });
        timelines.push(PatientTimeline {
            patient_id: patient_id.to_string(),
            records: merged_records,
        });
    }
    report.merged.sort_by(|a, b| a.kept.cmp(&b.kept));
    (timelines, report)
}
