//! Potentially avoidable readmission (PAR) labeling.
//!
//! The engine runs a data-driven pipeline over patient timelines:
//!
//! 1. cohort identification and admission/readmission role classification,
//! 2. the eleven exclusion rules III.a–k,
//! 3. clinical-relation marking Va–Vh against the series reference admission,
//! 4. physician override application,
//! 5. PAR series construction,
//! 6. reclassification of unrelated readmissions and rate computation.
//!
//! Physician panel review happens outside the tool; its verdicts arrive as an
//! override file.

mod engine;
mod overrides;
mod rules;

pub use engine::{
    apply_exclusions, build_series, classify_roles, mark_relations, reclassify_and_rate, run_par,
    ParRun,
};
pub use overrides::{apply_overrides, read_overrides_jsonl, OverrideAction, OverrideEntry, OverrideReport};
pub use rules::{MappedRelation, RuleTables};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Final role of a record in the label partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    EligibleAdmission,
    Readmission,
    Excluded,
}

/// Exclusion rules of Step III, individually toggleable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(clippy::enum_variant_names)]
pub enum ExclusionRule {
    #[serde(rename = "III.a")]
    IIIa,
    #[serde(rename = "III.b")]
    IIIb,
    #[serde(rename = "III.c")]
    IIIc,
    #[serde(rename = "III.d")]
    IIId,
    #[serde(rename = "III.e")]
    IIIe,
    #[serde(rename = "III.f")]
    IIIf,
    #[serde(rename = "III.g")]
    IIIg,
    #[serde(rename = "III.h")]
    IIIh,
    #[serde(rename = "III.i")]
    IIIi,
    #[serde(rename = "III.j")]
    IIIj,
    #[serde(rename = "III.k")]
    IIIk,
}

impl ExclusionRule {
    pub const ALL: [ExclusionRule; 11] = [
        ExclusionRule::IIIa,
        ExclusionRule::IIIb,
        ExclusionRule::IIIc,
        ExclusionRule::IIId,
        ExclusionRule::IIIe,
        ExclusionRule::IIIf,
        ExclusionRule::IIIg,
        ExclusionRule::IIIh,
        ExclusionRule::IIIi,
        ExclusionRule::IIIj,
        ExclusionRule::IIIk,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ExclusionRule::IIIa => "III.a",
            ExclusionRule::IIIb => "III.b",
            ExclusionRule::IIIc => "III.c",
            ExclusionRule::IIId => "III.d",
            ExclusionRule::IIIe => "III.e",
            ExclusionRule::IIIf => "III.f",
            ExclusionRule::IIIg => "III.g",
            ExclusionRule::IIIh => "III.h",
            ExclusionRule::IIIi => "III.i",
            ExclusionRule::IIIj => "III.j",
            ExclusionRule::IIIk => "III.k",
        }
    }
}

/// Why a record ended up excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReasonCode {
    /// Step I: no study-cohort diagnosis.
    #[serde(rename = "I")]
    OutOfCohort,
    #[serde(rename = "III")]
    Exclusion(ExclusionRule),
    /// Step VIII: unrelated readmission in a death/transfer/AMA category.
    #[serde(rename = "VIII")]
    StepViiiDrop,
    /// Outside the study window (used only as a readmission source).
    #[serde(rename = "window")]
    OutsideStudyWindow,
    /// Forced by an override entry.
    #[serde(rename = "override")]
    Override,
}

impl std::fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReasonCode::OutOfCohort => f.write_str("I"),
            ReasonCode::Exclusion(rule) => f.write_str(rule.code()),
            ReasonCode::StepViiiDrop => f.write_str("VIII"),
            ReasonCode::OutsideStudyWindow => f.write_str("window"),
            ReasonCode::Override => f.write_str("override"),
        }
    }
}

/// Clinical relation category of a readmission to its reference admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationCategory {
    Va,
    Vb,
    Vc,
    Vd,
    Ve,
    Vf,
    Vg,
    Vh,
    Unrelated,
}

impl RelationCategory {
    pub fn is_related(self) -> bool {
        !matches!(self, RelationCategory::Unrelated)
    }
}

impl From<MappedRelation> for RelationCategory {
    fn from(kind: MappedRelation) -> Self {
        match kind {
            MappedRelation::Vb => RelationCategory::Vb,
            MappedRelation::Vc => RelationCategory::Vc,
            MappedRelation::Vd => RelationCategory::Vd,
            MappedRelation::Vg => RelationCategory::Vg,
            MappedRelation::Vh => RelationCategory::Vh,
        }
    }
}

/// Labeling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParConfig {
    /// Readmission window in days.
    pub window_days: f64,
    /// Records admitted after this instant only serve as readmissions of
    /// earlier stays, never as eligible admissions.
    pub study_end: Option<NaiveDateTime>,
    /// Let secondary diagnoses participate in cohort assignment.
    pub use_secondary_for_cohort: bool,
    /// Rule III.f exemption scope: principal-or-secondary when true,
    /// principal only when false.
    pub ami_exempt_secondary: bool,
    pub disabled_rules: BTreeSet<ExclusionRule>,
    /// Disable every Step V relation table (all readmissions unrelated).
    pub disable_relations: bool,
}

impl Default for ParConfig {
    fn default() -> Self {
        ParConfig {
            window_days: 30.0,
            study_end: None,
            use_secondary_for_cohort: true,
            ami_exempt_secondary: true,
            disabled_rules: BTreeSet::new(),
            disable_relations: false,
        }
    }
}

/// Label outcome of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub record_id: String,
    pub role: Role,
    pub exclusion_reason: Option<ReasonCode>,
    pub relation_category: Option<RelationCategory>,
    pub is_par: bool,
    pub series_id: Option<String>,
    pub override_applied: bool,
}

/// A chain of PARs all tied to the same initiating admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParSeries {
    pub series_id: String,
    pub index_record_id: String,
    pub par_record_ids: Vec<String>,
    /// Days from the index discharge to the last PAR admission; can exceed
    /// the 30-day window.
    pub span_days: f64,
}

/// Eligible/series counts and the rate for one reporting slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub eligible: usize,
    pub series: usize,
    pub rate: f64,
}

/// Audit trail entry: which rule touched which records at which step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub step: String,
    pub rule: String,
    pub record_ids: Vec<String>,
}

/// Full labeling output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub outcomes: Vec<LabelOutcome>,
    pub series: Vec<ParSeries>,
    pub eligible_count: usize,
    pub par_count: usize,
    pub par_series_count: usize,
    /// `par_series_count / eligible_count`.
    pub par_rate: f64,
    pub per_cohort_rates: BTreeMap<String, RateRow>,
    pub per_facility_rates: BTreeMap<String, RateRow>,
    pub audit: Vec<AuditEntry>,
}

impl LabelReport {
    /// Delimited summary: `scope	key	eligible	series	rate`.
    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("scope\tkey\teligible\tseries\trate\n");
        out.push_str(&format!(
            "overall\tall\t{}\t{}\t{:.6}\n",
            self.eligible_count, self.par_series_count, self.par_rate
        ));
        for (cohort, row) in &self.per_cohort_rates {
            out.push_str(&format!(
                "cohort\t{cohort}\t{}\t{}\t{:.6}\n",
                row.eligible, row.series, row.rate
            ));
        }
        for (facility, row) in &self.per_facility_rates {
            out.push_str(&format!(
                "facility\t{facility}\t{}\t{}\t{:.6}\n",
                row.eligible, row.series, row.rate
            ));
        }
        out
    }
}
