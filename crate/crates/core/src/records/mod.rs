//! Admission record schema, ingest, and patient timelines.

mod ingest;
mod timeline;

pub use ingest::{
    ingest, write_csv, write_jsonl, write_rejects_jsonl, FileFormat, FlatRecord, IngestReport,
    RejectedRow, SchemaOptions,
};
pub use timeline::{build_timelines, MergeEntry, PatientTimeline, TimelineReport};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Timestamp format used by the record files (minute resolution).
pub const TIME_FORMAT: &str = "%Y-%m-%d %H:%M";

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $code:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> &'static str {
                match self {
                    $($name::$variant => $code),+
                }
            }

            pub fn parse(text: &str) -> Option<Self> {
                match text {
                    $($code => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.code())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.code())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                $name::parse(&text).ok_or_else(|| {
                    serde::de::Error::custom(format!(
                        "unknown {} value: {text}",
                        stringify!($name)
                    ))
                })
            }
        }
    };
}

string_enum! {
    /// The four study facilities.
    Facility {
        AnnArbor => "ann_arbor",
        BattleCreek => "battle_creek",
        Detroit => "detroit",
        Saginaw => "saginaw",
    }
}

string_enum! {
    /// Study condition cohorts.
    Cohort {
        Hf => "hf",
        Ami => "ami",
        Pn => "pn",
        Copd => "copd",
        Other => "other",
    }
}

string_enum! {
    DischargeStatus {
        Home => "home",
        Death => "death",
        TransferInternal => "transfer_internal",
        TransferExternal => "transfer_external",
        AgainstMedicalAdvice => "against_medical_advice",
        Other => "other",
    }
}

string_enum! {
    WardType {
        Acute => "acute",
        LongTerm => "long_term",
        NursingHome => "nursing_home",
        Psychiatry => "psychiatry",
        Rehabilitation => "rehabilitation",
        Hospice => "hospice",
        Palliative => "palliative",
        Domiciliary => "domiciliary",
    }
}

string_enum! {
    Sex {
        Male => "m",
        Female => "f",
    }
}

string_enum! {
    Race {
        Black => "black",
        White => "white",
        Other => "other",
    }
}

string_enum! {
    MaritalStatus {
        CurrentSpouse => "current_spouse",
        NeverMarried => "never_married",
        PreviouslyMarried => "previously_married",
    }
}

string_enum! {
    Insurance {
        Medicare => "medicare",
        Medicaid => "medicaid",
        Private => "private",
        None => "none",
    }
}

string_enum! {
    AdmissionSource {
        Home => "home",
        Outpatient => "outpatient",
        Transfer => "transfer",
        Nhcu => "nhcu",
        Domiciliary => "domiciliary",
        Other => "other",
    }
}

string_enum! {
    /// Discretized distance-to-facility level.
    DistanceLevel {
        Near => "near",
        Middle => "middle",
        Far => "far",
    }
}

/// Comorbidity indicator set carried by every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComorbidityFlags {
    pub cad: bool,
    pub heart_failure: bool,
    pub vascular: bool,
    pub cardiorespiratory: bool,
    pub pneumonia: bool,
    pub atrial_fibrillation: bool,
    pub anemia: bool,
    pub diabetes: bool,
    pub copd: bool,
    pub chronic_bronchitis: bool,
    pub malignant_neoplasm: bool,
    pub mental_disorder: bool,
    pub substance_abuse: bool,
}

impl ComorbidityFlags {
    pub const NAMES: [&'static str; 13] = [
        "cad",
        "heart_failure",
        "vascular",
        "cardiorespiratory",
        "pneumonia",
        "atrial_fibrillation",
        "anemia",
        "diabetes",
        "copd",
        "chronic_bronchitis",
        "malignant_neoplasm",
        "mental_disorder",
        "substance_abuse",
    ];

    pub fn iter(&self) -> impl Iterator<Item = bool> {
        [
            self.cad,
            self.heart_failure,
            self.vascular,
            self.cardiorespiratory,
            self.pneumonia,
            self.atrial_fibrillation,
            self.anemia,
            self.diabetes,
            self.copd,
            self.chronic_bronchitis,
            self.malignant_neoplasm,
            self.mental_disorder,
            self.substance_abuse,
        ]
        .into_iter()
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.iter().nth(i).unwrap())
    }
}

/// Patient covariates at the time of the hospitalization. Missing values are
/// explicit `None`s; imputation belongs to the preprocessing module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector {
    pub age: u32,
    pub sex: Sex,
    pub race: Race,
    pub marital_status: MaritalStatus,
    pub insurance: Insurance,
    pub income: Option<f64>,
    /// Days between admission and discharge; derived at ingest.
    pub length_of_stay: f64,
    pub admission_source: AdmissionSource,
    /// 1–8.
    pub enrollment_priority: u8,
    pub distance_miles: Option<f64>,
    /// Set by preprocessing (distance discretization).
    pub distance_level: Option<DistanceLevel>,
    pub agent_orange: bool,
    pub pow: bool,
    pub radiation: bool,
    pub veteran: bool,
    pub drg: String,
    /// Hierarchical condition categories assigned to the stay.
    pub hcc_codes: BTreeSet<String>,
    /// Percentile 0–99.
    pub can_score: Option<u8>,
    pub past_year_hospitalizations: u32,
    /// How many times this patient had already been readmitted.
    pub sequence: u32,
    pub charlson_index: Option<f64>,
    pub comorbidity_flags: ComorbidityFlags,
}

/// One hospitalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub record_id: String,
    pub patient_id: String,
    pub facility: Facility,
    pub admit_time: NaiveDateTime,
    pub discharge_time: NaiveDateTime,
    pub cohort: Cohort,
    pub principal_dx: String,
    pub secondary_dx: Vec<String>,
    pub procedures: Vec<String>,
    pub discharge_status: DischargeStatus,
    pub ward_type: WardType,
    pub charge: f64,
    pub covariates: CovariateVector,
}

impl AdmissionRecord {
    /// Days from `prior`'s discharge to this record's admission.
    pub fn gap_days_after(&self, prior: &AdmissionRecord) -> f64 {
        (self.admit_time - prior.discharge_time).num_minutes() as f64 / 1440.0
    }

    /// Length of stay in days at minute resolution.
    pub fn stay_days(&self) -> f64 {
        (self.discharge_time - self.admit_time).num_minutes() as f64 / 1440.0
    }

    /// Principal plus secondary diagnoses.
    pub fn all_dx(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.principal_dx.as_str())
            .chain(self.secondary_dx.iter().map(String::as_str))
    }
}
