//! Record file ingest with row-level diagnostics.
//!
//! Two interchangeable formats carry the same flat field names: delimited
//! text with a header row, and one JSON object per line. The column list is
//! published in `docs/record_schema.md`. Rows that fail validation are routed
//! to a rejects report with exactly one primary reason code; ingest only
//! fails outright when the file is unreadable, a column is unknown, or every
//! row rejects.

use super::{
    AdmissionRecord, AdmissionSource, Cohort, ComorbidityFlags, CovariateVector, DischargeStatus,
    DistanceLevel, Facility, Insurance, MaritalStatus, Race, Sex, WardType, TIME_FORMAT,
};
use crate::error::{CoreError, Result};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

/// Record file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    /// Decide from the file extension (`.jsonl`/`.ndjson` vs everything else).
    #[default]
    Auto,
    Csv,
    JsonLines,
}

/// Ingest-time validation options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaOptions {
    pub format: FileFormat,
    /// Reject hospitalizations charged outside `[charge_min, charge_max]`.
    pub enforce_charge_bounds: bool,
    pub charge_min: f64,
    pub charge_max: f64,
    /// Reject records with implausible home-to-facility distances.
    pub enforce_distance_bound: bool,
    pub distance_max_miles: f64,
}

impl Default for SchemaOptions {
    fn default() -> Self {
        SchemaOptions {
            format: FileFormat::Auto,
            enforce_charge_bounds: true,
            charge_min: 200.0,
            charge_max: 4_000_000.0,
            enforce_distance_bound: true,
            distance_max_miles: 3000.0,
        }
    }
}

/// One rejected input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason_code: String,
    pub detail: String,
}

/// Ingest outcome: parsed records plus the rejects report.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub records: Vec<AdmissionRecord>,
    pub rejects: Vec<RejectedRow>,
    pub rows_read: usize,
}

/// Flat exchange form of a record; field names match the file columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatRecord {
    pub record_id: String,
    pub patient_id: String,
    pub facility: Facility,
    pub admit_time: String,
    pub discharge_time: String,
    pub cohort: Cohort,
    pub principal_dx: String,
    #[serde(default)]
    pub secondary_dx: Vec<String>,
    #[serde(default)]
    pub procedures: Vec<String>,
    pub discharge_status: DischargeStatus,
    pub ward_type: WardType,
    pub charge: f64,
    pub age: u32,
    pub sex: Sex,
    pub race: Race,
    pub marital_status: MaritalStatus,
    pub insurance: Insurance,
    #[serde(default)]
    pub income: Option<f64>,
    pub admission_source: AdmissionSource,
    pub enrollment_priority: u8,
    #[serde(default)]
    pub distance_miles: Option<f64>,
    #[serde(default)]
    pub distance_level: Option<DistanceLevel>,
    pub agent_orange: bool,
    pub pow: bool,
    pub radiation: bool,
    pub veteran: bool,
    pub drg: String,
    #[serde(default)]
    pub hcc_codes: Vec<String>,
    #[serde(default)]
    pub can_score: Option<u8>,
    pub past_year_hospitalizations: u32,
    pub sequence: u32,
    #[serde(default)]
    pub charlson_index: Option<f64>,
    pub comorb_cad: bool,
    pub comorb_heart_failure: bool,
    pub comorb_vascular: bool,
    pub comorb_cardiorespiratory: bool,
    pub comorb_pneumonia: bool,
    pub comorb_atrial_fibrillation: bool,
    pub comorb_anemia: bool,
    pub comorb_diabetes: bool,
    pub comorb_copd: bool,
    pub comorb_chronic_bronchitis: bool,
    pub comorb_malignant_neoplasm: bool,
    pub comorb_mental_disorder: bool,
    pub comorb_substance_abuse: bool,
}

/// Column order for delimited output; reading accepts any column order.
pub const CSV_COLUMNS: [&str; 45] = [
    "record_id",
    "patient_id",
    "facility",
    "admit_time",
    "discharge_time",
    "cohort",
    "principal_dx",
    "secondary_dx",
    "procedures",
    "discharge_status",
    "ward_type",
    "charge",
    "age",
    "sex",
    "race",
    "marital_status",
    "insurance",
    "income",
    "admission_source",
    "enrollment_priority",
    "distance_miles",
    "distance_level",
    "agent_orange",
    "pow",
    "radiation",
    "veteran",
    "drg",
    "hcc_codes",
    "can_score",
    "past_year_hospitalizations",
    "sequence",
    "charlson_index",
    "comorb_cad",
    "comorb_heart_failure",
    "comorb_vascular",
    "comorb_cardiorespiratory",
    "comorb_pneumonia",
    "comorb_atrial_fibrillation",
    "comorb_anemia",
    "comorb_diabetes",
    "comorb_copd",
    "comorb_chronic_bronchitis",
    "comorb_malignant_neoplasm",
    "comorb_mental_disorder",
    "comorb_substance_abuse",
];

impl FlatRecord {
    pub fn from_record(record: &AdmissionRecord) -> Self {
        let c = &record.covariates;
        FlatRecord {
            record_id: record.record_id.clone(),
            patient_id: record.patient_id.clone(),
            facility: record.facility,
            admit_time: record.admit_time.format(TIME_FORMAT).to_string(),
            discharge_time: record.discharge_time.format(TIME_FORMAT).to_string(),
            cohort: record.cohort,
            principal_dx: record.principal_dx.clone(),
            secondary_dx: record.secondary_dx.clone(),
            procedures: record.procedures.clone(),
            discharge_status: record.discharge_status,
            ward_type: record.ward_type,
            charge: record.charge,
            age: c.age,
            sex: c.sex,
            race: c.race,
            marital_status: c.marital_status,
            insurance: c.insurance,
            income: c.income,
            admission_source: c.admission_source,
            enrollment_priority: c.enrollment_priority,
            distance_miles: c.distance_miles,
            distance_level: c.distance_level,
            agent_orange: c.agent_orange,
            pow: c.pow,
            radiation: c.radiation,
            veteran: c.veteran,
            drg: c.drg.clone(),
            hcc_codes: c.hcc_codes.iter().cloned().collect(),
            can_score: c.can_score,
            past_year_hospitalizations: c.past_year_hospitalizations,
            sequence: c.sequence,
            charlson_index: c.charlson_index,
            comorb_cad: c.comorbidity_flags.cad,
            comorb_heart_failure: c.comorbidity_flags.heart_failure,
            comorb_vascular: c.comorbidity_flags.vascular,
            comorb_cardiorespiratory: c.comorbidity_flags.cardiorespiratory,
            comorb_pneumonia: c.comorbidity_flags.pneumonia,
            comorb_atrial_fibrillation: c.comorbidity_flags.atrial_fibrillation,
            comorb_anemia: c.comorbidity_flags.anemia,
            comorb_diabetes: c.comorbidity_flags.diabetes,
            comorb_copd: c.comorbidity_flags.copd,
            comorb_chronic_bronchitis: c.comorbidity_flags.chronic_bronchitis,
            comorb_malignant_neoplasm: c.comorbidity_flags.malignant_neoplasm,
            comorb_mental_disorder: c.comorbidity_flags.mental_disorder,
            comorb_substance_abuse: c.comorbidity_flags.substance_abuse,
        }
    }
}

enum RowError {
    Reject { reason: &'static str, detail: String },
}

impl RowError {
    fn parse(detail: impl Into<String>) -> Self {
        RowError::Reject {
            reason: "parse",
            detail: detail.into(),
        }
    }

    fn reject(reason: &'static str, detail: impl Into<String>) -> Self {
        RowError::Reject {
            reason,
            detail: detail.into(),
        }
    }
}

/// Validate a flat record and derive computed fields.
fn validate(
    flat: FlatRecord,
    options: &SchemaOptions,
    seen_ids: &mut BTreeSet<String>,
) -> std::result::Result<AdmissionRecord, RowError> {
    if flat.patient_id.trim().is_empty() {
        return Err(RowError::reject("empty_patient_id", "patient_id is empty"));
    }
    if flat.record_id.trim().is_empty() {
        return Err(RowError::reject("empty_record_id", "record_id is empty"));
    }
    if !seen_ids.insert(flat.record_id.clone()) {
        return Err(RowError::reject(
            "duplicate_record_id",
            format!("record_id {} already seen", flat.record_id),
        ));
    }
    let admit_time = NaiveDateTime::parse_from_str(&flat.admit_time, TIME_FORMAT)
        .map_err(|e| RowError::parse(format!("admit_time: {e}")))?;
    let discharge_time = NaiveDateTime::parse_from_str(&flat.discharge_time, TIME_FORMAT)
        .map_err(|e| RowError::parse(format!("discharge_time: {e}")))?;
    if discharge_time < admit_time {
        return Err(RowError::reject(
            "date_order",
            format!(
                "discharge {} precedes admission {}",
                flat.discharge_time, flat.admit_time
            ),
        ));
    }
    if options.enforce_charge_bounds
        && (flat.charge < options.charge_min || flat.charge > options.charge_max)
    {
        return Err(RowError::reject(
            "charge_bounds",
            format!(
                "charge {} outside [{}, {}]",
                flat.charge, options.charge_min, options.charge_max
            ),
        ));
    }
    if options.enforce_distance_bound {
        if let Some(d) = flat.distance_miles {
            if d > options.distance_max_miles {
                return Err(RowError::reject(
                    "distance_bounds",
                    format!("distance {d} exceeds {}", options.distance_max_miles),
                ));
            }
        }
    }
    if let Some(d) = flat.distance_miles {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(RowError::reject(
                "bad_value",
                format!("distance_miles {d} is negative or not finite"),
            ));
        }
    }
    if let Some(score) = flat.can_score {
        if score > 99 {
            return Err(RowError::reject(
                "bad_value",
                format!("can_score {score} outside 0..=99"),
            ));
        }
    }
    if !(1..=8).contains(&flat.enrollment_priority) {
        return Err(RowError::reject(
            "bad_value",
            format!("enrollment_priority {} outside 1..=8", flat.enrollment_priority),
        ));
    }
    let length_of_stay = (discharge_time - admit_time).num_minutes() as f64 / 1440.0;
    Ok(AdmissionRecord {
        record_id: flat.record_id,
        patient_id: flat.patient_id,
        facility: flat.facility,
        admit_time,
        discharge_time,
        cohort: flat.cohort,
        principal_dx: flat.principal_dx,
        secondary_dx: flat.secondary_dx,
        procedures: flat.procedures,
        discharge_status: flat.discharge_status,
        ward_type: flat.ward_type,
        charge: flat.charge,
        covariates: CovariateVector {
            age: flat.age,
            sex: flat.sex,
            race: flat.race,
            marital_status: flat.marital_status,
            insurance: flat.insurance,
            income: flat.income,
            length_of_stay,
            admission_source: flat.admission_source,
            enrollment_priority: flat.enrollment_priority,
            distance_miles: flat.distance_miles,
            distance_level: flat.distance_level,
            agent_orange: flat.agent_orange,
            pow: flat.pow,
            radiation: flat.radiation,
            veteran: flat.veteran,
            drg: flat.drg,
            hcc_codes: flat.hcc_codes.into_iter().collect(),
            can_score: flat.can_score,
            past_year_hospitalizations: flat.past_year_hospitalizations,
            sequence: flat.sequence,
            charlson_index: flat.charlson_index,
            comorbidity_flags: ComorbidityFlags {
                cad: flat.comorb_cad,
                heart_failure: flat.comorb_heart_failure,
                vascular: flat.comorb_vascular,
                cardiorespiratory: flat.comorb_cardiorespiratory,
                pneumonia: flat.comorb_pneumonia,
                atrial_fibrillation: flat.comorb_atrial_fibrillation,
                anemia: flat.comorb_anemia,
                diabetes: flat.comorb_diabetes,
                copd: flat.comorb_copd,
                chronic_bronchitis: flat.comorb_chronic_bronchitis,
                malignant_neoplasm: flat.comorb_malignant_neoplasm,
                mental_disorder: flat.comorb_mental_disorder,
                substance_abuse: flat.comorb_substance_abuse,
            },
        },
    })
}

fn detect_format(path: &Path, options: &SchemaOptions) -> FileFormat {
    match options.format {
        FileFormat::Auto => match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => FileFormat::JsonLines,
            _ => FileFormat::Csv,
        },
        other => other,
    }
}

/// Ingest a record file, collecting per-row rejects.
pub fn ingest(path: &Path, options: &SchemaOptions) -> Result<IngestReport> {
    let display = path.display().to_string();
    let flats: Vec<std::result::Result<FlatRecord, RowError>> =
        match detect_format(path, options) {
            FileFormat::JsonLines => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CoreError::io(display.clone(), e))?;
                text.lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|line| {
                        serde_json::from_str::<FlatRecord>(line)
                            .map_err(|e| RowError::parse(e.to_string()))
                    })
                    .collect()
            }
            _ => read_csv_rows(path, &display)?,
        };

    let rows_read = flats.len();
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (i, flat) in flats.into_iter().enumerate() {
        let row = i + 1;
        let outcome = flat.and_then(|f| validate(f, options, &mut seen_ids));
        match outcome {
            Ok(record) => records.push(record),
            Err(RowError::Reject { reason, detail }) => rejects.push(RejectedRow {
                row,
                reason_code: reason.to_string(),
                detail,
            }),
        }
    }
    if rows_read > 0 && records.is_empty() {
        return Err(CoreError::format(
            display,
            format!("all {rows_read} rows rejected"),
        ));
    }
    Ok(IngestReport {
        records,
        rejects,
        rows_read,
    })
}

fn read_csv_rows(
    path: &Path,
    display: &str,
) -> Result<Vec<std::result::Result<FlatRecord, RowError>>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CoreError::format(display, e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CoreError::format(display, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    for h in &headers {
        if !CSV_COLUMNS.contains(&h.as_str()) {
            return Err(CoreError::format(display, format!("unknown column: {h}")));
        }
    }
    for required in CSV_COLUMNS {
        if !headers.iter().any(|h| h == required) {
            return Err(CoreError::format(
                display,
                format!("missing column: {required}"),
            ));
        }
    }
    let index: std::collections::BTreeMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();

    let mut rows = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rows.push(Err(RowError::parse(e.to_string())));
                continue;
            }
        };
        rows.push(parse_csv_row(&row, &index));
    }
    Ok(rows)
}

fn parse_csv_row(
    row: &csv::StringRecord,
    index: &std::collections::BTreeMap<&str, usize>,
) -> std::result::Result<FlatRecord, RowError> {
    let cell = |name: &str| -> &str { row.get(index[name]).unwrap_or("").trim() };
    fn required<T, F: Fn(&str) -> Option<T>>(
        raw: &str,
        name: &str,
        parse: F,
    ) -> std::result::Result<T, RowError> {
        if raw.is_empty() {
            return Err(RowError::parse(format!("{name}: empty required field")));
        }
        parse(raw).ok_or_else(|| RowError::parse(format!("{name}: cannot parse {raw:?}")))
    }
    fn optional<T, F: Fn(&str) -> Option<T>>(
        raw: &str,
        name: &str,
        parse: F,
    ) -> std::result::Result<Option<T>, RowError> {
        if raw.is_empty() {
            return Ok(None);
        }
        parse(raw)
            .map(Some)
            .ok_or_else(|| RowError::parse(format!("{name}: cannot parse {raw:?}")))
    }
    fn list(raw: &str) -> Vec<String> {
        raw.split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }
    let boolean = |s: &str| match s {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    };

    Ok(FlatRecord {
        record_id: cell("record_id").to_string(),
        patient_id: cell("patient_id").to_string(),
        facility: required(cell("facility"), "facility", Facility::parse)?,
        admit_time: cell("admit_time").to_string(),
        discharge_time: cell("discharge_time").to_string(),
        cohort: required(cell("cohort"), "cohort", Cohort::parse)?,
        principal_dx: cell("principal_dx").to_string(),
        secondary_dx: list(cell("secondary_dx")),
        procedures: list(cell("procedures")),
        discharge_status: required(
            cell("discharge_status"),
            "discharge_status",
            DischargeStatus::parse,
        )?,
        ward_type: required(cell("ward_type"), "ward_type", WardType::parse)?,
        charge: required(cell("charge"), "charge", |s| s.parse().ok())?,
        age: required(cell("age"), "age", |s| s.parse().ok())?,
        sex: required(cell("sex"), "sex", Sex::parse)?,
        race: required(cell("race"), "race", Race::parse)?,
        marital_status: required(
            cell("marital_status"),
            "marital_status",
            MaritalStatus::parse,
        )?,
        insurance: required(cell("insurance"), "insurance", Insurance::parse)?,
        income: optional(cell("income"), "income", |s| s.parse().ok())?,
        admission_source: required(
            cell("admission_source"),
            "admission_source",
            AdmissionSource::parse,
        )?,
        enrollment_priority: required(cell("enrollment_priority"), "enrollment_priority", |s| {
            s.parse().ok()
        })?,
        distance_miles: optional(cell("distance_miles"), "distance_miles", |s| s.parse().ok())?,
        distance_level: optional(cell("distance_level"), "distance_level", DistanceLevel::parse)?,
        agent_orange: required(cell("agent_orange"), "agent_orange", boolean)?,
        pow: required(cell("pow"), "pow", boolean)?,
        radiation: required(cell("radiation"), "radiation", boolean)?,
        veteran: required(cell("veteran"), "veteran", boolean)?,
        drg: cell("drg").to_string(),
        hcc_codes: list(cell("hcc_codes")),
        can_score: optional(cell("can_score"), "can_score", |s| s.parse().ok())?,
        past_year_hospitalizations: required(
            cell("past_year_hospitalizations"),
            "past_year_hospitalizations",
            |s| s.parse().ok(),
        )?,
        sequence: required(cell("sequence"), "sequence", |s| s.parse().ok())?,
        charlson_index: optional(cell("charlson_index"), "charlson_index", |s| s.parse().ok())?,
        comorb_cad: required(cell("comorb_cad"), "comorb_cad", boolean)?,
        comorb_heart_failure: required(cell("comorb_heart_failure"), "comorb_heart_failure", boolean)?,
        comorb_vascular: required(cell("comorb_vascular"), "comorb_vascular", boolean)?,
        comorb_cardiorespiratory: required(
            cell("comorb_cardiorespiratory"),
            "comorb_cardiorespiratory",
            boolean,
        )?,
        comorb_pneumonia: required(cell("comorb_pneumonia"), "comorb_pneumonia", boolean)?,
        comorb_atrial_fibrillation: required(
            cell("comorb_atrial_fibrillation"),
            "comorb_atrial_fibrillation",
            boolean,
        )?,
        comorb_anemia: required(cell("comorb_anemia"), "comorb_anemia", boolean)?,
        comorb_diabetes: required(cell("comorb_diabetes"), "comorb_diabetes", boolean)?,
        comorb_copd: required(cell("comorb_copd"), "comorb_copd", boolean)?,
        comorb_chronic_bronchitis: required(
            cell("comorb_chronic_bronchitis"),
            "comorb_chronic_bronchitis",
            boolean,
        )?,
        comorb_malignant_neoplasm: required(
            cell("comorb_malignant_neoplasm"),
            "comorb_malignant_neoplasm",
            boolean,
        )?,
        comorb_mental_disorder: required(
            cell("comorb_mental_disorder"),
            "comorb_mental_disorder",
            boolean,
        )?,
        comorb_substance_abuse: required(
            cell("comorb_substance_abuse"),
            "comorb_substance_abuse",
            boolean,
        )?,
    })
}

fn csv_value(flat: &FlatRecord, column: &str) -> String {
    fn opt_num<T: ToString>(v: &Option<T>) -> String {
        v.as_ref().map(T::to_string).unwrap_or_default()
    }
    match column {
        "record_id" => flat.record_id.clone(),
        "patient_id" => flat.patient_id.clone(),
        "facility" => flat.facility.to_string(),
        "admit_time" => flat.admit_time.clone(),
        "discharge_time" => flat.discharge_time.clone(),
        "cohort" => flat.cohort.to_string(),
        "principal_dx" => flat.principal_dx.clone(),
        "secondary_dx" => flat.secondary_dx.join(";"),
        "procedures" => flat.procedures.join(";"),
        "discharge_status" => flat.discharge_status.to_string(),
        "ward_type" => flat.ward_type.to_string(),
        "charge" => flat.charge.to_string(),
        "age" => flat.age.to_string(),
        "sex" => flat.sex.to_string(),
        "race" => flat.race.to_string(),
        "marital_status" => flat.marital_status.to_string(),
        "insurance" => flat.insurance.to_string(),
        "income" => opt_num(&flat.income),
        "admission_source" => flat.admission_source.to_string(),
        "enrollment_priority" => flat.enrollment_priority.to_string(),
        "distance_miles" => opt_num(&flat.distance_miles),
        "distance_level" => flat
            .distance_level
            .map(|l| l.to_string())
            .unwrap_or_default(),
        "agent_orange" => flat.agent_orange.to_string(),
        "pow" => flat.pow.to_string(),
        "radiation" => flat.radiation.to_string(),
        "veteran" => flat.veteran.to_string(),
        "drg" => flat.drg.clone(),
        "hcc_codes" => flat.hcc_codes.join(";"),
        "can_score" => opt_num(&flat.can_score),
        "past_year_hospitalizations" => flat.past_year_hospitalizations.to_string(),
        "sequence" => flat.sequence.to_string(),
        "charlson_index" => opt_num(&flat.charlson_index),
        "comorb_cad" => flat.comorb_cad.to_string(),
        "comorb_heart_failure" => flat.comorb_heart_failure.to_string(),
        "comorb_vascular" => flat.comorb_vascular.to_string(),
        "comorb_cardiorespiratory" => flat.comorb_cardiorespiratory.to_string(),
        "comorb_pneumonia" => flat.comorb_pneumonia.to_string(),
        "comorb_atrial_fibrillation" => flat.comorb_atrial_fibrillation.to_string(),
        "comorb_anemia" => flat.comorb_anemia.to_string(),
        "comorb_diabetes" => flat.comorb_diabetes.to_string(),
        "comorb_copd" => flat.comorb_copd.to_string(),
        "comorb_chronic_bronchitis" => flat.comorb_chronic_bronchitis.to_string(),
        "comorb_malignant_neoplasm" => flat.comorb_malignant_neoplasm.to_string(),
        "comorb_mental_disorder" => flat.comorb_mental_disorder.to_string(),
        "comorb_substance_abuse" => flat.comorb_substance_abuse.to_string(),
        other => panic!("unknown column {other}"),
    }
}

/// Write records as delimited text in the published column order.
pub fn write_csv(path: &Path, records: &[AdmissionRecord]) -> Result<()> {
    let display = path.display().to_string();
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CoreError::format(display.clone(), e.to_string()))?;
    writer
        .write_record(CSV_COLUMNS)
        .map_err(|e| CoreError::format(display.clone(), e.to_string()))?;
    for record in records {
        let flat = FlatRecord::from_record(record);
        let row: Vec<String> = CSV_COLUMNS.iter().map(|c| csv_value(&flat, c)).collect();
        writer
            .write_record(&row)
            .map_err(|e| CoreError::format(display.clone(), e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| CoreError::io(display, e))?;
    Ok(())
}

/// Write records as one JSON object per line.
pub fn write_jsonl(path: &Path, records: &[AdmissionRecord]) -> Result<()> {
    let display = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(display.clone(), e))?;
    for record in records {
        let flat = FlatRecord::from_record(record);
        let line = serde_json::to_string(&flat)
            .map_err(|e| CoreError::format(display.clone(), e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| CoreError::io(display.clone(), e))?;
    }
    Ok(())
}

/// Write the rejects report as JSON lines `{row, reason_code, detail}`.
pub fn write_rejects_jsonl(path: &Path, rejects: &[RejectedRow]) -> Result<()> {
    let display = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(display.clone(), e))?;
    for reject in rejects {
        let line = serde_json::to_string(reject)
            .map_err(|e| CoreError::format(display.clone(), e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| CoreError::io(display.clone(), e))?;
    }
    Ok(())
}
