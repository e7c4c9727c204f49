//! Synthetic cohort generation with known ground truth.
//!
//! Patients receive covariates drawn from marginals shaped like the study
//! population; each hospitalization's time to readmission is sampled from the
//! Coxian model selected by the first matching regime rule. A readmission
//! record is materialized when the sampled sojourn lands inside the horizon,
//! otherwise the stay is censored. The sidecar stores every record's true
//! regime, sampled sojourn, and censoring flag.

use crate::error::{CoreError, Result};
use crate::phase_type::CoxianPh;
use crate::records::{
    AdmissionRecord, AdmissionSource, Cohort, ComorbidityFlags, CovariateVector, DischargeStatus,
    Facility, Insurance, MaritalStatus, Race, Sex, WardType,
};
use crate::seed::derive_seed;
use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Predicate selecting which generating model a record uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RegimePredicate {
    Always,
    AgentOrange { value: bool },
    Radiation { value: bool },
    ComorbidityFlag { name: String, value: bool },
    CanScoreAtLeast { threshold: u8 },
    Cohort { cohort: Cohort },
}

impl RegimePredicate {
    fn matches(&self, covariates: &CovariateVector, cohort: Cohort) -> bool {
        match self {
            RegimePredicate::Always => true,
            RegimePredicate::AgentOrange { value } => covariates.agent_orange == *value,
            RegimePredicate::Radiation { value } => covariates.radiation == *value,
            RegimePredicate::ComorbidityFlag { name, value } => {
                covariates.comorbidity_flags.get(name) == Some(*value)
            }
            RegimePredicate::CanScoreAtLeast { threshold } => {
                covariates.can_score.map(|s| s >= *threshold).unwrap_or(false)
            }
            RegimePredicate::Cohort { cohort: c } => cohort == *c,
        }
    }
}

/// One regime: a predicate plus the generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRule {
    pub regime_id: String,
    pub predicate: RegimePredicate,
    pub model: CoxianPh,
}

/// Covariate marginal knobs (rough Table 2–3 shapes by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub male_fraction: f64,
    pub agent_orange_rate: f64,
    pub pow_rate: f64,
    pub radiation_rate: f64,
    pub veteran_rate: f64,
    pub comorbidity_rate: f64,
    /// Fraction of income/CAN/Charlson/distance values left missing.
    pub missing_rate: f64,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        CovariateSpec {
            male_fraction: 0.9,
            agent_orange_rate: 0.05,
            pow_rate: 0.02,
            radiation_rate: 0.015,
            veteran_rate: 0.99,
            comorbidity_rate: 0.18,
            missing_rate: 0.05,
        }
    }
}

/// Full generator specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_patients: usize,
    /// Mean index admissions per patient (at least 1).
    pub mean_admissions: f64,
    /// Censoring horizon in days.
    pub horizon_days: f64,
    pub seed: u64,
    /// First matching rule wins; the last rule must be a catch-all.
    pub regimes: Vec<RegimeRule>,
    /// Longest readmission chain generated per index admission.
    pub max_chain: usize,
    pub covariates: CovariateSpec,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(CoreError::Config("n_patients must be positive".into()));
        }
        if self.mean_admissions < 1.0 {
            return Err(CoreError::Config("mean_admissions must be at least 1".into()));
        }
        if !(self.horizon_days > 0.0) {
            return Err(CoreError::Config("horizon_days must be positive".into()));
        }
        match self.regimes.last() {
            Some(last) if last.predicate == RegimePredicate::Always => Ok(()),
            _ => Err(CoreError::Config(
                "regime map must end with a catch-all (predicate kind \"always\")".into(),
            )),
        }
    }

    /// Two-regime demonstration spec: a fast readmitter population keyed on
    /// Agent Orange exposure against a slow background.
    pub fn two_regime_example(n_patients: usize, seed: u64) -> Self {
        let fast = CoxianPh::new(1, 1, &[0.4], 0.1, 0.8 / 3.0).unwrap(); // mean 5 days
        let slow = CoxianPh::new(1, 1, &[1.0 / 30.0], 1e-9, 1.0 / 30.0).unwrap(); // mean ~60 days
        CohortSpec {
            n_patients,
            mean_admissions: 1.3,
            horizon_days: 30.0,
            seed,
            regimes: vec![
                RegimeRule {
                    regime_id: "fast".into(),
                    predicate: RegimePredicate::AgentOrange { value: true },
                    model: fast,
                },
                RegimeRule {
                    regime_id: "slow".into(),
                    predicate: RegimePredicate::Always,
                    model: slow,
                },
            ],
            max_chain: 6,
            covariates: CovariateSpec {
                agent_orange_rate: 0.5,
                missing_rate: 0.0,
                ..CovariateSpec::default()
            },
        }
    }
}

/// Ground-truth sidecar line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub record_id: String,
    pub patient_id: String,
    pub regime_id: String,
    /// The sampled sojourn, even when it exceeded the horizon.
    pub sampled_days: f64,
    pub censored: bool,
}

fn weighted<T: Copy, R: Rng + ?Sized>(rng: &mut R, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut draw = rng.random::<f64>() * total;
    for &(item, w) in items {
        if draw < w {
            return item;
        }
        draw -= w;
    }
    items.last().unwrap().0
}

const COHORT_DX: [(Cohort, &[&str]); 4] = [
    (Cohort::Hf, &["HF428.0", "HF428.1"]),
    (Cohort::Ami, &["AMI410.0", "AMI410.1"]),
    (Cohort::Pn, &["PN486.0"]),
    (Cohort::Copd, &["COPD491.0", "COPD493.2"]),
];

fn cohort_category(cohort: Cohort) -> &'static str {
    match cohort {
        Cohort::Hf => "C-HF",
        Cohort::Ami => "C-AMI",
        Cohort::Pn => "C-PN",
        Cohort::Copd => "C-COPD",
        Cohort::Other => "C-OTHER",
    }
}

fn base_time() -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2011, 10, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

fn add_days(t: NaiveDateTime, days: f64) -> NaiveDateTime {
    t + chrono::Duration::minutes((days * 1440.0).round() as i64)
}

struct PatientSampler<'a> {
    spec: &'a CohortSpec,
    rng: ChaCha12Rng,
}

impl PatientSampler<'_> {
    fn maybe_missing<T>(&mut self, value: T) -> Option<T> {
        if self.rng.random::<f64>() < self.spec.covariates.missing_rate {
            None
        } else {
            Some(value)
        }
    }

    fn covariates(&mut self, cohort: Cohort) -> CovariateVector {
        let cs = &self.spec.covariates;
        let rng = &mut self.rng;
        let age = Normal::<f64>::new(68.0, 8.0)
            .unwrap()
            .sample(rng)
            .round()
            .clamp(25.0, 99.0) as u32;
        let sex = if rng.random::<f64>() < cs.male_fraction {
            Sex::Male
        } else {
            Sex::Female
        };
        let race = weighted(
            rng,
            &[(Race::Black, 0.64), (Race::White, 0.30), (Race::Other, 0.06)],
        );
        let marital_status = weighted(
            rng,
            &[
                (MaritalStatus::CurrentSpouse, 0.55),
                (MaritalStatus::NeverMarried, 0.22),
                (MaritalStatus::PreviouslyMarried, 0.23),
            ],
        );
        let insurance = weighted(
            rng,
            &[
                (Insurance::Medicare, 0.52),
                (Insurance::Medicaid, 0.16),
                (Insurance::Private, 0.09),
                (Insurance::None, 0.23),
            ],
        );
        let admission_source = weighted(
            rng,
            &[
                (AdmissionSource::Home, 0.55),
                (AdmissionSource::Outpatient, 0.27),
                (AdmissionSource::Transfer, 0.02),
                (AdmissionSource::Nhcu, 0.05),
                (AdmissionSource::Domiciliary, 0.015),
                (AdmissionSource::Other, 0.095),
            ],
        );
        let enrollment_priority = weighted(
            rng,
            &[
                (1u8, 0.09),
                (2, 0.10),
                (3, 0.19),
                (4, 0.13),
                (5, 0.27),
                (6, 0.09),
                (7, 0.05),
                (8, 0.08),
            ],
        );
        // Distance is multimodal: near-city mass, a suburban bump, and a
        // rural tail.
        let distance_raw = match weighted(rng, &[(0u8, 0.62), (1, 0.31), (2, 0.07)]) {
            0 => Normal::<f64>::new(10.0, 6.0).unwrap().sample(rng),
            1 => Normal::<f64>::new(35.0, 7.0).unwrap().sample(rng),
            _ => Normal::<f64>::new(75.0, 18.0).unwrap().sample(rng),
        }
        .clamp(0.1, 250.0);
        let can_raw = Normal::<f64>::new(67.0, 12.0)
            .unwrap()
            .sample(rng)
            .round()
            .clamp(0.0, 99.0) as u8;
        let charlson_raw = Normal::<f64>::new(3.5, 2.0).unwrap().sample(rng).max(0.0);
        let income_raw = LogNormal::<f64>::new(10.2, 0.6).unwrap().sample(rng);
        let mut flags = ComorbidityFlags::default();
        let rate = cs.comorbidity_rate;
        flags.cad = rng.random::<f64>() < rate;
        flags.heart_failure = rng.random::<f64>() < rate || cohort == Cohort::Hf;
        flags.vascular = rng.random::<f64>() < rate;
        flags.cardiorespiratory = rng.random::<f64>() < rate;
        flags.pneumonia = rng.random::<f64>() < rate || cohort == Cohort::Pn;
        flags.atrial_fibrillation = rng.random::<f64>() < rate;
        flags.anemia = rng.random::<f64>() < rate;
        flags.diabetes = rng.random::<f64>() < rate * 1.5;
        flags.copd = rng.random::<f64>() < rate || cohort == Cohort::Copd;
        flags.chronic_bronchitis = rng.random::<f64>() < rate;
        flags.malignant_neoplasm = rng.random::<f64>() < rate * 0.4;
        flags.mental_disorder = rng.random::<f64>() < rate;
        flags.substance_abuse = rng.random::<f64>() < rate;
        let mut hcc = std::collections::BTreeSet::new();
        hcc.insert(cohort_category(cohort).to_string());
        if rng.random::<f64>() < 0.3 {
            hcc.insert("C-DIAB".to_string());
        }
        if rng.random::<f64>() < 0.2 {
            hcc.insert("C-UTI".to_string());
        }
        let drg = format!("DRG{:03}", self.rng.random_range(1..=300));
        CovariateVector {
            age,
            sex,
            race,
            marital_status,
            insurance,
            income: self.maybe_missing(income_raw),
            length_of_stay: 0.0,
            admission_source,
            enrollment_priority,
            distance_miles: self.maybe_missing(distance_raw),
            distance_level: None,
            agent_orange: self.rng.random::<f64>() < cs.agent_orange_rate,
            pow: self.rng.random::<f64>() < cs.pow_rate,
            radiation: self.rng.random::<f64>() < cs.radiation_rate,
            veteran: self.rng.random::<f64>() < cs.veteran_rate,
            drg,
            hcc_codes: hcc,
            can_score: self.maybe_missing(can_raw),
            past_year_hospitalizations: Poisson::<f64>::new(1.2).unwrap().sample(&mut self.rng) as u32,
            sequence: 0,
            charlson_index: self.maybe_missing(charlson_raw),
            comorbidity_flags: flags,
        }
    }
}

fn regime_for<'a>(
    spec: &'a CohortSpec,
    covariates: &CovariateVector,
    cohort: Cohort,
) -> &'a RegimeRule {
    spec.regimes
        .iter()
        .find(|r| r.predicate.matches(covariates, cohort))
        .expect("validated regime map is total")
}

/// Generate a synthetic dataset and its ground-truth sidecar.
pub fn generate(spec: &CohortSpec) -> Result<(Vec<AdmissionRecord>, Vec<TruthEntry>)> {
    spec.validate()?;
    let per_patient: Vec<(Vec<AdmissionRecord>, Vec<TruthEntry>)> = (0..spec.n_patients)
        .into_par_iter()
        .map(|p| generate_patient(spec, p))
        .collect();
    let mut records = Vec::new();
    let mut truth = Vec::new();
    for (r, t) in per_patient {
        records.extend(r);
        truth.extend(t);
    }
    Ok((records, truth))
}

fn generate_patient(spec: &CohortSpec, p: usize) -> (Vec<AdmissionRecord>, Vec<TruthEntry>) {
    let mut sampler = PatientSampler {
        spec,
        rng: ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, "patient", p as u64)),
    };
    let patient_id = format!("p{p:06}");
    let cohort = weighted(
        &mut sampler.rng,
        &[
            (Cohort::Hf, 0.27),
            (Cohort::Ami, 0.22),
            (Cohort::Pn, 0.27),
            (Cohort::Copd, 0.24),
        ],
    );
    let facility = weighted(
        &mut sampler.rng,
        &[
            (Facility::AnnArbor, 0.35),
            (Facility::BattleCreek, 0.2),
            (Facility::Detroit, 0.3),
            (Facility::Saginaw, 0.15),
        ],
    );
    let mut covariates = sampler.covariates(cohort);

    let extra = Poisson::<f64>::new((spec.mean_admissions - 1.0).max(1e-9))
        .unwrap()
        .sample(&mut sampler.rng) as usize;
    let n_index = 1 + extra;

    let mut records = Vec::new();
    let mut truth = Vec::new();
    let mut seq_no = 0usize;
    let mut clock = add_days(
        base_time(),
        sampler.rng.random::<f64>() * 540.0,
    );
    for _ in 0..n_index {
        let mut chain = 0usize;
        let mut is_readmission = false;
        loop {
            let regime = regime_for(spec, &covariates, cohort);
            let sampled = regime.model.sample_sojourn(&mut sampler.rng);
            let continues = sampled <= spec.horizon_days && chain < spec.max_chain;

            let record_id = format!("{patient_id}-{seq_no:03}");
            seq_no += 1;
            let los_days = LogNormal::<f64>::new(4.0f64.ln(), 0.6)
                .unwrap()
                .sample(&mut sampler.rng)
                .clamp(0.25, 45.0);
            let discharge = add_days(clock, los_days);
            let status = if continues {
                weighted(
                    &mut sampler.rng,
                    &[(DischargeStatus::Home, 0.95), (DischargeStatus::Other, 0.05)],
                )
            } else {
                weighted(
                    &mut sampler.rng,
                    &[
                        (DischargeStatus::Home, 0.92),
                        (DischargeStatus::Other, 0.03),
                        (DischargeStatus::Death, 0.02),
                        (DischargeStatus::AgainstMedicalAdvice, 0.02),
                        (DischargeStatus::TransferExternal, 0.01),
                    ],
                )
            };
            let principal_dx = if !is_readmission {
                let pool = COHORT_DX.iter().find(|(c, _)| *c == cohort).unwrap().1;
                pool[sampler.rng.random_range(0..pool.len())].to_string()
            } else {
                // Most readmissions return for the index condition; some for
                // an ambulatory-care-sensitive, mental-health, or unrelated
                // diagnosis.
                match weighted(&mut sampler.rng, &[(0u8, 0.67), (1, 0.08), (2, 0.05), (3, 0.20)]) {
                    0 => {
                        let pool = COHORT_DX.iter().find(|(c, _)| *c == cohort).unwrap().1;
                        pool[sampler.rng.random_range(0..pool.len())].to_string()
                    }
                    1 => "D-ASTHMA".to_string(),
                    2 => "D-DEPR".to_string(),
                    _ => format!("{}-UNREL", cohort_category(cohort)),
                }
            };
            let mut record_covariates = covariates.clone();
            record_covariates.length_of_stay = los_days;
            let charge = LogNormal::<f64>::new(9.6, 0.5)
                .unwrap()
                .sample(&mut sampler.rng)
                .clamp(300.0, 3_000_000.0);
            records.push(AdmissionRecord {
                record_id: record_id.clone(),
                patient_id: patient_id.clone(),
                facility,
                admit_time: clock,
                discharge_time: discharge,
                cohort,
                principal_dx,
                secondary_dx: vec![],
                procedures: vec![],
                discharge_status: status,
                ward_type: WardType::Acute,
                charge,
                covariates: record_covariates,
            });
            truth.push(TruthEntry {
                record_id,
                patient_id: patient_id.clone(),
                regime_id: regime.regime_id.clone(),
                sampled_days: sampled,
                censored: !continues,
            });

            if !continues {
                // Next index admission starts well outside the window.
                clock = add_days(
                    discharge,
                    spec.horizon_days + 1.0 + sampler.rng.random::<f64>() * 120.0,
                );
                break;
            }
            covariates.sequence += 1;
            covariates.past_year_hospitalizations += 1;
            clock = add_days(discharge, sampled.max(1.5 / 1440.0));
            chain += 1;
            is_readmission = true;
        }
    }
    (records, truth)
}

/// Write the ground-truth sidecar as JSON lines.
pub fn write_truth_jsonl(path: &std::path::Path, truth: &[TruthEntry]) -> Result<()> {
    use std::io::Write;
    let display = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(display.clone(), e))?;
    for entry in truth {
        let line = serde_json::to_string(entry)
            .map_err(|e| CoreError::format(display.clone(), e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| CoreError::io(display.clone(), e))?;
    }
    Ok(())
}
