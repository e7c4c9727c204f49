//! Shared oracle machinery for the integration tests.
//!
//! The quadrature here is deliberately independent of the library's moment
//! and likelihood code paths: it only consumes pointwise values of
//! `exp(Qt)·v`, advanced with the semigroup property so deep tails stay
//! cheap, and combines them with composite Simpson on a geometric grid.

#![allow(dead_code)]

use chrono::NaiveDateTime;
use phsf_core::phase_type::{matexp_action, CoxianPh};
use phsf_core::records::{
    AdmissionRecord, AdmissionSource, Cohort, ComorbidityFlags, CovariateVector, DischargeStatus,
    Facility, Insurance, MaritalStatus, Race, Sex, WardType,
};
use rand::Rng;

pub fn ts(s: &str) -> NaiveDateTime {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
}

/// A fully-populated heart-failure admission for fixture use.
pub fn record(id: &str, patient: &str, admit: &str, discharge: &str) -> AdmissionRecord {
    AdmissionRecord {
        record_id: id.into(),
        patient_id: patient.into(),
        facility: Facility::Detroit,
        admit_time: ts(admit),
        discharge_time: ts(discharge),
        cohort: Cohort::Hf,
        principal_dx: "HF428.0".into(),
        secondary_dx: vec!["D-GEN1".into()],
        procedures: vec![],
        discharge_status: DischargeStatus::Home,
        ward_type: WardType::Acute,
        charge: 10_500.0,
        covariates: CovariateVector {
            age: 71,
            sex: Sex::Male,
            race: Race::Black,
            marital_status: MaritalStatus::CurrentSpouse,
            insurance: Insurance::Medicare,
            income: Some(24_000.0),
            length_of_stay: (ts(discharge) - ts(admit)).num_minutes() as f64 / 1440.0,
            admission_source: AdmissionSource::Home,
            enrollment_priority: 5,
            distance_miles: Some(12.5),
            distance_level: None,
            agent_orange: false,
            pow: false,
            radiation: false,
            veteran: true,
            drg: "DRG127".into(),
            hcc_codes: ["C-HF".to_string()].into_iter().collect(),
            can_score: Some(66),
            past_year_hospitalizations: 1,
            sequence: 0,
            charlson_index: Some(3.0),
            comorbidity_flags: ComorbidityFlags {
                heart_failure: true,
                ..ComorbidityFlags::default()
            },
        },
    }
}

/// Random Coxian with order `1..=max_order` and rates log-uniform in
/// `[lo, hi]`.
pub fn random_coxian<R: Rng + ?Sized>(rng: &mut R, max_order: usize, lo: f64, hi: f64) -> CoxianPh {
    let order = rng.random_range(1..=max_order);
    let m = rng.random_range(1..=order);
    let r = order - m;
    let draw = |rng: &mut R| -> f64 {
        let u: f64 = rng.random();
        (lo.ln() + u * (hi.ln() - lo.ln())).exp()
    };
    let lambdas: Vec<f64> = (0..order - 1).map(|_| draw(rng)).collect();
    let lambda_ss = draw(rng);
    let lambda_ls = draw(rng);
    CoxianPh::new(m, r, &lambdas, lambda_ss, lambda_ls).unwrap()
}

/// Find a horizon deep enough that `S(T)` is below `tail`.
pub fn deep_horizon(ph: &CoxianPh, tail: f64) -> f64 {
    let mut t = ph.moment(1).unwrap().max(1e-3);
    while ph.survival(t).unwrap() > tail {
        t *= 1.5;
    }
    t
}

/// `∫_0^T e1ᵀ exp(Qt) v dt` by composite Simpson on a geometric grid,
/// advancing the state vector segment by segment.
pub fn simpson_ph_integral(ph: &CoxianPh, v0: &[f64], t_end: f64, segments: usize) -> f64 {
    let q = ph.q_matrix();
    let gamma = 3.0;
    let node = |j: usize| t_end * ((j as f64) / segments as f64).powf(gamma);
    let mut total = 0.0;
    let mut state = v0.to_vec();
    let mut t_prev = 0.0;
    for j in 1..=segments {
        let t_next = node(j);
        let mid = (t_prev + t_next) / 2.0;
        let f_a = state[0];
        let mid_state = matexp_action(&q, mid - t_prev, &state, 1e-14).unwrap();
        let f_m = mid_state[0];
        state = matexp_action(&q, t_next - mid, &mid_state, 1e-14).unwrap();
        let f_b = state[0];
        total += (t_next - t_prev) / 6.0 * (f_a + 4.0 * f_m + f_b);
        t_prev = t_next;
    }
    total
}

/// `∫_0^T f(t) dt` using the implementation's density values.
pub fn integral_of_density(ph: &CoxianPh, t_end: f64) -> f64 {
    simpson_ph_integral(ph, &ph.exit_vector(), t_end, 4096)
}

/// `∫_0^T S(t) dt` using the implementation's survival values.
pub fn integral_of_survival(ph: &CoxianPh, t_end: f64) -> f64 {
    let ones = vec![1.0; ph.order()];
    simpson_ph_integral(ph, &ones, t_end, 4096)
}

use phsf_core::data::{FeatureDef, FeatureKind, FeatureValue, TrainingRow, TrainingSchema, TrainingSet};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Fast readmitter model: mean sojourn 5 days.
pub fn fast_regime() -> CoxianPh {
    CoxianPh::new(1, 1, &[0.4], 0.1, 0.8 / 3.0).unwrap()
}

/// Slow readmitter model: Erlang-like, mean 60 days, ~26% inside 30 days.
pub fn slow_regime() -> CoxianPh {
    CoxianPh::new(1, 1, &[1.0 / 30.0], 1e-9, 1.0 / 30.0).unwrap()
}

/// Two-regime cohort as an encoded training set: feature 0 is the binary
/// regime key (`high_risk`), features 1–5 are binary noise, 6–10 numeric
/// noise. Patients carry 1–2 replicate records; all replicates share the
/// patient's regime.
pub fn two_regime_training_set(n_patients: usize, seed: u64) -> TrainingSet {
    let fast = fast_regime();
    let slow = slow_regime();
    let binary = |name: String| FeatureDef {
        name,
        kind: FeatureKind::Categorical {
            levels: vec!["no".into(), "yes".into()],
        },
    };
    let mut features = vec![binary("high_risk".into())];
    for i in 0..5 {
        features.push(binary(format!("noise_bin{i}")));
    }
    for i in 0..5 {
        features.push(FeatureDef {
            name: format!("noise_num{i}"),
            kind: FeatureKind::Numeric,
        });
    }
    let schema = TrainingSchema { features };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for p in 0..n_patients {
        let is_fast = rng.random::<f64>() < 0.5;
        let replicates = 1 + usize::from(rng.random::<f64>() < 0.3);
        for k in 0..replicates {
            let model = if is_fast { &fast } else { &slow };
            let t = model.sample_sojourn(&mut rng);
            let (time_days, complete) = if t <= 30.0 {
                (t.max(1e-3), true)
            } else {
                (30.0, false)
            };
            let mut values = vec![FeatureValue::Cat(u32::from(is_fast))];
            for _ in 0..5 {
                values.push(FeatureValue::Cat(u32::from(rng.random::<f64>() < 0.5)));
            }
            for _ in 0..5 {
                values.push(FeatureValue::Num(rng.random()));
            }
            rows.push(TrainingRow {
                record_id: format!("p{p}-r{k}"),
                patient_id: format!("p{p}"),
                time_days,
                complete,
                values,
            });
        }
    }
    TrainingSet::new(schema, rows).unwrap()
}

#[cfg(test)]
mod self_checks {
    use super::*;

    /// The quadrature must nail closed forms before it may judge anything.
    #[test]
    fn quadrature_matches_exponential_closed_forms() {
        for lambda in [0.01, 0.3, 7.5] {
            let ph = CoxianPh::new(1, 0, &[], lambda, 1.0).unwrap();
            let t_end = deep_horizon(&ph, 1e-11);
            let f_int = integral_of_density(&ph, t_end);
            let s_int = integral_of_survival(&ph, t_end);
            assert!((f_int - 1.0).abs() < 1e-8, "λ={lambda}: ∫f = {f_int}");
            assert!(
                (s_int - 1.0 / lambda).abs() / (1.0 / lambda) < 1e-8,
                "λ={lambda}: ∫S = {s_int}"
            );
        }
    }
}
