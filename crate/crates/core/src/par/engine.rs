//! The labeling pipeline.

use super::{
    AuditEntry, ExclusionRule, LabelOutcome, LabelReport, ParConfig, ParSeries, RateRow,
    ReasonCode, RelationCategory, Role, RuleTables,
};
use crate::error::{CoreError, Result};
use crate::records::{AdmissionRecord, Cohort, DischargeStatus, PatientTimeline, WardType};
use std::collections::BTreeMap;

/// Wards excluded wholesale by rule III.g.
const EXCLUDED_WARDS: [WardType; 6] = [
    WardType::LongTerm,
    WardType::Palliative,
    WardType::NursingHome,
    WardType::Psychiatry,
    WardType::Rehabilitation,
    WardType::Hospice,
];

/// Data-quality bounds re-checked by rule III.k.
const CHARGE_MIN: f64 = 200.0;
const CHARGE_MAX: f64 = 4_000_000.0;
const DISTANCE_MAX: f64 = 3000.0;

#[derive(Debug, Clone)]
pub(crate) struct RecordState<'a> {
    pub record: &'a AdmissionRecord,
    /// Engine-assigned cohort; `None` means eliminated at Step I.
    pub cohort: Option<Cohort>,
    /// Index of the previous surviving record of the same patient.
    pub predecessor: Option<usize>,
    /// Inside the study window, hence a potential eligible admission.
    pub in_admission: bool,
    /// Within the readmission window of its predecessor.
    pub in_readmission: bool,
    pub admission_excluded: Option<ExclusionRule>,
    pub readmission_excluded: Option<ExclusionRule>,
    /// Readmission whose reference admission was excluded.
    pub orphan: bool,
    pub relation: Option<RelationCategory>,
    /// Series reference admission (the very first admission of the chain).
    pub reference: Option<usize>,
    pub is_par: bool,
    pub override_applied: bool,
    pub forced_excluded: bool,
}

impl RecordState<'_> {
    /// Still an assessable member of the readmission set.
    pub(crate) fn active_readmission(&self) -> bool {
        self.in_readmission && !self.orphan && self.readmission_excluded.is_none()
    }
}

/// Pipeline state threaded through the labeling steps.
pub struct ParRun<'a> {
    pub(crate) states: Vec<RecordState<'a>>,
    pub(crate) audit: Vec<AuditEntry>,
    pub(crate) index_by_record_id: BTreeMap<String, usize>,
}

impl<'a> ParRun<'a> {
    pub fn record_count(&self) -> usize {
        self.states.len()
    }
}

fn assign_cohort(
    record: &AdmissionRecord,
    tables: &RuleTables,
    config: &ParConfig,
) -> Option<Cohort> {
    const ORDER: [Cohort; 4] = [Cohort::Hf, Cohort::Ami, Cohort::Pn, Cohort::Copd];
    for cohort in ORDER {
        if let Some(codes) = tables.cohort_codes.get(&cohort) {
            if codes.contains(&record.principal_dx) {
                return Some(cohort);
            }
        }
    }
    if config.use_secondary_for_cohort {
        for cohort in ORDER {
            if let Some(codes) = tables.cohort_codes.get(&cohort) {
                if record.secondary_dx.iter().any(|dx| codes.contains(dx)) {
                    return Some(cohort);
                }
            }
        }
    }
    None
}

/// Steps I–II: assign cohorts, link predecessors, and tag every surviving
/// record as an admission and/or a readmission candidate.
pub fn classify_roles<'a>(
    timelines: &'a [PatientTimeline],
    tables: &RuleTables,
    config: &ParConfig,
) -> ParRun<'a> {
    let mut states = Vec::new();
    let mut eliminated = Vec::new();
    let mut readmission_ids = Vec::new();
    for timeline in timelines {
        let mut prev: Option<usize> = None;
        for record in timeline.records() {
            let cohort = assign_cohort(record, tables, config);
            let idx = states.len();
            if cohort.is_none() {
                eliminated.push(record.record_id.clone());
                states.push(RecordState {
                    record,
                    cohort,
                    predecessor: None,
                    in_admission: false,
                    in_readmission: false,
                    admission_excluded: None,
                    readmission_excluded: None,
                    orphan: false,
                    relation: None,
                    reference: None,
                    is_par: false,
                    override_applied: false,
                    forced_excluded: false,
                });
                continue;
            }
            let in_admission = config
                .study_end
                .map(|end| record.admit_time <= end)
                .unwrap_or(true);
            let in_readmission = prev
                .map(|p| {
                    let gap = record.gap_days_after(states[p].record);
                    gap >= 0.0 && gap <= config.window_days
                })
                .unwrap_or(false);
            if in_readmission {
                readmission_ids.push(record.record_id.clone());
            }
            states.push(RecordState {
                record,
                cohort,
                predecessor: prev,
                in_admission,
                in_readmission,
                admission_excluded: None,
                readmission_excluded: None,
                orphan: false,
                relation: None,
                reference: None,
                is_par: false,
                override_applied: false,
                forced_excluded: false,
            });
            prev = Some(idx);
        }
    }
    let index_by_record_id = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.record.record_id.clone(), i))
        .collect();
    let mut audit = Vec::new();
    if !eliminated.is_empty() {
        audit.push(AuditEntry {
            step: "I".into(),
            rule: "cohort".into(),
            record_ids: eliminated,
        });
    }
    audit.push(AuditEntry {
        step: "II".into(),
        rule: "readmission_candidates".into(),
        record_ids: readmission_ids,
    });
    ParRun {
        states,
        audit,
        index_by_record_id,
    }
}

/// Where a rule applies.
struct RuleHit {
    admission: bool,
    readmission: bool,
}

fn evaluate_rule(rule: ExclusionRule, idx: usize, run: &ParRun<'_>) -> RuleHit {
    let state = &run.states[idx];
    let record = state.record;
    let none = RuleHit {
        admission: false,
        readmission: false,
    };
    let admission_only = |hit: bool| RuleHit {
        admission: hit,
        readmission: false,
    };
    let readmission_only = |hit: bool| RuleHit {
        admission: false,
        readmission: hit,
    };
    let both = |hit: bool| RuleHit {
        admission: hit,
        readmission: hit,
    };
    match rule {
        ExclusionRule::IIIa => admission_only(record.discharge_status == DischargeStatus::Death),
        ExclusionRule::IIIb => admission_only(matches!(
            record.discharge_status,
            DischargeStatus::TransferInternal | DischargeStatus::TransferExternal
        )),
        ExclusionRule::IIIc => {
            admission_only(record.discharge_status == DischargeStatus::AgainstMedicalAdvice)
        }
        ExclusionRule::IIId => match state.predecessor {
            Some(p) if state.in_readmission => {
                let gap = record.gap_days_after(run.states[p].record);
                readmission_only(gap <= 1.0)
            }
            _ => none,
        },
        ExclusionRule::IIIe => none, // needs tables; handled by caller
        ExclusionRule::IIIf => none, // needs tables; handled by caller
        ExclusionRule::IIIg => both(EXCLUDED_WARDS.contains(&record.ward_type)),
        ExclusionRule::IIIh => none, // needs tables
        ExclusionRule::IIIi => none, // needs tables
        ExclusionRule::IIIj => both(!record.covariates.veteran),
        ExclusionRule::IIIk => {
            let bad_charge = record.charge < CHARGE_MIN || record.charge > CHARGE_MAX;
            let bad_distance = record
                .covariates
                .distance_miles
                .map(|d| d > DISTANCE_MAX)
                .unwrap_or(false);
            let bad_dates = record.discharge_time < record.admit_time;
            both(bad_charge || bad_distance || bad_dates)
        }
    }
}

fn evaluate_table_rule(
    rule: ExclusionRule,
    idx: usize,
    run: &ParRun<'_>,
    tables: &RuleTables,
    config: &ParConfig,
) -> RuleHit {
    let state = &run.states[idx];
    let record = state.record;
    let none = RuleHit {
        admission: false,
        readmission: false,
    };
    match rule {
        ExclusionRule::IIIe => {
            if !state.in_readmission {
                return none;
            }
            let planned = record
                .procedures
                .iter()
                .any(|p| tables.planned_procedures.contains(p));
            let acute_follow = record
                .covariates
                .hcc_codes
                .iter()
                .any(|c| tables.acute_or_complication_categories.contains(c));
            RuleHit {
                admission: false,
                readmission: planned && !acute_follow,
            }
        }
        ExclusionRule::IIIf => {
            let Some(p) = state.predecessor else { return none };
            if !state.in_readmission || run.states[p].cohort != Some(Cohort::Ami) {
                return none;
            }
            let pci_cabg = record
                .procedures
                .iter()
                .any(|c| tables.pci_cabg_procedures.contains(c));
            if !pci_cabg {
                return none;
            }
            let exempt = if config.ami_exempt_secondary {
                record.all_dx().any(|dx| tables.ami_exempt_dx.contains(dx))
            } else {
                tables.ami_exempt_dx.contains(&record.principal_dx)
            };
            RuleHit {
                admission: false,
                readmission: !exempt,
            }
        }
        ExclusionRule::IIIh => {
            let hit = tables.high_mortality_dx.contains(&record.principal_dx);
            RuleHit {
                admission: hit,
                readmission: hit,
            }
        }
        ExclusionRule::IIIi => {
            let hit = tables.specialized_condition_dx.contains(&record.principal_dx);
            RuleHit {
                admission: hit,
                readmission: hit,
            }
        }
        _ => evaluate_rule(rule, idx, run),
    }
}

/// Step III: apply the eleven exclusion rules to their target sets.
///
/// Each rule is a pure predicate of a record and its classify-time context,
/// so the surviving sets do not depend on application order; the stored
/// reason is the first matching rule in a–k order.
pub fn apply_exclusions(run: &mut ParRun<'_>, tables: &RuleTables, config: &ParConfig) {
    for rule in ExclusionRule::ALL {
        if config.disabled_rules.contains(&rule) {
            continue;
        }
        let mut affected = Vec::new();
        for idx in 0..run.states.len() {
            if run.states[idx].cohort.is_none() {
                continue;
            }
            let hit = evaluate_table_rule(rule, idx, run, tables, config);
            let state = &mut run.states[idx];
            let mut touched = false;
            if hit.admission && state.in_admission {
                if state.admission_excluded.is_none() {
                    state.admission_excluded = Some(rule);
                }
                touched = true;
            }
            if hit.readmission && state.in_readmission {
                if state.readmission_excluded.is_none() {
                    state.readmission_excluded = Some(rule);
                }
                touched = true;
            }
            if touched {
                affected.push(state.record.record_id.clone());
            }
        }
        run.audit.push(AuditEntry {
            step: "III".into(),
            rule: rule.code().into(),
            record_ids: affected,
        });
    }
}

fn relation_for(
    readmission: &AdmissionRecord,
    index: &AdmissionRecord,
    tables: &RuleTables,
    config: &ParConfig,
) -> RelationCategory {
    if config.disable_relations {
        return RelationCategory::Unrelated;
    }
    // Va has precedence, then the mental-health/substance pair, then the
    // condition-category map with Vb..Vh in listing order.
    if tables.acsc_codes.contains(&readmission.principal_dx) {
        return RelationCategory::Va;
    }
    if tables
        .mental_substance_codes
        .contains(&readmission.principal_dx)
    {
        return if tables.mental_substance_codes.contains(&index.principal_dx) {
            RelationCategory::Vf
        } else {
            RelationCategory::Ve
        };
    }
    let mut best: Option<RelationCategory> = None;
    for index_cat in &index.covariates.hcc_codes {
        if let Some(related) = tables.clinical_relation_map.get(index_cat) {
            for readm_cat in &readmission.covariates.hcc_codes {
                if let Some(&kind) = related.get(readm_cat) {
                    let category = RelationCategory::from(kind);
                    best = Some(match best {
                        Some(current) if current <= category => current,
                        _ => category,
                    });
                }
            }
        }
    }
    best.unwrap_or(RelationCategory::Unrelated)
}

/// Step V: assign each surviving readmission a clinical relation category
/// against its series reference admission.
///
/// A readmission chained onto a PAR is assessed against the admission that
/// started the chain, never the intermediate PAR. Readmissions whose
/// reference was excluded are flagged orphans and treated as admission-only.
pub fn mark_relations(run: &mut ParRun<'_>, tables: &RuleTables, config: &ParConfig) {
    let mut orphans = Vec::new();
    for idx in 0..run.states.len() {
        if !run.states[idx].in_readmission || run.states[idx].readmission_excluded.is_some() {
            continue;
        }
        let pred = run.states[idx]
            .predecessor
            .expect("readmission candidates have a predecessor");
        let reference = if run.states[pred].is_par {
            run.states[pred]
                .reference
                .expect("PAR readmissions carry a reference")
        } else {
            pred
        };
        let ref_state = &run.states[reference];
        let valid_index = ref_state.is_par
            || (ref_state.in_admission && ref_state.admission_excluded.is_none());
        if !valid_index {
            run.states[idx].orphan = true;
            orphans.push(run.states[idx].record.record_id.clone());
            continue;
        }
        let relation = relation_for(
            run.states[idx].record,
            run.states[reference].record,
            tables,
            config,
        );
        let state = &mut run.states[idx];
        state.relation = Some(relation);
        state.reference = Some(reference);
        state.is_par = relation.is_related();
    }
    run.audit.push(AuditEntry {
        step: "V".into(),
        rule: "orphan".into(),
        record_ids: orphans,
    });
}

/// Step VII: group consecutive PARs tied to the same initiating admission.
pub fn build_series(run: &ParRun<'_>) -> Vec<ParSeries> {
    let mut by_reference: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, state) in run.states.iter().enumerate() {
        if state.is_par {
            let reference = state
                .reference
                .expect("PAR readmissions carry a reference");
            by_reference.entry(reference).or_default().push(idx);
        }
    }
    let mut series: Vec<ParSeries> = by_reference
        .into_iter()
        .map(|(reference, mut members)| {
            members.sort_by(|&a, &b| {
                let ra = run.states[a].record;
                let rb = run.states[b].record;
                (ra.admit_time, &ra.record_id).cmp(&(rb.admit_time, &rb.record_id))
            });
            let index_record = run.states[reference].record;
            let last = run.states[*members.last().unwrap()].record;
            let span_days =
                (last.admit_time - index_record.discharge_time).num_minutes() as f64 / 1440.0;
            ParSeries {
                series_id: format!("series-{}", index_record.record_id),
                index_record_id: index_record.record_id.clone(),
                par_record_ids: members
                    .iter()
                    .map(|&i| run.states[i].record.record_id.clone())
                    .collect(),
                span_days,
            }
        })
        .collect();
    series.sort_by(|a, b| a.series_id.cmp(&b.series_id));
    series
}

fn is_death_transfer_ama(status: DischargeStatus) -> bool {
    matches!(
        status,
        DischargeStatus::Death
            | DischargeStatus::TransferInternal
            | DischargeStatus::TransferExternal
            | DischargeStatus::AgainstMedicalAdvice
    )
}

/// Steps VIII–IX: reclassify unrelated readmissions, settle final roles, and
/// compute the PAR rate.
pub fn reclassify_and_rate(
    run: &mut ParRun<'_>,
    series: &[ParSeries],
    _config: &ParConfig,
) -> Result<LabelReport> {
    let mut series_of_record: BTreeMap<&str, &str> = BTreeMap::new();
    let mut cohort_of_series: BTreeMap<&str, Option<Cohort>> = BTreeMap::new();
    let mut facility_of_series: BTreeMap<&str, crate::records::Facility> = BTreeMap::new();
    for s in series {
        for id in &s.par_record_ids {
            series_of_record.insert(id, &s.series_id);
        }
        let index_idx = run.index_by_record_id[&s.index_record_id];
        cohort_of_series.insert(&s.series_id, run.states[index_idx].cohort);
        facility_of_series.insert(&s.series_id, run.states[index_idx].record.facility);
    }

    let mut reclassified = Vec::new();
    let mut outcomes = Vec::with_capacity(run.states.len());
    for state in &run.states {
        let record = state.record;
        let (role, reason) = if state.cohort.is_none() {
            (Role::Excluded, Some(ReasonCode::OutOfCohort))
        } else if state.forced_excluded {
            (Role::Excluded, Some(ReasonCode::Override))
        } else if state.is_par {
            (Role::Readmission, None)
        } else if state.active_readmission() {
            if is_death_transfer_ama(record.discharge_status) {
                let reason = state
                    .admission_excluded
                    .map(ReasonCode::Exclusion)
                    .unwrap_or(ReasonCode::StepViiiDrop);
                (Role::Excluded, Some(reason))
            } else if state.in_admission && state.admission_excluded.is_none() {
                reclassified.push(record.record_id.clone());
                (Role::EligibleAdmission, None)
            } else {
                let reason = state
                    .admission_excluded
                    .map(ReasonCode::Exclusion)
                    .unwrap_or(ReasonCode::OutsideStudyWindow);
                (Role::Excluded, Some(reason))
            }
        } else if state.in_admission && state.admission_excluded.is_none() {
            (Role::EligibleAdmission, None)
        } else {
            let reason = state
                .admission_excluded
                .or(state.readmission_excluded)
                .map(ReasonCode::Exclusion)
                .unwrap_or(ReasonCode::OutsideStudyWindow);
            (Role::Excluded, Some(reason))
        };
        outcomes.push(LabelOutcome {
            record_id: record.record_id.clone(),
            role,
            exclusion_reason: reason,
            relation_category: state.relation,
            is_par: state.is_par,
            series_id: series_of_record
                .get(record.record_id.as_str())
                .map(|s| s.to_string()),
            override_applied: state.override_applied,
        });
    }
    run.audit.push(AuditEntry {
        step: "VIII".into(),
        rule: "reclassified_to_eligible".into(),
        record_ids: reclassified,
    });

    let eligible_count = outcomes
        .iter()
        .filter(|o| o.role == Role::EligibleAdmission)
        .count();
    let par_count = outcomes.iter().filter(|o| o.is_par).count();
    if eligible_count == 0 {
        return Err(CoreError::Label(
            "PAR rate undefined: zero eligible admissions".into(),
        ));
    }
    let par_rate = series.len() as f64 / eligible_count as f64;

    // Slice eligible counts and series counts by cohort and facility; a
    // series belongs to its initiating admission's cohort and facility.
    let mut cohort_rows: BTreeMap<String, RateRow> = BTreeMap::new();
    let mut facility_rows: BTreeMap<String, RateRow> = BTreeMap::new();
    for (outcome, state) in outcomes.iter().zip(&run.states) {
        if outcome.role == Role::EligibleAdmission {
            if let Some(cohort) = state.cohort {
                cohort_rows
                    .entry(cohort.code().to_string())
                    .or_insert(RateRow {
                        eligible: 0,
                        series: 0,
                        rate: 0.0,
                    })
                    .eligible += 1;
            }
            facility_rows
                .entry(state.record.facility.code().to_string())
                .or_insert(RateRow {
                    eligible: 0,
                    series: 0,
                    rate: 0.0,
                })
                .eligible += 1;
        }
    }
    for s in series {
        if let Some(Some(cohort)) = cohort_of_series.get(s.series_id.as_str()) {
            cohort_rows
                .entry(cohort.code().to_string())
                .or_insert(RateRow {
                    eligible: 0,
                    series: 0,
                    rate: 0.0,
                })
                .series += 1;
        }
        if let Some(facility) = facility_of_series.get(s.series_id.as_str()) {
            facility_rows
                .entry(facility.code().to_string())
                .or_insert(RateRow {
                    eligible: 0,
                    series: 0,
                    rate: 0.0,
                })
                .series += 1;
        }
    }
    for row in cohort_rows.values_mut().chain(facility_rows.values_mut()) {
        row.rate = if row.eligible > 0 {
            row.series as f64 / row.eligible as f64
        } else {
            0.0
        };
    }

    Ok(LabelReport {
        outcomes,
        series: series.to_vec(),
        eligible_count,
        par_count,
        par_series_count: series.len(),
        par_rate,
        per_cohort_rates: cohort_rows,
        per_facility_rates: facility_rows,
        audit: run.audit.clone(),
    })
}

/// Run the complete labeling pipeline.
pub fn run_par(
    timelines: &[PatientTimeline],
    tables: &RuleTables,
    config: &ParConfig,
    overrides: &[super::OverrideEntry],
) -> Result<(LabelReport, super::OverrideReport)> {
    tables.validate(config)?;
    let mut run = classify_roles(timelines, tables, config);
    apply_exclusions(&mut run, tables, config);
    mark_relations(&mut run, tables, config);
    let override_report = super::apply_overrides(&mut run, overrides);
    let series = build_series(&run);
    let report = reclassify_and_rate(&mut run, &series, config)?;
    Ok((report, override_report))
}
