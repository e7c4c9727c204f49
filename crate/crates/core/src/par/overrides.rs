//! Physician panel verdicts, supplied as a JSON-lines override file.

use super::engine::ParRun;
use super::RelationCategory;
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideAction {
    ForcePar,
    ForceNotPar,
    ForceExclude,
}

/// One override line: `{record_id, action, relation?, note?}`. `relation` is
/// required only when forcing PAR on a record whose marked relation is not
/// one of Va–Vh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideEntry {
    pub record_id: String,
    pub action: OverrideAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<RelationCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// What happened while applying overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverrideReport {
    pub applied: usize,
    /// `(record_id, why)` for entries that could not be applied.
    pub skipped: Vec<(String, String)>,
    /// Records with conflicting duplicate entries; the last entry won.
    pub duplicate_warnings: Vec<String>,
}

/// Read an override file (one JSON object per line).
pub fn read_overrides_jsonl(path: &Path) -> Result<Vec<OverrideEntry>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(display.clone(), e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: OverrideEntry = serde_json::from_str(line).map_err(|e| {
            CoreError::format(display.clone(), format!("line {}: {e}", i + 1))
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Step VI: apply per-record override entries. Duplicate entries for one
/// record are collapsed to the last one with a warning; entries referencing
/// unknown records are reported and skipped.
pub fn apply_overrides(run: &mut ParRun<'_>, entries: &[OverrideEntry]) -> OverrideReport {
    let mut report = OverrideReport::default();

    // Last entry wins per record.
    let mut effective: BTreeMap<&str, &OverrideEntry> = BTreeMap::new();
    for entry in entries {
        if effective.insert(&entry.record_id, entry).is_some()
            && !report.duplicate_warnings.contains(&entry.record_id)
        {
            report.duplicate_warnings.push(entry.record_id.clone());
        }
    }

    for (record_id, entry) in effective {
        let Some(&idx) = run.index_by_record_id.get(record_id) else {
            report
                .skipped
                .push((record_id.to_string(), "unknown record_id".into()));
            continue;
        };
        match entry.action {
            OverrideAction::ForceExclude => {
                let state = &mut run.states[idx];
                state.forced_excluded = true;
                state.is_par = false;
                state.override_applied = true;
                report.applied += 1;
            }
            OverrideAction::ForceNotPar => {
                let state = &mut run.states[idx];
                state.is_par = false;
                state.override_applied = true;
                report.applied += 1;
            }
            OverrideAction::ForcePar => {
                if !run.states[idx].in_readmission {
                    report.skipped.push((
                        record_id.to_string(),
                        "not a readmission candidate".into(),
                    ));
                    continue;
                }
                let relation = match run.states[idx].relation {
                    Some(rel) if rel.is_related() => Some(rel),
                    _ => entry.relation.filter(|r| r.is_related()),
                };
                let Some(relation) = relation else {
                    report.skipped.push((
                        record_id.to_string(),
                        "force_par needs a relation category (record is unrelated)".into(),
                    ));
                    continue;
                };
                let reference = run.states[idx]
                    .reference
                    .or(run.states[idx].predecessor);
                let Some(reference) = reference else {
                    report.skipped.push((
                        record_id.to_string(),
                        "no reference admission for forced PAR".into(),
                    ));
                    continue;
                };
                let state = &mut run.states[idx];
                state.is_par = true;
                state.relation = Some(relation);
                state.reference = Some(reference);
                state.readmission_excluded = None;
                state.orphan = false;
                state.forced_excluded = false;
                state.override_applied = true;
                report.applied += 1;
            }
        }
    }
    report
}
