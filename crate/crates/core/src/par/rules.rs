//! User-supplied rule tables driving the labeling engine.
//!
//! Official CMS/AHRQ/DCG-HCC code lists are versioned external artifacts and
//! are not shipped; each table is a standalone JSON document with a
//! `table_version` field, loaded from a directory of fixed file names. The
//! repository ships small synthetic tables under `fixtures/rules/`.

use crate::error::{CoreError, Result};
use crate::records::Cohort;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Relation kinds expressible through the clinical relation map
/// (the remaining kinds Va/Ve/Vf come from dedicated code sets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MappedRelation {
    Vb,
    Vc,
    Vd,
    Vg,
    Vh,
}

/// All rule tables used by the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTables {
    /// Diagnosis codes defining each study cohort.
    pub cohort_codes: BTreeMap<Cohort, BTreeSet<String>>,
    /// CMS planned procedures (rule III.e).
    pub planned_procedures: BTreeSet<String>,
    /// Acute / complication-of-care condition categories (rule III.e).
    pub acute_or_complication_categories: BTreeSet<String>,
    /// PCI and CABG procedure codes (rule III.f).
    pub pci_cabg_procedures: BTreeSet<String>,
    /// Diagnoses exempting an AMI readmission from rule III.f.
    pub ami_exempt_dx: BTreeSet<String>,
    /// High-mortality special conditions (rule III.h).
    pub high_mortality_dx: BTreeSet<String>,
    /// Specialized-care conditions (rule III.i).
    pub specialized_condition_dx: BTreeSet<String>,
    /// Ambulatory care-sensitive conditions (relation Va).
    pub acsc_codes: BTreeSet<String>,
    /// Index condition category → related readmission categories with their
    /// relation kind (relations Vb–Vd, Vg–Vh).
    pub clinical_relation_map: BTreeMap<String, BTreeMap<String, MappedRelation>>,
    /// Mental-health / substance-abuse diagnoses (relations Ve, Vf).
    pub mental_substance_codes: BTreeSet<String>,
}

#[derive(Deserialize)]
struct CodesFile {
    #[allow(dead_code)]
    table_version: String,
    codes: BTreeSet<String>,
}

#[derive(Deserialize)]
struct CohortFile {
    #[allow(dead_code)]
    table_version: String,
    cohorts: BTreeMap<Cohort, BTreeSet<String>>,
}

#[derive(Deserialize)]
struct RelationFile {
    #[allow(dead_code)]
    table_version: String,
    relations: BTreeMap<String, BTreeMap<String, MappedRelation>>,
}

fn load_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let display = path.display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(display.clone(), e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::format(display, e.to_string()))
}

impl RuleTables {
    /// Load all tables from a directory of JSON documents, one per table.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let cohorts: CohortFile = load_json(dir, "cohort_codes.json")?;
        let codes = |name: &str| -> Result<BTreeSet<String>> {
            Ok(load_json::<CodesFile>(dir, name)?.codes)
        };
        let relations: RelationFile = load_json(dir, "clinical_relation_map.json")?;
        Ok(RuleTables {
            cohort_codes: cohorts.cohorts,
            planned_procedures: codes("planned_procedures.json")?,
            acute_or_complication_categories: codes("acute_or_complication_categories.json")?,
            pci_cabg_procedures: codes("pci_cabg_procedures.json")?,
            ami_exempt_dx: codes("ami_exempt_dx.json")?,
            high_mortality_dx: codes("high_mortality_dx.json")?,
            specialized_condition_dx: codes("specialized_condition_dx.json")?,
            acsc_codes: codes("acsc_codes.json")?,
            clinical_relation_map: relations.relations,
            mental_substance_codes: codes("mental_substance_codes.json")?,
        })
    }

    /// Empty tables: no cohort matches, no relations. Useful as a base for
    /// fixtures that fill in only what a test needs.
    pub fn empty() -> Self {
        RuleTables {
            cohort_codes: BTreeMap::new(),
            planned_procedures: BTreeSet::new(),
            acute_or_complication_categories: BTreeSet::new(),
            pci_cabg_procedures: BTreeSet::new(),
            ami_exempt_dx: BTreeSet::new(),
            high_mortality_dx: BTreeSet::new(),
            specialized_condition_dx: BTreeSet::new(),
            acsc_codes: BTreeSet::new(),
            clinical_relation_map: BTreeMap::new(),
            mental_substance_codes: BTreeSet::new(),
        }
    }

    /// Check that every table needed by the enabled rules is populated.
    pub fn validate(&self, config: &super::ParConfig) -> Result<()> {
        use super::ExclusionRule::*;
        let enabled = |rule| !config.disabled_rules.contains(&rule);
        let mut missing = Vec::new();
        if self.cohort_codes.is_empty() {
            missing.push("cohort_codes");
        }
        if enabled(IIIe) {
            if self.planned_procedures.is_empty() {
                missing.push("planned_procedures");
            }
            if self.acute_or_complication_categories.is_empty() {
                missing.push("acute_or_complication_categories");
            }
        }
        if enabled(IIIf) && self.pci_cabg_procedures.is_empty() {
            missing.push("pci_cabg_procedures");
        }
        if enabled(IIIh) && self.high_mortality_dx.is_empty() {
            missing.push("high_mortality_dx");
        }
        if enabled(IIIi) && self.specialized_condition_dx.is_empty() {
            missing.push("specialized_condition_dx");
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CoreError::Config(format!(
                "empty rule tables for enabled rules: {}",
                missing.join(", ")
            )))
        }
    }
}
