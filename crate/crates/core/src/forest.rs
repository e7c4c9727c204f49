//! Phase-type survival forest.
//!
//! Trees are grown on subject-level bootstrap samples: patients are drawn
//! with replacement and every replicate of a drawn patient rides along, so a
//! patient's records are never split between in-bag and out-of-bag. Each
//! node split maximizes WIC information gain over a random variable subset;
//! trees are unpruned. Prediction pools per-replicate votes over trees;
//! out-of-bag votes give the running error estimate and the permutation
//! importance scores.

use crate::data::{FeatureKind, FeatureValue, TrainingSchema, TrainingSet};
use crate::error::{CoreError, Result};
use crate::phase_type::{CoxianPh, EmConfig, InitStrategy};
use crate::seed::derive_seed;
use crate::splitting::{
    best_split, fit_node, CutpointStrategy, NodeData, NodeFit, SplitOptions, SplitTest,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Votes-per-class weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub no_readmission: f64,
    pub par: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            no_readmission: 1.0,
            par: 1.0,
        }
    }
}

/// How a patient's replicates contribute to the pooled prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotePooling {
    /// Every replicate votes in every tree.
    #[default]
    Pooled,
    /// Only the newest replicate votes.
    LatestReplicateOnly,
}

/// Forest training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    /// Number of trees `B`.
    pub n_trees: usize,
    /// Variables tried at each split `v'`.
    pub vars_per_split: usize,
    /// Short-stay phases of the node models.
    pub ph_short: usize,
    /// Long-stay phases of the node models.
    pub ph_long: usize,
    pub class_weights: ClassWeights,
    /// Minimum records in a splittable node; 0 means the WIC-forced floor
    /// `2(d+2)`.
    pub min_node_size: usize,
    pub cutpoints: CutpointStrategy,
    /// Pooled weighted PAR vote fraction at or above this predicts PAR.
    pub decision_threshold: f64,
    pub master_seed: u64,
    /// Patients drawn per bootstrap; 0 means the number of distinct patients.
    pub bootstrap_size: usize,
    pub max_depth: Option<usize>,
    /// Horizon for the leaf readmission probability `1 - S(h)`.
    pub horizon_days: f64,
    /// EM settings for node fits.
    pub node_em: EmConfig,
    /// Apply class weights to node likelihoods during growth.
    pub weight_splitting: bool,
    /// Apply class weights to leaf classes and pooled votes.
    pub weight_voting: bool,
    pub vote_pooling: VotePooling,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            vars_per_split: 5,
            ph_short: 1,
            ph_long: 1,
            class_weights: ClassWeights::default(),
            min_node_size: 0,
            cutpoints: CutpointStrategy::default(),
            decision_threshold: 0.5,
            master_seed: 0,
            bootstrap_size: 0,
            max_depth: None,
            horizon_days: 30.0,
            node_em: EmConfig {
                max_iterations: 12,
                ll_tolerance: 1e-3,
                ode_steps_per_unit_time: 8,
                init: InitStrategy::MomentMatched,
                seed: 0,
            },
            weight_splitting: true,
            weight_voting: true,
            vote_pooling: VotePooling::Pooled,
        }
    }
}

impl ForestConfig {
    pub fn order(&self) -> usize {
        self.ph_short + self.ph_long
    }

    pub fn degrees_of_freedom(&self) -> usize {
        crate::splitting::degrees_of_freedom(self.order())
    }

    /// Effective minimum node size (`2(d+2)` unless overridden).
    pub fn effective_min_node_size(&self) -> usize {
        if self.min_node_size == 0 {
            2 * (self.degrees_of_freedom() + 2)
        } else {
            self.min_node_size
        }
    }

    pub fn validate(&self, n_vars: usize) -> Result<()> {
        if self.n_trees < 1 {
            return Err(CoreError::Config("n_trees must be at least 1".into()));
        }
        if self.vars_per_split < 1 || self.vars_per_split > n_vars {
            return Err(CoreError::Config(format!(
                "vars_per_split must lie in 1..={n_vars}, got {}",
                self.vars_per_split
            )));
        }
        if self.ph_short < 1 {
            return Err(CoreError::Config("need at least one short-stay phase".into()));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(CoreError::Config(
                "decision_threshold must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(self.class_weights.no_readmission > 0.0 && self.class_weights.par > 0.0) {
            return Err(CoreError::Config("class weights must be positive".into()));
        }
        if !(self.horizon_days > 0.0) {
            return Err(CoreError::Config("horizon_days must be positive".into()));
        }
        Ok(())
    }

    fn split_options(&self) -> SplitOptions {
        SplitOptions {
            ph_short: self.ph_short,
            ph_long: self.ph_long,
            cutpoints: self.cutpoints.clone(),
            node_em: self.node_em.clone(),
        }
    }
}

/// Subject-level bootstrap outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Bootstrap {
    /// Drawn patient indices with multiplicity, sorted.
    pub in_bag: Vec<usize>,
    /// Patients never drawn, sorted.
    pub oob: Vec<usize>,
}

/// Draw `draws` patients with replacement; all replicates of a drawn patient
/// are attached to it downstream.
pub fn subject_bootstrap<R: Rng + ?Sized>(
    n_patients: usize,
    draws: usize,
    rng: &mut R,
) -> Bootstrap {
    let mut in_bag: Vec<usize> = (0..draws).map(|_| rng.random_range(0..n_patients)).collect();
    in_bag.sort_unstable();
    let mut seen = vec![false; n_patients];
    for &p in &in_bag {
        seen[p] = true;
    }
    let oob = (0..n_patients).filter(|&p| !seen[p]).collect();
    Bootstrap { in_bag, oob }
}

/// Leaf phase-type fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafFit {
    pub ph: CoxianPh,
    pub log_likelihood: f64,
    pub wic: f64,
}

/// One tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "node")]
pub enum TreeNode {
    Split {
        variable: usize,
        #[serde(flatten)]
        test: SplitTest,
        left: usize,
        right: usize,
        n: usize,
        gain: f64,
    },
    Leaf {
        n: usize,
        /// In-bag PAR records (with bootstrap multiplicity).
        count_par: f64,
        count_no: f64,
        predicts_par: bool,
        /// Readmission probability within the horizon.
        prob_par: f64,
        fit: Option<LeafFit>,
    },
}

/// One unpruned WIC-grown tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub nodes: Vec<TreeNode>,
    pub in_bag_patients: Vec<usize>,
    pub seed: u64,
}

impl SurvivalTree {
    /// Walk a covariate vector to its leaf; `override_var` substitutes one
    /// feature value (used by permutation importance).
    fn leaf_index(&self, values: &[FeatureValue], override_var: Option<(usize, FeatureValue)>) -> usize {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { .. } => return node,
                TreeNode::Split {
                    variable,
                    test,
                    left,
                    right,
                    ..
                } => {
                    let value = match override_var {
                        Some((v, replacement)) if v == *variable => replacement,
                        _ => values[*variable],
                    };
                    node = if test.goes_left(value) { *left } else { *right };
                }
            }
        }
    }

    /// The tree's class vote for a covariate vector.
    pub fn vote(&self, values: &[FeatureValue]) -> bool {
        match &self.nodes[self.leaf_index(values, None)] {
            TreeNode::Leaf { predicts_par, .. } => *predicts_par,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    fn vote_with_override(&self, values: &[FeatureValue], over: (usize, FeatureValue)) -> bool {
        match &self.nodes[self.leaf_index(values, Some(over))] {
            TreeNode::Leaf { predicts_par, .. } => *predicts_par,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    /// Leaf readmission probability for a covariate vector.
    pub fn prob(&self, values: &[FeatureValue]) -> f64 {
        match &self.nodes[self.leaf_index(values, None)] {
            TreeNode::Leaf { prob_par, .. } => *prob_par,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

/// Per-variable permutation importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub variable: String,
    /// Mean OOB error increase, in percentage points.
    pub raw_score: f64,
    pub z_score: f64,
    /// Upper-tail normal p-value.
    pub significance: f64,
}

const FOREST_FORMAT_VERSION: u32 = 1;

/// Trained ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalForest {
    pub format_version: u32,
    pub config: ForestConfig,
    pub schema: TrainingSchema,
    pub schema_fingerprint: String,
    /// Hash of the training patient-id list; aligns stored patient indices.
    pub patient_ids_hash: String,
    pub trees: Vec<SurvivalTree>,
    pub importance: Option<Vec<ImportanceRow>>,
}

fn patient_ids_hash(set: &TrainingSet) -> String {
    let mut hasher = Sha256::new();
    for group in set.patients() {
        hasher.update(group.patient_id.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Grow one unpruned tree on a bootstrap sample.
pub fn grow_tree(
    set: &TrainingSet,
    bootstrap: &Bootstrap,
    config: &ForestConfig,
    rng: &mut ChaCha12Rng,
    seed: u64,
) -> Result<SurvivalTree> {
    let options = config.split_options();
    let weights_for = |row: usize| -> f64 {
        if !config.weight_splitting {
            return 1.0;
        }
        if set.rows()[row].complete {
            config.class_weights.par
        } else {
            config.class_weights.no_readmission
        }
    };
    let mut rows: Vec<usize> = Vec::new();
    for &p in &bootstrap.in_bag {
        rows.extend(set.patients()[p].row_indices.iter().copied());
    }
    let weights: Vec<f64> = rows.iter().map(|&r| weights_for(r)).collect();

    let mut nodes: Vec<TreeNode> = Vec::new();
    let root_fit = if rows.len() > options.d() + 1 {
        fit_node(
            &NodeData {
                set,
                rows: &rows,
                weights: &weights,
            },
            &options,
            None,
        )
        .ok()
    } else {
        None
    };
    grow_node(
        set, config, &options, &mut nodes, rows, weights, root_fit, 0, rng,
    )?;
    Ok(SurvivalTree {
        nodes,
        in_bag_patients: bootstrap.in_bag.clone(),
        seed,
    })
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    set: &TrainingSet,
    config: &ForestConfig,
    options: &SplitOptions,
    nodes: &mut Vec<TreeNode>,
    rows: Vec<usize>,
    weights: Vec<f64>,
    fit: Option<NodeFit>,
    depth: usize,
    rng: &mut ChaCha12Rng,
) -> Result<usize> {
    let make_leaf = |nodes: &mut Vec<TreeNode>, rows: &[usize], fit: Option<NodeFit>| -> usize {
        let mut count_par = 0.0;
        let mut count_no = 0.0;
        for &r in rows {
            if set.rows()[r].complete {
                count_par += 1.0;
            } else {
                count_no += 1.0;
            }
        }
        let (w_par, w_no) = if config.weight_voting {
            (config.class_weights.par, config.class_weights.no_readmission)
        } else {
            (1.0, 1.0)
        };
        let predicts_par = w_par * count_par > w_no * count_no;
        let prob_par = match &fit {
            Some(node_fit) => node_fit
                .ph
                .survival(config.horizon_days)
                .map(|s| 1.0 - s)
                .unwrap_or_else(|_| count_par / (count_par + count_no).max(1.0)),
            None => count_par / (count_par + count_no).max(1.0),
        };
        let index = nodes.len();
        nodes.push(TreeNode::Leaf {
            n: rows.len(),
            count_par,
            count_no,
            predicts_par,
            prob_par,
            fit: fit.map(|f| LeafFit {
                ph: f.ph,
                log_likelihood: f.log_likelihood,
                wic: f.wic,
            }),
        });
        index
    };

    let at_depth_cap = config.max_depth.map(|d| depth >= d).unwrap_or(false);
    if rows.len() < config.effective_min_node_size() || at_depth_cap || fit.is_none() {
        return Ok(make_leaf(nodes, &rows, fit));
    }
    let fit = fit.unwrap();

    let n_vars = set.schema().n_features();
    let mut drawn: Vec<usize> =
        rand::seq::index::sample(rng, n_vars, config.vars_per_split.min(n_vars)).into_vec();
    drawn.sort_unstable();

    let found = best_split(
        &NodeData {
            set,
            rows: &rows,
            weights: &weights,
        },
        &fit,
        &drawn,
        options,
    )?;
    let Some(split) = found else {
        return Ok(make_leaf(nodes, &rows, Some(fit)));
    };

    let pick = |positions: &[usize]| -> (Vec<usize>, Vec<f64>) {
        (
            positions.iter().map(|&p| rows[p]).collect(),
            positions.iter().map(|&p| weights[p]).collect(),
        )
    };
    let (left_rows, left_weights) = pick(&split.candidate.left);
    let (right_rows, right_weights) = pick(&split.candidate.right);

    let index = nodes.len();
    nodes.push(TreeNode::Split {
        variable: split.candidate.variable,
        test: split.candidate.test.clone(),
        left: 0,
        right: 0,
        n: rows.len(),
        gain: split.gain,
    });
    let left = grow_node(
        set,
        config,
        options,
        nodes,
        left_rows,
        left_weights,
        Some(split.left_fit),
        depth + 1,
        rng,
    )?;
    let right = grow_node(
        set,
        config,
        options,
        nodes,
        right_rows,
        right_weights,
        Some(split.right_fit),
        depth + 1,
        rng,
    )?;
    if let TreeNode::Split {
        left: l, right: r, ..
    } = &mut nodes[index]
    {
        *l = left;
        *r = right;
    }
    Ok(index)
}

/// Train a forest: `B` trees on independent subject bootstraps with
/// deterministically derived per-tree seeds, so output does not depend on
/// thread count or scheduling.
pub fn train(set: &TrainingSet, config: &ForestConfig) -> Result<SurvivalForest> {
    if set.n_rows() == 0 {
        return Err(CoreError::Config("training set is empty".into()));
    }
    config.validate(set.schema().n_features())?;
    let n_patients = set.n_patients();
    let draws = if config.bootstrap_size == 0 {
        n_patients
    } else {
        config.bootstrap_size
    };
    let trees: Result<Vec<SurvivalTree>> = (0..config.n_trees)
        .into_par_iter()
        .map(|b| {
            let seed = derive_seed(config.master_seed, "tree", b as u64);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let bootstrap = subject_bootstrap(n_patients, draws, &mut rng);
            grow_tree(set, &bootstrap, config, &mut rng, seed)
        })
        .collect();
    Ok(SurvivalForest {
        format_version: FOREST_FORMAT_VERSION,
        config: config.clone(),
        schema: set.schema().clone(),
        schema_fingerprint: set.schema().fingerprint(),
        patient_ids_hash: patient_ids_hash(set),
        trees: trees?,
        importance: None,
    })
}

fn check_values(forest: &SurvivalForest, values: &[FeatureValue]) -> Result<()> {
    if values.len() != forest.schema.n_features() {
        return Err(CoreError::Config(format!(
            "expected {} covariates, got {}",
            forest.schema.n_features(),
            values.len()
        )));
    }
    for (def, value) in forest.schema.features.iter().zip(values) {
        match (&def.kind, value) {
            (FeatureKind::Numeric, FeatureValue::Num(_)) => {}
            (FeatureKind::Categorical { levels }, FeatureValue::Cat(c)) => {
                if *c as usize >= levels.len() {
                    return Err(CoreError::Config(format!(
                        "unknown encoding for covariate {}: level {}",
                        def.name, c
                    )));
                }
            }
            _ => {
                return Err(CoreError::Config(format!(
                    "covariate {} has the wrong kind",
                    def.name
                )))
            }
        }
    }
    Ok(())
}

fn pooled_class(forest: &SurvivalForest, par_votes: f64, no_votes: f64) -> (bool, f64) {
    let (w_par, w_no) = if forest.config.weight_voting {
        (
            forest.config.class_weights.par,
            forest.config.class_weights.no_readmission,
        )
    } else {
        (1.0, 1.0)
    };
    let weighted_par = w_par * par_votes;
    let weighted_no = w_no * no_votes;
    let fraction = if weighted_par + weighted_no > 0.0 {
        weighted_par / (weighted_par + weighted_no)
    } else {
        0.0
    };
    (fraction >= forest.config.decision_threshold, fraction)
}

/// Classify a patient from their replicate covariate vectors: every tree
/// votes on every replicate (or only the newest, per configuration) and the
/// weighted PAR vote fraction decides the class.
pub fn predict_patient(
    forest: &SurvivalForest,
    replicates: &[Vec<FeatureValue>],
) -> Result<(bool, f64)> {
    if replicates.is_empty() {
        return Err(CoreError::Config("no replicates to classify".into()));
    }
    for values in replicates {
        check_values(forest, values)?;
    }
    let effective: Vec<&Vec<FeatureValue>> = match forest.config.vote_pooling {
        VotePooling::Pooled => replicates.iter().collect(),
        VotePooling::LatestReplicateOnly => vec![replicates.last().unwrap()],
    };
    let mut par_votes = 0.0;
    let mut no_votes = 0.0;
    for tree in &forest.trees {
        for values in &effective {
            if tree.vote(values) {
                par_votes += 1.0;
            } else {
                no_votes += 1.0;
            }
        }
    }
    Ok(pooled_class(forest, par_votes, no_votes))
}

/// Per-record score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub record_id: String,
    pub predicted_par: bool,
    /// Weighted PAR vote fraction over all trees.
    pub vote_fraction: f64,
    /// Mean leaf readmission probability over all trees.
    pub ph_prob: f64,
}

fn ensure_same_schema(forest: &SurvivalForest, set: &TrainingSet) -> Result<()> {
    let fp = set.schema().fingerprint();
    if fp != forest.schema_fingerprint {
        return Err(CoreError::SchemaMismatch {
            model: forest.schema_fingerprint.clone(),
            data: fp,
        });
    }
    Ok(())
}

/// Score every record of a dataset with the whole forest.
pub fn score_records(forest: &SurvivalForest, set: &TrainingSet) -> Result<Vec<RecordScore>> {
    ensure_same_schema(forest, set)?;
    let scores: Vec<RecordScore> = set
        .rows()
        .par_iter()
        .map(|row| {
            let mut par_votes = 0.0;
            let mut no_votes = 0.0;
            let mut prob_sum = 0.0;
            for tree in &forest.trees {
                if tree.vote(&row.values) {
                    par_votes += 1.0;
                } else {
                    no_votes += 1.0;
                }
                prob_sum += tree.prob(&row.values);
            }
            let (predicted_par, vote_fraction) = pooled_class(forest, par_votes, no_votes);
            RecordScore {
                record_id: row.record_id.clone(),
                predicted_par,
                vote_fraction,
                ph_prob: prob_sum / forest.trees.len() as f64,
            }
        })
        .collect();
    Ok(scores)
}

/// Out-of-bag error report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OobReport {
    pub overall: Option<f64>,
    pub no_readmission: Option<f64>,
    pub par: Option<f64>,
    pub scored_records: usize,
    /// Records of patients that were in-bag in every tree.
    pub skipped_records: usize,
}

fn ensure_same_patients(forest: &SurvivalForest, set: &TrainingSet) -> Result<()> {
    ensure_same_schema(forest, set)?;
    if patient_ids_hash(set) != forest.patient_ids_hash {
        return Err(CoreError::Config(
            "dataset patients differ from the training set; OOB statistics undefined".into(),
        ));
    }
    Ok(())
}

fn oob_masks(forest: &SurvivalForest, n_patients: usize) -> Vec<Vec<bool>> {
    forest
        .trees
        .iter()
        .map(|tree| {
            let mut mask = vec![true; n_patients];
            for &p in &tree.in_bag_patients {
                mask[p] = false;
            }
            mask
        })
        .collect()
}

/// Per-record OOB vote fraction; `None` for records never out of bag.
pub fn oob_scores(forest: &SurvivalForest, set: &TrainingSet) -> Result<Vec<Option<f64>>> {
    ensure_same_patients(forest, set)?;
    let masks = oob_masks(forest, set.n_patients());
    let mut patient_of_row = vec![0usize; set.n_rows()];
    for (p, group) in set.patients().iter().enumerate() {
        for &r in &group.row_indices {
            patient_of_row[r] = p;
        }
    }
    let scores: Vec<Option<f64>> = set
        .rows()
        .par_iter()
        .enumerate()
        .map(|(r, row)| {
            let p = patient_of_row[r];
            let mut par_votes = 0.0;
            let mut no_votes = 0.0;
            for (tree, mask) in forest.trees.iter().zip(&masks) {
                if mask[p] {
                    if tree.vote(&row.values) {
                        par_votes += 1.0;
                    } else {
                        no_votes += 1.0;
                    }
                }
            }
            if par_votes + no_votes == 0.0 {
                None
            } else {
                Some(pooled_class(forest, par_votes, no_votes).1)
            }
        })
        .collect();
    Ok(scores)
}

/// Out-of-bag classification error: each record is scored only by trees
/// whose bootstrap excluded its patient.
pub fn oob_error(forest: &SurvivalForest, set: &TrainingSet) -> Result<OobReport> {
    let scores = oob_scores(forest, set)?;
    let mut scored = 0usize;
    let mut skipped = 0usize;
    let mut wrong = 0usize;
    let mut no_total = 0usize;
    let mut no_wrong = 0usize;
    let mut par_total = 0usize;
    let mut par_wrong = 0usize;
    for (row, score) in set.rows().iter().zip(&scores) {
        let Some(fraction) = score else {
            skipped += 1;
            continue;
        };
        scored += 1;
        let predicted = *fraction >= forest.config.decision_threshold;
        let label = row.complete;
        if label {
            par_total += 1;
            if !predicted {
                par_wrong += 1;
                wrong += 1;
            }
        } else {
            no_total += 1;
            if predicted {
                no_wrong += 1;
                wrong += 1;
            }
        }
    }
    let rate = |num: usize, den: usize| {
        if den > 0 {
            Some(num as f64 / den as f64)
        } else {
            None
        }
    };
    Ok(OobReport {
        overall: rate(wrong, scored),
        no_readmission: rate(no_wrong, no_total),
        par: rate(par_wrong, par_total),
        scored_records: scored,
        skipped_records: skipped,
    })
}

/// Permutation variable importance.
///
/// For each tree, its OOB records are classified before and after permuting
/// one variable's values among them; the raw score is the mean error
/// increase in percentage points, the Z-score divides by the tree-wise
/// standard error, and significance is the upper-tail normal p-value.
/// Output is sorted by raw score, descending.
pub fn variable_importance(
    forest: &SurvivalForest,
    set: &TrainingSet,
) -> Result<Vec<ImportanceRow>> {
    ensure_same_patients(forest, set)?;
    let n_vars = set.schema().n_features();
    let masks = oob_masks(forest, set.n_patients());

    // Per tree: Vec of per-variable error increases (fractions), or None if
    // the tree has no OOB records.
    let per_tree: Vec<Option<Vec<f64>>> = forest
        .trees
        .par_iter()
        .enumerate()
        .map(|(b, tree)| {
            let mask = &masks[b];
            let mut oob_rows: Vec<usize> = Vec::new();
            for (p, group) in set.patients().iter().enumerate() {
                if mask[p] {
                    oob_rows.extend(group.row_indices.iter().copied());
                }
            }
            if oob_rows.is_empty() {
                return None;
            }
            let labels: Vec<bool> = oob_rows.iter().map(|&r| set.rows()[r].complete).collect();
            let baseline_wrong = oob_rows
                .iter()
                .zip(&labels)
                .filter(|(&r, &label)| tree.vote(&set.rows()[r].values) != label)
                .count() as f64;
            let n = oob_rows.len() as f64;
            let mut diffs = Vec::with_capacity(n_vars);
            for variable in 0..n_vars {
                let seed = derive_seed(
                    forest.config.master_seed,
                    "importance",
                    (b * n_vars + variable) as u64,
                );
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let mut permuted: Vec<FeatureValue> = oob_rows
                    .iter()
                    .map(|&r| set.rows()[r].values[variable])
                    .collect();
                permuted.shuffle(&mut rng);
                let wrong = oob_rows
                    .iter()
                    .zip(&permuted)
                    .zip(&labels)
                    .filter(|((&r, &value), &label)| {
                        tree.vote_with_override(&set.rows()[r].values, (variable, value)) != label
                    })
                    .count() as f64;
                diffs.push((wrong - baseline_wrong) / n);
            }
            Some(diffs)
        })
        .collect();

    let contributing: Vec<&Vec<f64>> = per_tree.iter().flatten().collect();
    if contributing.is_empty() {
        return Err(CoreError::Config(
            "no tree had out-of-bag records; cannot compute importance".into(),
        ));
    }
    let t = contributing.len() as f64;
    let mut rows = Vec::with_capacity(n_vars);
    for variable in 0..n_vars {
        let diffs: Vec<f64> = contributing.iter().map(|d| d[variable] * 100.0).collect();
        let mean = diffs.iter().sum::<f64>() / t;
        let var = if diffs.len() > 1 {
            diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (t - 1.0)
        } else {
            0.0
        };
        let se = (var / t).sqrt();
        let z = if se > 0.0 { mean / se } else { 0.0 };
        let significance = 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
        rows.push(ImportanceRow {
            variable: set.schema().features[variable].name.clone(),
            raw_score: mean,
            z_score: z,
            significance,
        });
    }
    rows.sort_by(|a, b| {
        b.raw_score
            .partial_cmp(&a.raw_score)
            .unwrap()
            .then_with(|| a.variable.cmp(&b.variable))
    });
    Ok(rows)
}

/// Render importance rows as delimited text (attribute, raw, Z, Sig.).
pub fn importance_tsv(rows: &[ImportanceRow]) -> String {
    let mut out = String::from("attribute\traw_score\tz_score\tsignificance\n");
    for row in rows {
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\n",
            row.variable, row.raw_score, row.z_score, row.significance
        ));
    }
    out
}

/// Serialize a forest to its versioned JSON model format.
pub fn to_json(forest: &SurvivalForest) -> Result<String> {
    serde_json::to_string(forest).map_err(|e| CoreError::Other(e.to_string()))
}

/// Load a forest from its JSON model format.
pub fn from_json(text: &str) -> Result<SurvivalForest> {
    let forest: SurvivalForest =
        serde_json::from_str(text).map_err(|e| CoreError::format("model", e.to_string()))?;
    if forest.format_version != FOREST_FORMAT_VERSION {
        return Err(CoreError::format(
            "model",
            format!(
                "unsupported model format version {} (expected {FOREST_FORMAT_VERSION})",
                forest.format_version
            ),
        ));
    }
    Ok(forest)
}
