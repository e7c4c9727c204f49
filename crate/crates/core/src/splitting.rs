//! WIC splitting criterion and per-node best-split search.
//!
//! Nodes are scored by the weighted average information criterion
//!
//! ```text
//! WIC(d) = -2L + d + { d(((log N - 1)·log N)(N-(d+1))² + 2N(N+(d+1))) }
//!                    / { (2N + log N·(N-(d+1))) · (N-(d+1)) }
//! ```
//!
//! with `d = 2(m+r) - 1` degrees of freedom of the node's Coxian fit and `N`
//! the node's record count. A candidate binary split is kept when the summed
//! child WIC improves on the parent's (positive information gain).

use crate::data::{FeatureKind, FeatureValue, TrainingSet};
use crate::error::{CoreError, Result};
use crate::phase_type::{fit_em_weighted, CoxianPh, EmConfig, InitStrategy, ObservationSet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// WIC degrees of freedom for a Coxian of the given order.
pub fn degrees_of_freedom(order: usize) -> usize {
    2 * order - 1
}

/// Exact transcription of the WIC formula. Requires `N > d + 1`.
pub fn wic(log_likelihood: f64, d: usize, n: usize) -> Result<f64> {
    if n <= d + 1 {
        return Err(CoreError::Split(format!(
            "insufficient data for criterion: N = {n} must exceed d + 1 = {}",
            d + 1
        )));
    }
    let df = d as f64;
    let nf = n as f64;
    let ln = nf.ln();
    let numerator = df * (((ln - 1.0) * ln) * (nf - (df + 1.0)).powi(2)
        + 2.0 * nf * (nf + (df + 1.0)));
    let denominator = (2.0 * nf + (ln * (nf - (df + 1.0)))) * (nf - (df + 1.0));
    Ok(-2.0 * log_likelihood + df + numerator / denominator)
}

/// Phase-type fit of one node plus its criterion value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub ph: CoxianPh,
    pub log_likelihood: f64,
    pub degrees_of_freedom: usize,
    pub n: usize,
    pub wic: f64,
}

/// Total WIC of a partition: the sum of the child criteria.
pub fn split_wic(children: &[NodeFit]) -> Result<f64> {
    if children.is_empty() {
        return Err(CoreError::Split("a split needs at least one child".into()));
    }
    Ok(children.iter().map(|c| c.wic).sum())
}

/// Information gain of a split: parent WIC minus summed child WIC.
pub fn information_gain(parent: &NodeFit, children: &[NodeFit]) -> Result<f64> {
    Ok(parent.wic - split_wic(children)?)
}

/// The test stored at an internal tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "test")]
pub enum SplitTest {
    /// Numeric: `value <= threshold` goes left.
    Threshold { threshold: f64 },
    /// Categorical: level index in `in_left` goes left.
    CategorySubset { in_left: Vec<u32> },
}

impl SplitTest {
    pub fn goes_left(&self, value: FeatureValue) -> bool {
        match (self, value) {
            (SplitTest::Threshold { threshold }, v) => v.as_num() <= *threshold,
            (SplitTest::CategorySubset { in_left }, FeatureValue::Cat(c)) => in_left.contains(&c),
            // A numeric value on a categorical split cannot occur on a
            // schema-validated set; send it right.
            (SplitTest::CategorySubset { .. }, FeatureValue::Num(_)) => false,
        }
    }

    /// Deterministic tie-break key: candidates with equal gain on the same
    /// variable prefer the lower threshold / smaller subset mask.
    fn order_key(&self) -> (f64, u64) {
        match self {
            SplitTest::Threshold { threshold } => (*threshold, 0),
            SplitTest::CategorySubset { in_left } => {
                let mask = in_left.iter().fold(0u64, |m, &c| m | (1u64 << (c % 64)));
                (f64::NEG_INFINITY, mask)
            }
        }
    }
}

/// Candidate binary split of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub variable: usize,
    pub test: SplitTest,
    /// Node-row positions going to each side.
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// Chosen split with its fitted children.
#[derive(Debug, Clone)]
pub struct BestSplit {
    pub candidate: SplitCandidate,
    pub gain: f64,
    pub left_fit: NodeFit,
    pub right_fit: NodeFit,
}

/// How candidate thresholds for continuous variables are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum CutpointStrategy {
    /// All midpoints between sorted distinct values, thinned to at most
    /// `max_candidates` quantile-spaced thresholds.
    Search { max_candidates: usize },
    /// Fixed per-variable cutpoints (by feature name); variables without an
    /// entry fall back to a search capped at `max_candidates`.
    Fixed {
        cutpoints: BTreeMap<String, f64>,
        max_candidates: usize,
    },
}

impl Default for CutpointStrategy {
    fn default() -> Self {
        CutpointStrategy::Search { max_candidates: 32 }
    }
}

/// The cutpoints published for the baseline model: age 68 years, length of
/// stay 5 days, CAN score 66, sequence 3, Charlson index 4.5.
pub fn baseline_cutpoints() -> BTreeMap<String, f64> {
    let mut map = BTreeMap::new();
    map.insert("age".to_string(), 68.0);
    map.insert("length_of_stay".to_string(), 5.0);
    map.insert("can_score".to_string(), 66.0);
    map.insert("sequence".to_string(), 3.0);
    map.insert("charlson_index".to_string(), 4.5);
    map
}

/// Node-fitting and split-search options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub ph_short: usize,
    pub ph_long: usize,
    pub cutpoints: CutpointStrategy,
    /// EM settings for node fits (coarser than standalone fits).
    pub node_em: EmConfig,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            ph_short: 1,
            ph_long: 1,
            cutpoints: CutpointStrategy::default(),
            node_em: EmConfig {
                max_iterations: 12,
                ll_tolerance: 1e-3,
                ode_steps_per_unit_time: 8,
                init: InitStrategy::MomentMatched,
                seed: 0,
            },
        }
    }
}

impl SplitOptions {
    pub fn order(&self) -> usize {
        self.ph_short + self.ph_long
    }

    pub fn d(&self) -> usize {
        degrees_of_freedom(self.order())
    }
}

/// A node's view of the training data: row indices plus per-row weights.
pub struct NodeData<'a> {
    pub set: &'a TrainingSet,
    pub rows: &'a [usize],
    pub weights: &'a [f64],
}

/// Fit the node's Coxian model and criterion. `warm_start` seeds the EM with
/// the parent's parameters.
pub fn fit_node(
    data: &NodeData<'_>,
    options: &SplitOptions,
    warm_start: Option<&CoxianPh>,
) -> Result<NodeFit> {
    let d = options.d();
    let n = data.rows.len();
    if n <= d + 1 {
        return Err(CoreError::Split(format!(
            "node of size {n} cannot support a fit with d = {d}"
        )));
    }
    let times: Vec<f64> = data
        .rows
        .iter()
        .map(|&i| data.set.rows()[i].time_days)
        .collect();
    let complete: Vec<bool> = data
        .rows
        .iter()
        .map(|&i| data.set.rows()[i].complete)
        .collect();
    let obs = ObservationSet::from_parts(&times, &complete)?;
    let mut config = options.node_em.clone();
    if let Some(ph) = warm_start {
        config.init = InitStrategy::UserSupplied(ph.clone());
    }
    let (ph, diagnostics) = fit_em_weighted(&obs, data.weights, options.ph_short, options.ph_long, &config)?;
    let log_likelihood = diagnostics.final_log_likelihood;
    let wic_value = wic(log_likelihood, d, n)?;
    Ok(NodeFit {
        ph,
        log_likelihood,
        degrees_of_freedom: d,
        n,
        wic: wic_value,
    })
}

/// Candidate tests for one variable on this node's rows.
fn candidate_tests(
    data: &NodeData<'_>,
    variable: usize,
    options: &SplitOptions,
) -> Vec<SplitTest> {
    let def = &data.set.schema().features[variable];
    match &def.kind {
        FeatureKind::Numeric => {
            let fixed = match &options.cutpoints {
                CutpointStrategy::Fixed { cutpoints, .. } => cutpoints.get(&def.name).copied(),
                CutpointStrategy::Search { .. } => None,
            };
            if let Some(threshold) = fixed {
                return vec![SplitTest::Threshold { threshold }];
            }
            let cap = match &options.cutpoints {
                CutpointStrategy::Search { max_candidates }
                | CutpointStrategy::Fixed {
                    max_candidates, ..
                } => (*max_candidates).max(1),
            };
            let mut values: Vec<f64> = data
                .rows
                .iter()
                .map(|&i| data.set.value(i, variable).as_num())
                .collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            if values.len() < 2 {
                return Vec::new();
            }
            let midpoints: Vec<f64> = values
                .windows(2)
                .map(|w| (w[0] + w[1]) / 2.0)
                .collect();
            if midpoints.len() <= cap {
                midpoints
                    .into_iter()
                    .map(|threshold| SplitTest::Threshold { threshold })
                    .collect()
            } else {
                // Quantile-spaced subset.
                (0..cap)
                    .map(|k| {
                        let pos = k * (midpoints.len() - 1) / (cap - 1).max(1);
                        SplitTest::Threshold {
                            threshold: midpoints[pos],
                        }
                    })
                    .collect()
            }
        }
        FeatureKind::Categorical { levels } => {
            let mut present: Vec<u32> = data
                .rows
                .iter()
                .map(|&i| match data.set.value(i, variable) {
                    FeatureValue::Cat(c) => c,
                    FeatureValue::Num(_) => unreachable!("schema validated"),
                })
                .collect();
            present.sort_unstable();
            present.dedup();
            if present.len() < 2 {
                return Vec::new();
            }
            let k = present.len();
            if k <= 5 {
                // All proper subsets with the first present level pinned left.
                (0..(1usize << (k - 1)) - 1)
                    .map(|mask| {
                        let mut in_left = vec![present[0]];
                        for (bit, &level) in present[1..].iter().enumerate() {
                            if mask & (1 << bit) != 0 {
                                in_left.push(level);
                            }
                        }
                        SplitTest::CategorySubset { in_left }
                    })
                    .collect()
            } else {
                // Order levels by weighted event fraction, then cut the
                // ordering at each prefix.
                let mut tally: Vec<(f64, f64)> = vec![(0.0, 0.0); levels.len()];
                for (&row, &w) in data.rows.iter().zip(data.weights) {
                    if let FeatureValue::Cat(c) = data.set.value(row, variable) {
                        let slot = &mut tally[c as usize];
                        slot.1 += w;
                        if data.set.rows()[row].complete {
                            slot.0 += w;
                        }
                    }
                }
                let mut ordered = present.clone();
                ordered.sort_by(|&a, &b| {
                    let fa = tally[a as usize].0 / tally[a as usize].1.max(1e-12);
                    let fb = tally[b as usize].0 / tally[b as usize].1.max(1e-12);
                    fa.partial_cmp(&fb).unwrap().then(a.cmp(&b))
                });
                (1..k)
                    .map(|cut| SplitTest::CategorySubset {
                        in_left: {
                            let mut v = ordered[..cut].to_vec();
                            v.sort_unstable();
                            v
                        },
                    })
                    .collect()
            }
        }
    }
}

/// Search the candidate variables for the split with the largest positive
/// information gain. Ties break toward the lower variable index, then the
/// lower threshold / smaller subset. Returns `None` when no candidate has
/// positive gain (the caller makes the node terminal).
pub fn best_split(
    data: &NodeData<'_>,
    parent: &NodeFit,
    variables: &[usize],
    options: &SplitOptions,
) -> Result<Option<BestSplit>> {
    let d = options.d();
    let mut best: Option<BestSplit> = None;
    let mut vars = variables.to_vec();
    vars.sort_unstable();
    for variable in vars {
        for test in candidate_tests(data, variable, options) {
            let mut left = Vec::new();
            let mut right = Vec::new();
            for (pos, &row) in data.rows.iter().enumerate() {
                if test.goes_left(data.set.value(row, variable)) {
                    left.push(pos);
                } else {
                    right.push(pos);
                }
            }
            if left.len() <= d + 1 || right.len() <= d + 1 {
                continue;
            }
            let child_fit = |positions: &[usize]| -> Result<NodeFit> {
                let rows: Vec<usize> = positions.iter().map(|&p| data.rows[p]).collect();
                let weights: Vec<f64> = positions.iter().map(|&p| data.weights[p]).collect();
                fit_node(
                    &NodeData {
                        set: data.set,
                        rows: &rows,
                        weights: &weights,
                    },
                    options,
                    Some(&parent.ph),
                )
            };
            let left_fit = child_fit(&left)?;
            let right_fit = child_fit(&right)?;
            let gain = information_gain(parent, &[left_fit.clone(), right_fit.clone()])?;
            if gain <= 0.0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some(current) => {
                    gain > current.gain
                        || (gain == current.gain
                            && (variable, test.order_key())
                                < (current.candidate.variable, current.candidate.test.order_key()))
                }
            };
            if better {
                best = Some(BestSplit {
                    candidate: SplitCandidate {
                        variable,
                        test,
                        left,
                        right,
                    },
                    gain,
                    left_fit,
                    right_fit,
                });
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_stub(l: f64, d: usize, n: usize) -> NodeFit {
        NodeFit {
            ph: CoxianPh::new(1, 1, &[1.0], 1.0, 1.0).unwrap(),
            log_likelihood: l,
            degrees_of_freedom: d,
            n,
            wic: wic(l, d, n).unwrap(),
        }
    }

    #[test]
    fn frozen_values() {
        // Computed with an independent transcription before the build.
        assert!((wic(-100.0, 3, 100).unwrap() - 211.45900730076164).abs() < 1e-10);
        assert!((wic(0.0, 1, 3).unwrap() - 5.2414397980585585).abs() < 1e-12);
    }

    #[test]
    fn only_likelihood_term_depends_on_l() {
        let a = wic(-5.0, 3, 100).unwrap();
        let b = wic(-2.0, 3, 100).unwrap();
        assert!((a - b - (-2.0 * (-5.0 - (-2.0)))).abs() < 1e-12);
    }

    #[test]
    fn insufficient_data_rejected() {
        assert!(wic(0.0, 3, 4).is_err());
        assert!(wic(0.0, 3, 5).is_ok());
    }

    #[test]
    fn split_wic_additivity() {
        let child = fit_stub(-40.0, 3, 50);
        assert!((split_wic(&[child.clone()]).unwrap() - child.wic).abs() < 1e-12);
        let two = split_wic(&[child.clone(), child.clone()]).unwrap();
        assert!((two - 2.0 * child.wic).abs() < 1e-12);
        assert!(split_wic(&[]).is_err());
    }

    #[test]
    fn information_gain_is_parent_minus_children() {
        let parent = fit_stub(-90.0, 3, 100);
        let left = fit_stub(-40.0, 3, 50);
        let right = fit_stub(-38.0, 3, 50);
        let gain = information_gain(&parent, &[left.clone(), right.clone()]).unwrap();
        assert!((gain - (parent.wic - left.wic - right.wic)).abs() < 1e-12);
    }

    #[test]
    fn baseline_cutpoints_match_published_values() {
        let cuts = baseline_cutpoints();
        assert_eq!(cuts["age"], 68.0);
        assert_eq!(cuts["length_of_stay"], 5.0);
        assert_eq!(cuts["can_score"], 66.0);
        assert_eq!(cuts["sequence"], 3.0);
        assert_eq!(cuts["charlson_index"], 4.5);
    }
}
