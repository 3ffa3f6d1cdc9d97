//! Evaluation: feature ranking, recovery AUC, cross-validated prediction,
//! and subgraph quality.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_folds, Dataset};
use crate::error::{DslError, Result};
use crate::graph::SummaryGraph;
use crate::optim::{fit, FitOptions, Hyperparams};
use crate::svm::{fit_svm, MarginFlavor};

/// Per-node importance scores with the induced ranking (descending score,
/// ties broken by ascending node id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
}

/// Cross-validation and recovery summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Pooled held-out accuracy over all folds.
    pub accuracy: f64,
    /// Ground-truth recovery AUC of the full-data ranking, when a ground
    /// truth is supplied.
    pub auc: Option<f64>,
    /// Conductance of the selected node set in the summary graph, when
    /// defined.
    pub conductance: Option<f64>,
    pub per_fold: Vec<f64>,
    pub k_selected: usize,
    pub wall_time_s: f64,
}

/// Induced-subgraph diagnostics for a selected node set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgraphReport {
    pub conductance: Option<f64>,
    pub components: Vec<Vec<usize>>,
}

/// Ranks nodes by the Euclidean norms of their selection-matrix rows.
pub fn rank_features(phi: &DMatrix<f64>) -> FeatureRanking {
    let scores: Vec<f64> = (0..phi.nrows()).map(|i| phi.row(i).norm()).collect();
    FeatureRanking {
        order: order_of(&scores),
        scores,
    }
}

/// Ranks nodes by the sample variance of their raw values; the baseline
/// that ignores the graph and the labels.
pub fn variance_scores(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.ncols();
    (0..x.nrows())
        .map(|i| {
            let row = x.row(i);
            let mean = row.sum() / n as f64;
            row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
        })
        .collect()
}

fn order_of(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn check_gt(gt: &[usize], m: usize) -> Result<BTreeSet<usize>> {
    let set: BTreeSet<usize> = gt.iter().copied().collect();
    if set.is_empty() {
        return Err(DslError::InvalidParameter {
            name: "gt_nodes",
            message: "ground-truth set is empty".into(),
        });
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= m) {
        return Err(DslError::InvalidParameter {
            name: "gt_nodes",
            message: format!("node index {bad} out of range for {m} nodes"),
        });
    }
    if set.len() == m {
        return Err(DslError::InvalidParameter {
            name: "gt_nodes",
            message: "ground-truth set covers every node".into(),
        });
    }
    Ok(set)
}

/// Mann-Whitney recovery AUC: the probability that a uniformly drawn
/// ground-truth node outscores a uniformly drawn background node, ties
/// counting one half.
pub fn auc_gt_recovery(scores: &[f64], gt: &[usize]) -> Result<f64> {
    let m = scores.len();
    let set = check_gt(gt, m)?;
    let mut favorable = 0.0;
    let mut pairs = 0.0;
    for &g in &set {
        for b in 0..m {
            if set.contains(&b) {
                continue;
            }
            pairs += 1.0;
            if scores[g] > scores[b] {
                favorable += 1.0;
            } else if scores[g] == scores[b] {
                favorable += 0.5;
            }
        }
    }
    Ok(favorable / pairs)
}

/// Receiver operating characteristic of the score ranking against a
/// ground-truth set: one `(fpr, tpr)` point per distinct score threshold,
/// from `(0, 0)` to `(1, 1)`.
pub fn roc_points(scores: &[f64], gt: &[usize]) -> Result<Vec<(f64, f64)>> {
    let m = scores.len();
    let set = check_gt(gt, m)?;
    let order = order_of(scores);
    let n_pos = set.len() as f64;
    let n_neg = (m - set.len()) as f64;
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < m {
        // nodes sharing a score enter together
        let mut j = i;
        while j < m && scores[order[j]] == scores[order[i]] {
            if set.contains(&order[j]) {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / n_neg, tp as f64 / n_pos));
        i = j;
    }
    Ok(points)
}

/// Conductance and connected components of the subgraph induced by a
/// selected node set.
pub fn subgraph_report(graph: &SummaryGraph, selected: &[usize]) -> Result<SubgraphReport> {
    let set: BTreeSet<usize> = selected.iter().copied().collect();
    if let Some(&bad) = set.iter().find(|&&i| i >= graph.node_count()) {
        return Err(DslError::InvalidParameter {
            name: "selected",
            message: format!("node index {bad} out of range"),
        });
    }
    let hash: std::collections::HashSet<usize> = set.iter().copied().collect();
    let conductance = graph.conductance(&hash).ok();
    let components = graph.induced_components(&set);
    Ok(SubgraphReport {
        conductance,
        components,
    })
}

/// Stratified k-fold evaluation of the full pipeline.
///
/// Each fold fits the model on the training split, keeps the `k_features`
/// top-ranked nodes, trains a squared-margin classifier (`C = 1`) on the
/// raw values of those nodes, and scores the held-out split. A final fit
/// on all samples supplies the reported ranking quality (when `gt` is
/// given) and the conductance of the selected set. Deterministic for fixed
/// inputs and seed.
pub fn cross_validate(
    data: &Dataset,
    hp: &Hyperparams,
    k_features: usize,
    n_folds: usize,
    seed: u64,
    opts: &FitOptions,
    gt: Option<&[usize]>,
) -> Result<EvalReport> {
    let started = Instant::now();
    let m = data.n_nodes();
    let n = data.n_samples();
    if k_features == 0 || k_features >= m {
        return Err(DslError::InvalidParameter {
            name: "k_features",
            message: format!("{k_features} must lie in 1..{m}"),
        });
    }
    let folds = stratified_folds(data.y(), n_folds, seed)?;

    let fold_results: Vec<Result<(usize, usize)>> = folds
        .par_iter()
        .map(|fold| {
            let test: BTreeSet<usize> = fold.iter().copied().collect();
            let train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
            debug_assert!(train.iter().all(|i| !test.contains(i)));
            let train_data = data.subset_columns(&train)?;
            let model = fit(&train_data, hp, opts)?;
            let ranking = rank_features(model.selection.phi());
            let keep = &ranking.order[..k_features];

            let x = data.x();
            let train_sel = select_rows(x, keep, &train);
            let y_train: Vec<i8> = train.iter().map(|&i| data.y()[i]).collect();
            let clf = fit_svm(&train_sel, &y_train, 1.0, MarginFlavor::L2)?;

            let mut correct = 0usize;
            for &i in fold {
                let col = DVector::from_fn(k_features, |r, _| x[(keep[r], i)]);
                let pred: i8 = if clf.w.dot(&col) + clf.b >= 0.0 { 1 } else { -1 };
                if pred == data.y()[i] {
                    correct += 1;
                }
            }
            Ok((correct, fold.len()))
        })
        .collect();

    let mut per_fold = Vec::with_capacity(folds.len());
    let mut correct_total = 0usize;
    for r in fold_results {
        let (correct, size) = r?;
        per_fold.push(correct as f64 / size as f64);
        correct_total += correct;
    }

    let full = fit(data, hp, opts)?;
    let ranking = rank_features(full.selection.phi());
    let selected = &ranking.order[..k_features];
    let auc = match gt {
        Some(gt) => Some(auc_gt_recovery(&ranking.scores, gt)?),
        None => None,
    };
    let hash: std::collections::HashSet<usize> = selected.iter().copied().collect();
    let conductance = data.graph().conductance(&hash).ok();

    Ok(EvalReport {
        accuracy: correct_total as f64 / n as f64,
        auc,
        conductance,
        per_fold,
        k_selected: k_features,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Extracts `rows x cols` from a matrix as a dense block (rows = kept
/// nodes, cols = kept samples).
fn select_rows(x: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| x[(rows[r], cols[c])])
}
