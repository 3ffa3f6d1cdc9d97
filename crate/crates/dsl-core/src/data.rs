//! Labeled network samples and the dataset container.
//!
//! A dataset holds the node-by-sample value matrix `X` (m x n, one column
//! per sample), binary labels in {-1, +1}, and the shared summary graph.
//! The synthetic generator reproduces the planted-subgraph protocol used
//! throughout the tests: a random geometric graph, a connected ground-truth
//! ball of nodes whose values separate the classes, and background nodes
//! whose values track the per-sample ground-truth mean plus Gaussian noise.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DslError, Result};
use crate::graph::{self, SummaryGraph};

/// One observed network: a value per node, a class label, and optionally the
/// sample's own edge set (`None` means the sample carries no structure).
#[derive(Debug, Clone)]
pub struct NetworkSample {
    pub values: Vec<f64>,
    pub label: i8,
    pub edge_presence: Option<BTreeSet<(usize, usize)>>,
}

/// Aligned value matrix, labels, and summary graph.
///
/// The graph is reference-counted so fold subsets share it without copies.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<i8>,
    graph: Arc<SummaryGraph>,
}

impl Dataset {
    /// Assembles a dataset from parts, validating dimensions and labels.
    pub fn new(x: DMatrix<f64>, y: Vec<i8>, graph: Arc<SummaryGraph>) -> Result<Self> {
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(DslError::EmptyDataset);
        }
        if y.len() != x.ncols() {
            return Err(DslError::DimensionMismatch {
                context: "labels vs sample columns".into(),
                expected: x.ncols(),
                found: y.len(),
            });
        }
        if graph.node_count() != x.nrows() {
            return Err(DslError::DimensionMismatch {
                context: "graph nodes vs matrix rows".into(),
                expected: x.nrows(),
                found: graph.node_count(),
            });
        }
        for &label in &y {
            if label != 1 && label != -1 {
                return Err(DslError::InvalidLabel {
                    found: label.to_string(),
                });
            }
        }
        Ok(Dataset { x, y, graph })
    }

    /// Node-by-sample value matrix (m x n).
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[i8] {
        &self.y
    }

    pub fn y_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| v as f64).collect()
    }

    pub fn graph(&self) -> &SummaryGraph {
        &self.graph
    }

    pub fn graph_handle(&self) -> Arc<SummaryGraph> {
        Arc::clone(&self.graph)
    }

    pub fn n_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }

    /// Returns (count of -1, count of +1).
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.y.iter().filter(|&&v| v == 1).count();
        (self.y.len() - pos, pos)
    }

    /// New dataset restricted to the given sample columns (graph shared).
    pub fn subset_columns(&self, cols: &[usize]) -> Result<Dataset> {
        if cols.is_empty() {
            return Err(DslError::EmptyDataset);
        }
        for &c in cols {
            if c >= self.n_samples() {
                return Err(DslError::DimensionMismatch {
                    context: "column subset".into(),
                    expected: self.n_samples(),
                    found: c,
                });
            }
        }
        let x = self.x.select_columns(cols.iter());
        let y = cols.iter().map(|&c| self.y[c]).collect();
        Ok(Dataset {
            x,
            y,
            graph: Arc::clone(&self.graph),
        })
    }
}

/// Builds the value matrix and summary graph from a list of samples.
/// Columns follow sample order.
pub fn assemble_data_matrix(samples: &[NetworkSample]) -> Result<Dataset> {
    if samples.len() < 2 {
        return Err(if samples.is_empty() {
            DslError::EmptyDataset
        } else {
            DslError::InvalidParameter {
                name: "samples",
                message: "need at least two samples".into(),
            }
        });
    }
    let graph = graph::build_summary_graph(samples)?;
    let m = graph.node_count();
    let n = samples.len();
    let mut x = DMatrix::zeros(m, n);
    let mut y = Vec::with_capacity(n);
    for (j, s) in samples.iter().enumerate() {
        for (i, &v) in s.values.iter().enumerate() {
            x[(i, j)] = v;
        }
        y.push(s.label);
    }
    Dataset::new(x, y, Arc::new(graph))
}

/// Parameters of the planted-subgraph generator.
///
/// `sigma` is the *standard deviation* of the background noise. Positive
/// samples draw ground-truth values uniformly from `pos_range`, negative
/// samples from `neg_range`; every background node draws from
/// `N(mu_i, sigma^2)` where `mu_i` is that sample's mean ground-truth value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticConfig {
    pub n_nodes: usize,
    pub tau: f64,
    pub n_samples: usize,
    pub gt_size: usize,
    pub sigma: f64,
    pub pos_range: (f64, f64),
    pub neg_range: (f64, f64),
    pub seed: u64,
}

impl SyntheticConfig {
    /// Geometry and value ranges used by the headline experiments:
    /// 100 nodes, radius 0.2, 300 samples, ground truth of 15, values in
    /// [50, 100] / [-100, -50].
    pub fn preset(sigma: f64, seed: u64) -> Self {
        SyntheticConfig {
            n_nodes: 100,
            tau: 0.2,
            n_samples: 300,
            gt_size: 15,
            sigma,
            pos_range: (50.0, 100.0),
            neg_range: (-100.0, -50.0),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |name, message: String| Err(DslError::InvalidParameter { name, message });
        if self.n_nodes == 0 {
            return bad("n_nodes", "need at least one node".into());
        }
        if self.n_samples < 2 {
            return bad("n_samples", "need at least two samples".into());
        }
        if self.gt_size == 0 || self.gt_size > self.n_nodes {
            return bad(
                "gt_size",
                format!("{} outside 1..={}", self.gt_size, self.n_nodes),
            );
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad("sigma", format!("{} must be finite and >= 0", self.sigma));
        }
        if !(self.pos_range.0 <= self.pos_range.1) {
            return bad("pos_range", format!("{:?} not ordered", self.pos_range));
        }
        if !(self.neg_range.0 <= self.neg_range.1) {
            return bad("neg_range", format!("{:?} not ordered", self.neg_range));
        }
        Ok(())
    }
}

/// Generator output: the dataset, the planted node set (ascending), and the
/// node coordinates of the geometric graph.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub gt_nodes: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
}

/// Splittable sub-generator: one master seed, one ChaCha stream per role, so
/// instances can be generated independently yet reproducibly.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_GRAPH: u64 = 0;
const STREAM_GT: u64 = 1;
const STREAM_SAMPLE_BASE: u64 = 2;

/// Generates a planted-subgraph dataset. Bit-identical for a fixed config.
///
/// The ground truth is a BFS ball: a start node is drawn uniformly among
/// nodes whose connected component can hold `gt_size` nodes (uniform over
/// eligible starts, equivalent to rejection sampling), then the first
/// `gt_size` nodes in BFS order form the planted set, which is connected by
/// construction. Labels are balanced with ceil(n/2) positives first.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let m = cfg.n_nodes;
    let n = cfg.n_samples;

    let mut graph_rng = stream_rng(cfg.seed, STREAM_GRAPH);
    let coords = graph::points_with_rng(m, &mut graph_rng);
    let triples: Vec<(usize, usize, f64)> = graph::edges_within_radius(&coords, cfg.tau)
        .into_iter()
        .map(|(p, q)| (p, q, 1.0))
        .collect();
    let names = (0..m).map(|i| i.to_string()).collect();
    let graph = SummaryGraph::from_weighted_edges(names, &triples)?;

    let gt_nodes = pick_gt_ball(&graph, cfg.gt_size, &mut stream_rng(cfg.seed, STREAM_GT))?;
    let gt_set: BTreeSet<usize> = gt_nodes.iter().copied().collect();

    let n_pos = n.div_ceil(2);
    let mut x = DMatrix::zeros(m, n);
    let mut y = Vec::with_capacity(n);
    for j in 0..n {
        let positive = j < n_pos;
        y.push(if positive { 1i8 } else { -1i8 });
        let (lo, hi) = if positive { cfg.pos_range } else { cfg.neg_range };
        let mut rng = stream_rng(cfg.seed, STREAM_SAMPLE_BASE + j as u64);
        let mut gt_sum = 0.0;
        for &node in &gt_nodes {
            let v = if lo == hi { lo } else { rng.random_range(lo..hi) };
            x[(node, j)] = v;
            gt_sum += v;
        }
        let mu = gt_sum / gt_nodes.len() as f64;
        if cfg.sigma == 0.0 {
            for i in 0..m {
                if !gt_set.contains(&i) {
                    x[(i, j)] = mu;
                }
            }
        } else {
            let normal = Normal::new(mu, cfg.sigma).expect("validated sigma");
            for i in 0..m {
                if !gt_set.contains(&i) {
                    x[(i, j)] = normal.sample(&mut rng);
                }
            }
        }
    }

    let dataset = Dataset::new(x, y, Arc::new(graph))?;
    Ok(SyntheticData {
        dataset,
        gt_nodes,
        coords,
    })
}

/// First `gt_size` nodes in BFS order from an eligible random start; any BFS
/// prefix is connected because each visited node links to an earlier one.
fn pick_gt_ball(graph: &SummaryGraph, gt_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let m = graph.node_count();
    let component = component_labels(graph);
    let mut component_size = vec![0usize; m];
    for &c in &component {
        component_size[c] += 1;
    }
    let eligible: Vec<usize> = (0..m)
        .filter(|&v| component_size[component[v]] >= gt_size)
        .collect();
    if eligible.is_empty() {
        return Err(DslError::InvalidParameter {
            name: "gt_size",
            message: format!("{gt_size} exceeds the largest connected component"),
        });
    }
    let start = eligible[rng.random_range(0..eligible.len())];
    let mut ball = Vec::with_capacity(gt_size);
    let mut visited = vec![false; m];
    let mut queue = std::collections::VecDeque::from([start]);
    visited[start] = true;
    while let Some(v) = queue.pop_front() {
        ball.push(v);
        if ball.len() == gt_size {
            break;
        }
        for &u in graph.neighbors(v) {
            if !visited[u] {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    debug_assert_eq!(ball.len(), gt_size);
    ball.sort_unstable();
    Ok(ball)
}

fn component_labels(graph: &SummaryGraph) -> Vec<usize> {
    let m = graph.node_count();
    let mut label = vec![usize::MAX; m];
    for start in 0..m {
        if label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = start;
        while let Some(v) = stack.pop() {
            for &u in graph.neighbors(v) {
                if label[u] == usize::MAX {
                    label[u] = start;
                    stack.push(u);
                }
            }
        }
    }
    label
}

/// Stratified k-fold split: shuffles each class independently (seeded) and
/// deals round-robin, so per-class counts across folds differ by at most
/// one. Returns the k test-index sets, each sorted ascending.
pub fn stratified_folds(y: &[i8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(DslError::InvalidParameter {
            name: "n_folds",
            message: format!("{k} must be at least 2"),
        });
    }
    for &label in y {
        if label != 1 && label != -1 {
            return Err(DslError::InvalidLabel {
                found: label.to_string(),
            });
        }
    }
    let mut folds = vec![Vec::new(); k];
    for (class_stream, class) in [(0u64, -1i8), (1u64, 1i8)] {
        let mut idx: Vec<usize> = y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == class)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(DslError::SingleClass);
        }
        if idx.len() < k {
            return Err(DslError::InvalidParameter {
                name: "n_folds",
                message: format!(
                    "class {class} has {} members, fewer than {k} folds",
                    idx.len()
                ),
            });
        }
        let mut rng = stream_rng(seed, class_stream);
        idx.shuffle(&mut rng);
        for (j, sample) in idx.into_iter().enumerate() {
            folds[j % k].push(sample);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plain_sample(values: Vec<f64>, label: i8) -> NetworkSample {
        NetworkSample {
            values,
            label,
            edge_presence: Some([(0, 1)].into_iter().collect()),
        }
    }

    #[test]
    fn assemble_orders_columns_by_sample() {
        let samples = vec![
            plain_sample(vec![1.0, 2.0], 1),
            plain_sample(vec![3.0, 4.0], -1),
            plain_sample(vec![5.0, 6.0], 1),
        ];
        let ds = assemble_data_matrix(&samples).unwrap();
        assert_eq!(ds.n_nodes(), 2);
        assert_eq!(ds.n_samples(), 3);
        assert_eq!(ds.x().column(0).as_slice(), &[1.0, 2.0]);
        assert_eq!(ds.x().column(2).as_slice(), &[5.0, 6.0]);
        assert_eq!(ds.y(), &[1, -1, 1]);
    }

    #[test]
    fn assemble_rejects_single_sample() {
        let s = plain_sample(vec![1.0, 2.0], 1);
        assert!(matches!(
            assemble_data_matrix(&[s]),
            Err(DslError::InvalidParameter { .. })
        ));
        assert!(matches!(
            assemble_data_matrix(&[]),
            Err(DslError::EmptyDataset)
        ));
    }

    #[test]
    fn identical_samples_give_rank_one_matrix() {
        let samples: Vec<_> = (0..4)
            .map(|i| plain_sample(vec![2.0, -1.0, 0.5], if i % 2 == 0 { 1 } else { -1 }))
            .collect();
        let ds = assemble_data_matrix(&samples).unwrap();
        assert!(ds.x().rank(1e-9) <= 1);
    }

    #[test]
    fn synthetic_dimensions_and_balance() {
        let cfg = SyntheticConfig::preset(40.0f64.sqrt(), 7);
        let out = generate_synthetic(&cfg).unwrap();
        assert_eq!(out.dataset.n_nodes(), 100);
        assert_eq!(out.dataset.n_samples(), 300);
        assert_eq!(out.gt_nodes.len(), 15);
        let (neg, pos) = out.dataset.class_counts();
        assert_eq!((neg, pos), (150, 150));
        // positives come first
        assert!(out.dataset.y()[..150].iter().all(|&v| v == 1));
        assert!(out.dataset.y()[150..].iter().all(|&v| v == -1));
    }

    #[test]
    fn synthetic_value_ranges() {
        let cfg = SyntheticConfig {
            n_nodes: 40,
            tau: 0.3,
            n_samples: 20,
            gt_size: 6,
            sigma: 3.0,
            pos_range: (50.0, 100.0),
            neg_range: (-100.0, -50.0),
            seed: 11,
        };
        let out = generate_synthetic(&cfg).unwrap();
        for j in 0..20 {
            let (lo, hi) = if out.dataset.y()[j] == 1 {
                (50.0, 100.0)
            } else {
                (-100.0, -50.0)
            };
            for &g in &out.gt_nodes {
                let v = out.dataset.x()[(g, j)];
                assert!((lo..=hi).contains(&v), "gt value {v} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn synthetic_sigma_zero_background_equals_gt_mean() {
        let cfg = SyntheticConfig {
            n_nodes: 30,
            tau: 0.3,
            n_samples: 10,
            gt_size: 5,
            sigma: 0.0,
            pos_range: (50.0, 100.0),
            neg_range: (-100.0, -50.0),
            seed: 3,
        };
        let out = generate_synthetic(&cfg).unwrap();
        let gt: BTreeSet<usize> = out.gt_nodes.iter().copied().collect();
        for j in 0..10 {
            let mu: f64 =
                out.gt_nodes.iter().map(|&g| out.dataset.x()[(g, j)]).sum::<f64>() / 5.0;
            for i in 0..30 {
                if !gt.contains(&i) {
                    assert_eq!(out.dataset.x()[(i, j)], mu, "node {i} sample {j}");
                }
            }
        }
    }

    #[test]
    fn synthetic_gt_ball_is_connected() {
        for seed in 0..5 {
            let cfg = SyntheticConfig::preset(5.0, seed);
            let out = generate_synthetic(&cfg).unwrap();
            let set: std::collections::BTreeSet<usize> = out.gt_nodes.iter().copied().collect();
            assert_eq!(out.dataset.graph().induced_components(&set).len(), 1);
        }
    }

    #[test]
    fn synthetic_deterministic_per_seed() {
        let cfg = SyntheticConfig::preset(6.0, 42);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.dataset.x(), b.dataset.x());
        assert_eq!(a.gt_nodes, b.gt_nodes);
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.dataset.graph().edges(), b.dataset.graph().edges());
    }

    #[test]
    fn synthetic_gt_size_exceeding_components_errors() {
        let cfg = SyntheticConfig {
            n_nodes: 10,
            tau: 0.0, // edgeless: every component has one node
            n_samples: 4,
            gt_size: 2,
            sigma: 1.0,
            pos_range: (50.0, 100.0),
            neg_range: (-100.0, -50.0),
            seed: 0,
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(DslError::InvalidParameter { name: "gt_size", .. })
        ));
    }

    #[test]
    fn folds_balanced_examples() {
        let y: Vec<i8> = [[1i8; 5], [-1i8; 5]].concat();
        let folds = stratified_folds(&y, 5, 0).unwrap();
        for fold in &folds {
            assert_eq!(fold.len(), 2);
            let pos = fold.iter().filter(|&&i| y[i] == 1).count();
            assert_eq!(pos, 1);
        }
        let y = vec![1i8, 1, -1, -1];
        let folds = stratified_folds(&y, 2, 9).unwrap();
        for fold in &folds {
            assert_eq!(fold.len(), 2);
            let pos = fold.iter().filter(|&&i| y[i] == 1).count();
            assert_eq!(pos, 1);
        }
    }

    #[test]
    fn folds_reject_small_classes() {
        let y = vec![1i8, 1, 1, -1];
        assert!(matches!(
            stratified_folds(&y, 2, 0),
            Err(DslError::InvalidParameter { .. })
        ));
        let y = vec![1i8, 1, 1, 1];
        assert!(matches!(stratified_folds(&y, 2, 0), Err(DslError::SingleClass)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]

        #[test]
        fn folds_partition_all_indices(
            n_pos in 3usize..20,
            n_neg in 3usize..20,
            k in 2usize..4,
            seed in 0u64..500,
        ) {
            prop_assume!(n_pos >= k && n_neg >= k);
            let y: Vec<i8> = std::iter::repeat_n(1i8, n_pos)
                .chain(std::iter::repeat_n(-1i8, n_neg))
                .collect();
            let folds = stratified_folds(&y, k, seed).unwrap();
            let mut seen = vec![false; y.len()];
            for fold in &folds {
                for &i in fold {
                    prop_assert!(!seen[i], "index {i} in two folds");
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            let pos_counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| y[i] == 1).count())
                .collect();
            let (mn, mx) = (
                pos_counts.iter().min().unwrap(),
                pos_counts.iter().max().unwrap(),
            );
            prop_assert!(mx - mn <= 1, "positive counts {pos_counts:?}");
        }
    }
}
