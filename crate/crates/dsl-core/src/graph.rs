//! Summary graphs over a shared node set.
//!
//! A collection of network samples on the same m nodes is condensed into one
//! weighted *summary graph*: the weight of edge (p, q) is the fraction of
//! samples whose structure contains that edge, so every weight lies in
//! (0, 1]. The combinatorial Laplacian of the summary graph,
//!
//! ```text
//! L = D - W,   D_pp = sum_q W_pq,
//! ```
//!
//! drives the smoothness regularizer of the selection objective: for any
//! column phi of a selection matrix,
//!
//! ```text
//! phi^T L phi = sum_{(p,q) in E} W_pq (phi_p - phi_q)^2 >= 0.
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::NetworkSample;
use crate::error::{DslError, Result};

/// Undirected weighted edge; endpoints are stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Weighted undirected graph on dense node ids `0..m`.
///
/// Node ids are internal; `node_names` keeps the original labels for files
/// and reports. Built either from per-sample edge sets
/// ([`build_summary_graph`]) or from an explicit weighted edge list.
#[derive(Debug, Clone)]
pub struct SummaryGraph {
    node_names: Vec<String>,
    edges: Vec<Edge>,
    degree: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    weight_index: HashMap<(usize, usize), f64>,
}

impl SummaryGraph {
    /// Builds a graph from `(a, b, weight)` triples over `node_names.len()`
    /// nodes. Rejects self-loops, duplicate edges, out-of-range endpoints,
    /// and weights outside (0, 1].
    pub fn from_weighted_edges(
        node_names: Vec<String>,
        raw_edges: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let m = node_names.len();
        let mut seen = BTreeSet::new();
        let mut edges = Vec::with_capacity(raw_edges.len());
        for &(p, q, w) in raw_edges {
            if p == q {
                return Err(DslError::SelfLoop {
                    node: node_names.get(p).cloned().unwrap_or_else(|| p.to_string()),
                });
            }
            let (a, b) = if p < q { (p, q) } else { (q, p) };
            if b >= m {
                return Err(DslError::UnknownNode {
                    node: b.to_string(),
                    context: "edge list".into(),
                });
            }
            if !seen.insert((a, b)) {
                return Err(DslError::InvalidParameter {
                    name: "edges",
                    message: format!("duplicate edge ({a}, {b})"),
                });
            }
            if !(w > 0.0 && w <= 1.0) || !w.is_finite() {
                return Err(DslError::InvalidParameter {
                    name: "edge weight",
                    message: format!("weight {w} for edge ({a}, {b}) outside (0, 1]"),
                });
            }
            edges.push(Edge { a, b, weight: w });
        }
        edges.sort_by(|e, f| (e.a, e.b).cmp(&(f.a, f.b)));
        Ok(Self::assemble(node_names, edges))
    }

    fn assemble(node_names: Vec<String>, edges: Vec<Edge>) -> Self {
        let m = node_names.len();
        let mut degree = vec![0.0; m];
        let mut neighbors = vec![Vec::new(); m];
        let mut weight_index = HashMap::with_capacity(edges.len());
        for e in &edges {
            degree[e.a] += e.weight;
            degree[e.b] += e.weight;
            neighbors[e.a].push(e.b);
            neighbors[e.b].push(e.a);
            weight_index.insert((e.a, e.b), e.weight);
        }
        SummaryGraph {
            node_names,
            edges,
            degree,
            neighbors,
            weight_index,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    /// Neighbor lists in ascending edge order; deterministic.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Weight of edge (p, q), or 0 when absent.
    pub fn weight(&self, p: usize, q: usize) -> f64 {
        let key = if p < q { (p, q) } else { (q, p) };
        self.weight_index.get(&key).copied().unwrap_or(0.0)
    }

    /// Dense combinatorial Laplacian `L = D - W` (m x m, symmetric, PSD,
    /// zero row sums). Built on demand; callers on a hot path should cache.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let m = self.node_count();
        let mut l = DMatrix::zeros(m, m);
        for e in &self.edges {
            l[(e.a, e.a)] += e.weight;
            l[(e.b, e.b)] += e.weight;
            l[(e.a, e.b)] -= e.weight;
            l[(e.b, e.a)] -= e.weight;
        }
        l
    }

    /// Conductance of a node set: cut(S) / min(vol(S), vol(V \ S)).
    ///
    /// Undefined (error) for the empty set, the full node set, and whenever
    /// the smaller side has zero volume (isolated-node selections).
    pub fn conductance(&self, node_set: &HashSet<usize>) -> Result<f64> {
        let m = self.node_count();
        if node_set.is_empty() {
            return Err(DslError::ConductanceUndefined {
                reason: "empty node set".into(),
            });
        }
        if node_set.len() >= m {
            return Err(DslError::ConductanceUndefined {
                reason: "full node set".into(),
            });
        }
        if let Some(&bad) = node_set.iter().find(|&&v| v >= m) {
            return Err(DslError::UnknownNode {
                node: bad.to_string(),
                context: "conductance node set".into(),
            });
        }
        let mut cut = 0.0;
        for e in &self.edges {
            if node_set.contains(&e.a) != node_set.contains(&e.b) {
                cut += e.weight;
            }
        }
        let vol_s: f64 = self.degree.iter().enumerate().fold(0.0, |acc, (v, d)| {
            if node_set.contains(&v) {
                acc + d
            } else {
                acc
            }
        });
        let vol_total: f64 = self.degree.iter().sum();
        let denom = vol_s.min(vol_total - vol_s);
        if denom <= 0.0 {
            return Err(DslError::ConductanceUndefined {
                reason: "smaller side has zero volume (isolated selection)".into(),
            });
        }
        Ok(cut / denom)
    }

    /// Number of connected components of the subgraph induced by `nodes`.
    pub fn induced_components(&self, nodes: &BTreeSet<usize>) -> Vec<Vec<usize>> {
        let mut unvisited: BTreeSet<usize> =
            nodes.iter().copied().filter(|&v| v < self.node_count()).collect();
        let mut components = Vec::new();
        while let Some(&start) = unvisited.iter().next() {
            let mut comp = vec![start];
            let mut stack = vec![start];
            unvisited.remove(&start);
            while let Some(v) = stack.pop() {
                for &u in &self.neighbors[v] {
                    if unvisited.remove(&u) {
                        comp.push(u);
                        stack.push(u);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }
}

/// Condenses labeled network samples into a summary graph: weight of (p, q)
/// is the fraction of samples whose edge set contains (p, q). Samples
/// without an edge set contribute no edges. All samples must agree on the
/// node dimension; self-loops are rejected.
pub fn build_summary_graph(samples: &[NetworkSample]) -> Result<SummaryGraph> {
    if samples.is_empty() {
        return Err(DslError::EmptyDataset);
    }
    let m = samples[0].values.len();
    for (i, s) in samples.iter().enumerate() {
        if s.values.len() != m {
            return Err(DslError::DimensionMismatch {
                context: format!("sample {i} node values"),
                expected: m,
                found: s.values.len(),
            });
        }
    }
    let n = samples.len() as f64;
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for s in samples {
        if let Some(edge_set) = &s.edge_presence {
            for &(p, q) in edge_set {
                if p == q {
                    return Err(DslError::SelfLoop {
                        node: p.to_string(),
                    });
                }
                let key = if p < q { (p, q) } else { (q, p) };
                if key.1 >= m {
                    return Err(DslError::UnknownNode {
                        node: key.1.to_string(),
                        context: "sample edge set".into(),
                    });
                }
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }
    let edges: Vec<Edge> = counts
        .into_iter()
        .map(|((a, b), c)| Edge {
            a,
            b,
            weight: c as f64 / n,
        })
        .collect();
    let names = (0..m).map(|i| i.to_string()).collect();
    Ok(SummaryGraph::assemble(names, edges))
}

/// Samples `n` points uniformly in the unit square; deterministic per seed.
pub fn generate_geometric_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
    points_with_rng(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Same as [`generate_geometric_points`] but drawing from a caller-owned
/// generator, so composite generators can hand out one stream per role.
pub(crate) fn points_with_rng(n: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            [x, y]
        })
        .collect()
}

/// Edge (p, q) present iff the Euclidean distance between the points is
/// strictly below `tau`.
pub fn edges_within_radius(points: &[[f64; 2]], tau: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for p in 0..points.len() {
        for q in (p + 1)..points.len() {
            let dx = points[p][0] - points[q][0];
            let dy = points[p][1] - points[q][1];
            if (dx * dx + dy * dy).sqrt() < tau {
                edges.push((p, q));
            }
        }
    }
    edges
}

/// Random geometric graph: `n` uniform points in the unit square, unit-weight
/// edge wherever the pairwise distance is below `tau`. Bit-identical output
/// for a fixed seed.
pub fn generate_geometric_graph(n: usize, tau: f64, seed: u64) -> Result<SummaryGraph> {
    if n == 0 {
        return Err(DslError::InvalidParameter {
            name: "n_nodes",
            message: "need at least one node".into(),
        });
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(DslError::InvalidParameter {
            name: "tau",
            message: format!("radius {tau} must be finite and non-negative"),
        });
    }
    let points = generate_geometric_points(n, seed);
    let triples: Vec<(usize, usize, f64)> = edges_within_radius(&points, tau)
        .into_iter()
        .map(|(p, q)| (p, q, 1.0))
        .collect();
    let names = (0..n).map(|i| i.to_string()).collect();
    SummaryGraph::from_weighted_edges(names, &triples)
}
