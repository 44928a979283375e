//! Immutable node-classification graphs.
//!
//! A [`GraphBundle`] stores a directed edge list without duplicates or
//! self-loops, a dense feature matrix, integer labels and optional per-edge
//! weights. Undirected data is stored with both directions present. Feature
//! and label storage is reference counted, so structural edits (which happen
//! every training epoch) copy only the edge list.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::tensor::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {index}: node id {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange {
        index: usize,
        node: usize,
        num_nodes: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("node {node}: label {label} outside [0, {class_count})")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        class_count: usize,
    },
    #[error("node set is empty")]
    EmptyNodeSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Arc<Matrix>,
    labels: Arc<Vec<usize>>,
    edge_weights: Option<Vec<f64>>,
    class_count: usize,
}

/// What `build_bundle` dropped while normalising the edge list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub duplicates_removed: usize,
    pub self_loops_removed: usize,
}

/// Validate inputs and produce a bundle with stable first-occurrence dedup
/// and self-loops removed. `class_count` is `max(label) + 1`.
pub fn build_bundle(
    edges: &[(usize, usize)],
    features: Matrix,
    labels: Vec<usize>,
    weights: Option<Vec<f64>>,
) -> Result<(GraphBundle, BuildReport), GraphError> {
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    build_bundle_with_classes(edges, features, labels, weights, class_count)
}

pub fn build_bundle_with_classes(
    edges: &[(usize, usize)],
    features: Matrix,
    labels: Vec<usize>,
    weights: Option<Vec<f64>>,
    class_count: usize,
) -> Result<(GraphBundle, BuildReport), GraphError> {
    let num_nodes = features.rows();
    if labels.len() != num_nodes {
        return Err(GraphError::Dimension(format!(
            "{} feature rows but {} labels",
            num_nodes,
            labels.len()
        )));
    }
    if let Some(w) = &weights {
        if w.len() != edges.len() {
            return Err(GraphError::Dimension(format!(
                "{} edges but {} edge weights",
                edges.len(),
                w.len()
            )));
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(GraphError::NonFinite {
                what: "edge weight",
                index: i,
            });
        }
    }
    if let Some(i) = features.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(GraphError::NonFinite {
            what: "feature",
            index: i,
        });
    }
    for (node, &label) in labels.iter().enumerate() {
        if label >= class_count {
            return Err(GraphError::LabelOutOfRange {
                node,
                label,
                class_count,
            });
        }
    }
    for (index, &(s, d)) in edges.iter().enumerate() {
        for node in [s, d] {
            if node >= num_nodes {
                return Err(GraphError::NodeOutOfRange {
                    index,
                    node,
                    num_nodes,
                });
            }
        }
    }

    let mut report = BuildReport::default();
    let mut seen = HashSet::with_capacity(edges.len());
    let mut kept = Vec::with_capacity(edges.len());
    let mut kept_w = weights.as_ref().map(|_| Vec::with_capacity(edges.len()));
    for (i, &(s, d)) in edges.iter().enumerate() {
        if s == d {
            report.self_loops_removed += 1;
            continue;
        }
        if !seen.insert((s, d)) {
            report.duplicates_removed += 1;
            continue;
        }
        kept.push((s, d));
        if let (Some(kw), Some(w)) = (kept_w.as_mut(), weights.as_ref()) {
            kw.push(w[i]);
        }
    }
    Ok((
        GraphBundle {
            num_nodes,
            edges: kept,
            features: Arc::new(features),
            labels: Arc::new(labels),
            edge_weights: kept_w,
            class_count,
        },
        report,
    ))
}

impl GraphBundle {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn edge_weights(&self) -> Option<&[f64]> {
        self.edge_weights.as_deref()
    }

    /// Weight of edge `e`, 1.0 when the bundle carries no weights.
    pub fn weight(&self, e: usize) -> f64 {
        self.edge_weights.as_ref().map_or(1.0, |w| w[e])
    }

    /// Weights for every edge, materialising the implicit 1.0 default.
    pub fn weights_or_ones(&self) -> Vec<f64> {
        self.edge_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.edges.len()])
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    /// Number of unordered node pairs joined by at least one edge.
    pub fn undirected_edge_count(&self) -> usize {
        self.edges
            .iter()
            .map(|&(s, d)| (s.min(d), s.max(d)))
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn is_symmetric(&self) -> bool {
        let set = self.edge_set();
        self.edges.iter().all(|&(s, d)| set.contains(&(d, s)))
    }

    /// Same nodes, features and labels with a new edge list. Callers
    /// guarantee validity (subset of existing edges or checked additions).
    pub(crate) fn with_edges(&self, edges: Vec<(usize, usize)>, weights: Option<Vec<f64>>) -> Self {
        debug_assert!(weights.as_ref().is_none_or(|w| w.len() == edges.len()));
        Self {
            num_nodes: self.num_nodes,
            edges,
            features: Arc::clone(&self.features),
            labels: Arc::clone(&self.labels),
            edge_weights: weights,
            class_count: self.class_count,
        }
    }

    /// Keep the edges at `idx` (in the given order), carrying their weights.
    pub fn retain_edge_indices(&self, idx: &[usize]) -> Self {
        let edges = idx.iter().map(|&i| self.edges[i]).collect();
        let weights = self
            .edge_weights
            .as_ref()
            .map(|w| idx.iter().map(|&i| w[i]).collect());
        self.with_edges(edges, weights)
    }

    /// Replace edge weights; length must match the edge count.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self, GraphError> {
        if weights.len() != self.edges.len() {
            return Err(GraphError::Dimension(format!(
                "{} edges but {} weights",
                self.edges.len(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|x| !x.is_finite()) {
            return Err(GraphError::NonFinite {
                what: "edge weight",
                index: i,
            });
        }
        Ok(self.with_edges(self.edges.clone(), Some(weights)))
    }

    /// Deterministic content hash over structure, weights, features, labels.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.num_nodes.hash(&mut h);
        self.class_count.hash(&mut h);
        self.edges.hash(&mut h);
        if let Some(w) = &self.edge_weights {
            for x in w {
                x.to_bits().hash(&mut h);
            }
        }
        self.features.shape().hash(&mut h);
        for x in self.features.as_slice() {
            x.to_bits().hash(&mut h);
        }
        self.labels.hash(&mut h);
        h.finish()
    }
}

/// Sorted in/out adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighbourIndex {
    pub in_nbrs: Vec<Vec<usize>>,
    pub out_nbrs: Vec<Vec<usize>>,
}

impl NeighbourIndex {
    pub fn in_degree(&self, v: usize) -> usize {
        self.in_nbrs[v].len()
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out_nbrs[v].len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        self.in_nbrs.iter().map(Vec::len).collect()
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        self.out_nbrs.iter().map(Vec::len).collect()
    }

    /// True if an edge joins `u` and `v` in either direction.
    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.out_nbrs[u].binary_search(&v).is_ok() || self.in_nbrs[u].binary_search(&v).is_ok()
    }

    /// Sorted union of in- and out-neighbours.
    pub fn undirected_nbrs(&self, v: usize) -> Vec<usize> {
        let mut all: Vec<usize> = self.in_nbrs[v].iter().chain(&self.out_nbrs[v]).copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

pub fn neighbour_index(bundle: &GraphBundle) -> NeighbourIndex {
    let n = bundle.num_nodes();
    let mut in_nbrs = vec![Vec::new(); n];
    let mut out_nbrs = vec![Vec::new(); n];
    for &(s, d) in bundle.edges() {
        out_nbrs[s].push(d);
        in_nbrs[d].push(s);
    }
    for l in in_nbrs.iter_mut().chain(out_nbrs.iter_mut()) {
        l.sort_unstable();
    }
    NeighbourIndex { in_nbrs, out_nbrs }
}

/// Add `(v,u)` and `(u,v)` for each pair, skipping edges already present
/// and self pairs. New edges get weight 1.0 when the bundle is weighted.
pub fn add_edges_bidirectional(
    bundle: &GraphBundle,
    pairs: &[(usize, usize)],
) -> Result<GraphBundle, GraphError> {
    let n = bundle.num_nodes();
    for (index, &(a, b)) in pairs.iter().enumerate() {
        for node in [a, b] {
            if node >= n {
                return Err(GraphError::NodeOutOfRange {
                    index,
                    node,
                    num_nodes: n,
                });
            }
        }
    }
    let mut set = bundle.edge_set();
    let mut edges = bundle.edges().to_vec();
    let mut weights = bundle.edge_weights().map(<[f64]>::to_vec);
    for &(v, u) in pairs {
        if v == u {
            continue;
        }
        for e in [(v, u), (u, v)] {
            if set.insert(e) {
                edges.push(e);
                if let Some(w) = weights.as_mut() {
                    w.push(1.0);
                }
            }
        }
    }
    Ok(bundle.with_edges(edges, weights))
}

/// Induced subgraph on `nodes`, ids remapped to `0..k` in ascending order of
/// the original ids. Returns the bundle and the new→old id table.
pub fn subsample_nodes(
    bundle: &GraphBundle,
    nodes: &[usize],
) -> Result<(GraphBundle, Vec<usize>), GraphError> {
    let mut keep: Vec<usize> = nodes.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.is_empty() {
        return Err(GraphError::EmptyNodeSet);
    }
    let n = bundle.num_nodes();
    if let Some(&bad) = keep.iter().find(|&&v| v >= n) {
        return Err(GraphError::NodeOutOfRange {
            index: 0,
            node: bad,
            num_nodes: n,
        });
    }
    let mut new_id = vec![usize::MAX; n];
    for (i, &v) in keep.iter().enumerate() {
        new_id[v] = i;
    }
    let mut edges = Vec::new();
    let mut weights = bundle.edge_weights().map(|_| Vec::new());
    for (e, &(s, d)) in bundle.edges().iter().enumerate() {
        if new_id[s] != usize::MAX && new_id[d] != usize::MAX {
            edges.push((new_id[s], new_id[d]));
            if let Some(w) = weights.as_mut() {
                w.push(bundle.weight(e));
            }
        }
    }
    let features = bundle.features().select_rows(&keep);
    let labels = keep.iter().map(|&v| bundle.labels()[v]).collect();
    let sub = GraphBundle {
        num_nodes: keep.len(),
        edges,
        features: Arc::new(features),
        labels: Arc::new(labels),
        edge_weights: weights,
        class_count: bundle.class_count(),
    };
    Ok((sub, keep))
}
