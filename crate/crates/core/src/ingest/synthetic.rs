//! Planted-causal benchmark with a controllable spurious shift.
//!
//! Nodes are split into `num_groups` contiguous blocks of a stochastic block
//! model. Each group `g` has a fixed causal mean vector and the label is
//! `g mod 2`, so the label is a deterministic function of the causal mean.
//! Node features are the concatenation of
//!
//! * a causal block: the group mean plus `N(0, causal_noise²)` per entry,
//! * a spurious block: `±spurious_signal` times a fixed sign pattern plus
//!   unit Gaussian noise, where the sign encodes a spurious label that
//!   equals the true label with probability `spurious_*_corr`,
//! * a noise block of unit Gaussians.
//!
//! The train and test graphs are independent draws from the same block model
//! and share the group means; only the spurious agreement rate differs.

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::graph::{build_bundle_with_classes, GraphBundle};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_groups: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub causal_dim: usize,
    pub spurious_dim: usize,
    pub noise_dim: usize,
    pub spurious_train_corr: f64,
    pub spurious_test_corr: f64,
    pub seed: u64,
    /// Entry scale of the per-group causal means.
    pub causal_signal: f64,
    /// Standard deviation of per-node causal noise.
    pub causal_noise: f64,
    /// Offset of the spurious block mean.
    pub spurious_signal: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 1000,
            num_groups: 4,
            intra_edge_prob: 0.02,
            inter_edge_prob: 0.002,
            causal_dim: 8,
            spurious_dim: 8,
            noise_dim: 16,
            spurious_train_corr: 0.9,
            spurious_test_corr: 0.1,
            seed: 7,
            causal_signal: 1.0,
            causal_noise: 1.0,
            spurious_signal: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn feature_dim(&self) -> usize {
        self.causal_dim + self.spurious_dim + self.noise_dim
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InvalidSpec(m));
        if self.num_groups < 2 {
            return bad(format!("num_groups {} must be at least 2", self.num_groups));
        }
        if self.num_groups > self.num_nodes {
            return bad(format!(
                "num_groups {} exceeds num_nodes {}",
                self.num_groups, self.num_nodes
            ));
        }
        if self.causal_dim == 0 || self.spurious_dim == 0 || self.noise_dim == 0 {
            return bad("causal_dim, spurious_dim and noise_dim must be >= 1".into());
        }
        for (name, p) in [
            ("intra_edge_prob", self.intra_edge_prob),
            ("inter_edge_prob", self.inter_edge_prob),
            ("spurious_train_corr", self.spurious_train_corr),
            ("spurious_test_corr", self.spurious_test_corr),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        for (name, s) in [
            ("causal_signal", self.causal_signal),
            ("causal_noise", self.causal_noise),
            ("spurious_signal", self.spurious_signal),
        ] {
            if !(s >= 0.0) || !s.is_finite() {
                return bad(format!("{name} {s} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: GraphBundle,
    pub test: GraphBundle,
    /// Planted block of every node (identical for both splits).
    pub groups: Vec<usize>,
    pub train_spurious: Vec<usize>,
    pub test_spurious: Vec<usize>,
}

fn sbm_edges(spec: &SyntheticSpec, groups: &[usize], rng: &mut Rng) -> Vec<(usize, usize)> {
    let n = spec.num_nodes;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if groups[u] == groups[v] {
                spec.intra_edge_prob
            } else {
                spec.inter_edge_prob
            };
            if rng.bernoulli(p) {
                edges.push((u, v));
                edges.push((v, u));
            }
        }
    }
    edges
}

struct Split {
    bundle: GraphBundle,
    spurious: Vec<usize>,
}

fn draw_split(
    spec: &SyntheticSpec,
    groups: &[usize],
    means: &Matrix,
    pattern: &[f64],
    corr: f64,
    mut rng: Rng,
) -> Result<Split, IngestError> {
    let n = spec.num_nodes;
    let edges = sbm_edges(spec, groups, &mut rng);
    let labels: Vec<usize> = groups.iter().map(|g| g % 2).collect();
    let mut x = Matrix::zeros(n, spec.feature_dim());
    let mut spurious = Vec::with_capacity(n);
    for v in 0..n {
        let row = x.row_mut(v);
        let (causal, rest) = row.split_at_mut(spec.causal_dim);
        let (spur, noise) = rest.split_at_mut(spec.spurious_dim);
        for (j, c) in causal.iter_mut().enumerate() {
            *c = means.get(groups[v], j) + spec.causal_noise * rng.normal();
        }
        let s = if rng.bernoulli(corr) { labels[v] } else { 1 - labels[v] };
        spurious.push(s);
        let sign = if s == 1 { 1.0 } else { -1.0 };
        for (c, p) in spur.iter_mut().zip(pattern) {
            *c = sign * spec.spurious_signal * p + rng.normal();
        }
        for c in noise.iter_mut() {
            *c = rng.normal();
        }
    }
    let (bundle, _) = build_bundle_with_classes(&edges, x, labels, None, 2)?;
    Ok(Split { bundle, spurious })
}

/// Generate the train and shifted test graphs for `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, IngestError> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let n = spec.num_nodes;
    let groups: Vec<usize> = (0..n).map(|v| v * spec.num_groups / n).collect();

    let mut shared = root.split_named("shared");
    let mut means = Matrix::zeros(spec.num_groups, spec.causal_dim);
    for g in 0..spec.num_groups {
        for j in 0..spec.causal_dim {
            let sign = if shared.bernoulli(0.5) { 1.0 } else { -1.0 };
            means.set(g, j, sign * spec.causal_signal);
        }
    }
    let pattern: Vec<f64> = (0..spec.spurious_dim)
        .map(|_| if shared.bernoulli(0.5) { 1.0 } else { -1.0 })
        .collect();

    let train = draw_split(spec, &groups, &means, &pattern, spec.spurious_train_corr, root.split_named("train"))?;
    let test = draw_split(spec, &groups, &means, &pattern, spec.spurious_test_corr, root.split_named("test"))?;
    Ok(SyntheticData {
        train: train.bundle,
        test: test.bundle,
        groups,
        train_spurious: train.spurious,
        test_spurious: test.spurious,
    })
}
