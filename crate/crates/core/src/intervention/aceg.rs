//! Adaptive causal edge generation: group-aware edge perturbation followed by
//! importance-guided masking, plus train-time edge-weight noise.
//!
//! All structural steps only remove edges and report which input edges they
//! kept, so scores computed on the original graph can be carried through.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{GroupAssignment, InterventionError};
use crate::graph::GraphBundle;
use crate::model::EdgeScores;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Drop probability for each inter-group node pair.
    pub inter_group_drop_prob: f64,
    /// Fraction of lowest-importance edges removed by masking (τ).
    pub mask_drop_rate: f64,
    /// Standard deviation of additive edge-weight noise.
    pub edge_noise_sigma: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            inter_group_drop_prob: 0.3,
            mask_drop_rate: 0.1,
            edge_noise_sigma: 0.1,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<(), InterventionError> {
        let p = self.inter_group_drop_prob;
        if !(0.0..=1.0).contains(&p) {
            return Err(InterventionError::InvalidArgument(format!(
                "inter_group_drop_prob {p} outside [0, 1]"
            )));
        }
        let t = self.mask_drop_rate;
        if !(0.0..1.0).contains(&t) {
            return Err(InterventionError::InvalidArgument(format!(
                "mask_drop_rate {t} outside [0, 1)"
            )));
        }
        if !(self.edge_noise_sigma >= 0.0) {
            return Err(InterventionError::InvalidArgument(format!(
                "edge_noise_sigma {} must be >= 0",
                self.edge_noise_sigma
            )));
        }
        Ok(())
    }
}

/// A perturbed graph with the indices (into the input edge list) it kept.
#[derive(Debug, Clone)]
pub struct Retained {
    pub graph: GraphBundle,
    pub kept: Vec<usize>,
}

/// Keep every intra-group edge; drop each inter-group node pair with
/// probability `drop_prob`. Both directions of a pair share one draw, taken
/// in order of the pair's first appearance in the edge list.
pub fn perturb_group_aware(
    bundle: &GraphBundle,
    groups: &GroupAssignment,
    drop_prob: f64,
    rng: &mut Rng,
) -> Result<Retained, InterventionError> {
    if groups.group_of.len() != bundle.num_nodes() {
        return Err(InterventionError::InvalidArgument(format!(
            "group assignment covers {} nodes, graph has {}",
            groups.group_of.len(),
            bundle.num_nodes()
        )));
    }
    let mut decided: HashMap<(usize, usize), bool> = HashMap::new();
    let mut kept = Vec::with_capacity(bundle.num_edges());
    for (e, &(s, d)) in bundle.edges().iter().enumerate() {
        if groups.same_group(s, d) {
            kept.push(e);
            continue;
        }
        let keep = *decided
            .entry((s.min(d), s.max(d)))
            .or_insert_with(|| !rng.bernoulli(drop_prob));
        if keep {
            kept.push(e);
        }
    }
    Ok(Retained {
        graph: bundle.retain_edge_indices(&kept),
        kept,
    })
}

/// Edge indices in removal order: ascending normalised importance, then
/// ascending raw logit, then ascending index.
pub fn removal_order(scores: &EdgeScores) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores.normalized[a]
            .total_cmp(&scores.normalized[b])
            .then(scores.raw[a].total_cmp(&scores.raw[b]))
            .then(a.cmp(&b))
    });
    order
}

/// Number of edges masking removes at rate `tau`: `⌊τ·|E|⌋`.
pub fn mask_budget(num_edges: usize, tau: f64) -> usize {
    ((tau * num_edges as f64).floor() as usize).min(num_edges)
}

/// Remove the `⌊τ·|E|⌋` lowest-importance edges. The selection is fully
/// determined by the scores and tie-break rule.
pub fn mask_by_importance(
    bundle: &GraphBundle,
    scores: &EdgeScores,
    tau: f64,
) -> Result<Retained, InterventionError> {
    if scores.len() != bundle.num_edges() {
        return Err(InterventionError::Misaligned {
            scores: scores.len(),
            edges: bundle.num_edges(),
        });
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(InterventionError::InvalidArgument(format!(
            "mask rate {tau} outside [0, 1]"
        )));
    }
    let budget = mask_budget(bundle.num_edges(), tau);
    let mut drop = vec![false; bundle.num_edges()];
    for &e in removal_order(scores).iter().take(budget) {
        drop[e] = true;
    }
    let kept: Vec<usize> = (0..bundle.num_edges()).filter(|&e| !drop[e]).collect();
    Ok(Retained {
        graph: bundle.retain_edge_indices(&kept),
        kept,
    })
}

/// Remove exactly `count` edges chosen uniformly at random.
pub fn drop_random_edges(bundle: &GraphBundle, count: usize, rng: &mut Rng) -> Retained {
    let m = bundle.num_edges();
    let mut drop = vec![false; m];
    for e in rng.sample_indices(m, count) {
        drop[e] = true;
    }
    let kept: Vec<usize> = (0..m).filter(|&e| !drop[e]).collect();
    Retained {
        graph: bundle.retain_edge_indices(&kept),
        kept,
    }
}

/// `w ← max(w + N(0, σ²), 0)` per edge. `σ = 0` returns the input as is.
pub fn noise_edge_weights(
    bundle: &GraphBundle,
    sigma: f64,
    rng: &mut Rng,
) -> Result<GraphBundle, InterventionError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(InterventionError::InvalidArgument(format!(
            "edge noise sigma {sigma} must be finite and >= 0"
        )));
    }
    if sigma == 0.0 {
        return Ok(bundle.clone());
    }
    let weights: Vec<f64> = (0..bundle.num_edges())
        .map(|e| (bundle.weight(e) + sigma * rng.normal()).max(0.0))
        .collect();
    Ok(bundle.with_weights(weights)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_bundle;
    use crate::tensor::Matrix;

    fn ring(n: usize) -> GraphBundle {
        let mut e = Vec::new();
        for i in 0..n {
            e.push((i, (i + 1) % n));
            e.push(((i + 1) % n, i));
        }
        build_bundle(&e, Matrix::zeros(n, 1), vec![0; n], None).unwrap().0
    }

    fn halves(n: usize) -> GroupAssignment {
        GroupAssignment::from_labels(&(0..n).map(|i| usize::from(i >= n / 2)).collect::<Vec<_>>())
    }

    #[test]
    fn drop_prob_zero_and_one() {
        let g = ring(10);
        let groups = halves(10);
        let mut rng = Rng::new(0);
        let same = perturb_group_aware(&g, &groups, 0.0, &mut rng).unwrap();
        assert_eq!(same.graph, g);
        let intra = perturb_group_aware(&g, &groups, 1.0, &mut rng).unwrap();
        assert!(intra.graph.edges().iter().all(|&(s, d)| groups.same_group(s, d)));
        // Ring of 10 split in halves has 2 inter-group pairs, 4 directed edges.
        assert_eq!(intra.graph.num_edges(), 16);
    }

    #[test]
    fn pair_decisions_are_symmetric() {
        let g = ring(40);
        let groups = GroupAssignment::from_labels(&(0..40).map(|i| i % 3).collect::<Vec<_>>());
        for seed in 0..10 {
            let out = perturb_group_aware(&g, &groups, 0.5, &mut Rng::new(seed)).unwrap();
            assert!(out.graph.is_symmetric());
        }
    }

    #[test]
    fn tau_zero_removes_nothing() {
        let g = ring(5);
        let s = EdgeScores::uniform_for(&g);
        assert_eq!(mask_by_importance(&g, &s, 0.0).unwrap().graph, g);
    }

    #[test]
    fn uniform_scores_tie_break_by_index() {
        let g = ring(5);
        let s = EdgeScores {
            raw: vec![0.0; 10],
            normalized: vec![0.5; 10],
        };
        let out = mask_by_importance(&g, &s, 0.5).unwrap();
        assert_eq!(out.kept, vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn misaligned_scores_rejected() {
        let g = ring(5);
        let s = EdgeScores {
            raw: vec![0.0; 3],
            normalized: vec![1.0; 3],
        };
        assert!(matches!(
            mask_by_importance(&g, &s, 0.1),
            Err(InterventionError::Misaligned { scores: 3, edges: 10 })
        ));
    }

    #[test]
    fn edge_noise_zero_and_clamp() {
        let g = ring(4);
        let mut rng = Rng::new(3);
        assert_eq!(noise_edge_weights(&g, 0.0, &mut rng).unwrap(), g);
        let noisy = noise_edge_weights(&g, 50.0, &mut rng).unwrap();
        let w = noisy.edge_weights().unwrap();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!(w.iter().any(|&x| x == 0.0));
    }

    #[test]
    fn random_drop_exact_count() {
        let g = ring(20);
        let out = drop_random_edges(&g, 7, &mut Rng::new(2));
        assert_eq!(out.graph.num_edges(), 33);
    }
}
