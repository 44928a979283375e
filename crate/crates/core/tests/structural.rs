//! Property tests of the structural operations against brute-force oracles.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use cnl_core::graph::{add_edges_bidirectional, build_bundle, neighbour_index, GraphBundle};
use cnl_core::intervention::{
    build_counterfactual_graph, detect_groups, mask_budget, mask_by_importance, perturb_group_aware,
    sample_counterfactual_neighbours, CngConfig, GroupAssignment, SamplingStrategy,
};
use cnl_core::model::EdgeScores;
use cnl_core::tensor::{segment_softmax_values, Matrix, Tape};
use cnl_core::Rng;
use common::{random_graph, random_matrix};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 128,
        ..ProptestConfig::default()
    }
}

fn edge_set(b: &GraphBundle) -> HashSet<(usize, usize)> {
    b.edges().iter().copied().collect()
}

fn random_scores(m: usize, rng: &mut Rng, coarse: bool) -> EdgeScores {
    // Coarse values force ties so the tie-break rules are exercised.
    let draw = |rng: &mut Rng| {
        if coarse {
            (rng.below(4) as f64) / 4.0
        } else {
            rng.uniform()
        }
    };
    EdgeScores {
        raw: (0..m).map(|_| draw(rng)).collect(),
        normalized: (0..m).map(|_| draw(rng)).collect(),
    }
}

/// Removed edge indices by explicit tuple sort.
fn sort_and_cut(scores: &EdgeScores, tau: f64) -> BTreeSet<usize> {
    let m = scores.raw.len();
    let mut keyed: Vec<(f64, f64, usize)> = (0..m).map(|e| (scores.normalized[e], scores.raw[e], e)).collect();
    keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cut = (tau * m as f64).floor() as usize;
    keyed.into_iter().take(cut).map(|t| t.2).collect()
}

/// Every sampled neighbour is a non-neighbour, the input edges survive, and
/// the counterfactual graph equals the union oracle, for all strategies.
pub fn check_counterfactual_graph_is_set_union(seed: u64, n: usize, k: usize) -> Result<(), TestCaseError> {
    let mut rng = Rng::new(seed);
    let g = random_graph(n, 3.0, 4, 2, &mut rng);
    let index = neighbour_index(&g);
    for strategy in [SamplingStrategy::Random, SamplingStrategy::Similar, SamplingStrategy::Dissimilar] {
        let cfg = CngConfig { strategy, k, candidate_pool: 3 * k };
        let map = sample_counterfactual_neighbours(&g, &index, &cfg, &rng.split_named("cng"));
        for (v, us) in map.iter().enumerate() {
            for &u in us {
                prop_assert!(u != v && !index.adjacent(v, u));
            }
        }
        let cf = build_counterfactual_graph(&g, &map).unwrap();
        let mut oracle = edge_set(&g);
        for (v, us) in map.iter().enumerate() {
            for &u in us {
                oracle.insert((v, u));
                oracle.insert((u, v));
            }
        }
        let got = edge_set(&cf);
        prop_assert_eq!(got.len(), cf.num_edges());
        prop_assert!(edge_set(&g).is_subset(&got));
        prop_assert_eq!(got, oracle);
    }
    Ok(())
}

/// Group perturbation keeps intra-group edges and symmetry, and masking the
/// perturbed graph yields a subset of both graphs.
pub fn check_perturb_then_mask_is_subset(seed: u64, n: usize, p: f64, tau: f64) -> Result<(), TestCaseError> {
    let mut rng = Rng::new(seed);
    let g = random_graph(n, 4.0, 3, 2, &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
    let groups = GroupAssignment::from_labels(&labels);
    let perturbed = perturb_group_aware(&g, &groups, p, &mut rng.split_named("group")).unwrap();
    let pe = edge_set(&perturbed.graph);
    for &(s, d) in g.edges() {
        if groups.same_group(s, d) {
            prop_assert!(pe.contains(&(s, d)));
        }
        // One draw per unordered pair keeps the graph symmetric.
        prop_assert_eq!(pe.contains(&(s, d)), pe.contains(&(d, s)));
    }
    let scores = random_scores(perturbed.graph.num_edges(), &mut rng, false);
    let masked = mask_by_importance(&perturbed.graph, &scores, tau).unwrap();
    let me = edge_set(&masked.graph);
    prop_assert!(me.is_subset(&pe));
    prop_assert!(me.is_subset(&edge_set(&g)));
    Ok(())
}

/// Masking removes exactly `floor(tau * m)` edges, the same ones as the
/// sort-and-cut oracle, monotonically in `tau`.
pub fn check_mask_equals_sort_and_cut(seed: u64, m: usize, tau: f64, coarse: bool) -> Result<(), TestCaseError> {
    let mut rng = Rng::new(seed);
    let n = 40;
    let mut pairs = BTreeSet::new();
    while pairs.len() < m {
        let (s, d) = (rng.below(n), rng.below(n));
        if s != d {
            pairs.insert((s, d));
        }
    }
    let edges: Vec<(usize, usize)> = pairs.into_iter().collect();
    let g = build_bundle(&edges, Matrix::zeros(n, 1), vec![0; n], None).unwrap().0;
    let scores = random_scores(m, &mut rng, coarse);
    let masked = mask_by_importance(&g, &scores, tau).unwrap();
    let removed: BTreeSet<usize> = (0..m).filter(|e| !masked.kept.contains(e)).collect();
    prop_assert_eq!(removed.len(), (tau * m as f64).floor() as usize);
    prop_assert_eq!(removed.len(), mask_budget(m, tau));
    prop_assert_eq!(&removed, &sort_and_cut(&scores, tau));
    // Monotone in τ.
    let tau2 = tau + (1.0 - tau) * rng.uniform();
    let masked2 = mask_by_importance(&g, &scores, tau2).unwrap();
    let kept2: HashSet<usize> = masked2.kept.iter().copied().collect();
    for e in &removed {
        prop_assert!(!kept2.contains(e));
    }
    Ok(())
}

/// Segment softmax matches the brute-force per-target softmax and sums to
/// one for every populated target.
pub fn check_segment_softmax_normalises_per_target(seed: u64, m: usize, n: usize) -> Result<(), TestCaseError> {
    let mut rng = Rng::new(seed);
    let logits: Vec<f64> = (0..m).map(|_| 5.0 * rng.normal()).collect();
    let targets: Vec<usize> = (0..m).map(|_| rng.below(n)).collect();
    let mut tape = Tape::new();
    let l = tape.constant(Matrix::column(&logits));
    let s = tape.segment_softmax(l, Arc::from(targets.clone()), n).unwrap();
    let out = tape.value(s).as_slice().to_vec();
    let mut sums = vec![0.0; n];
    for (e, &t) in targets.iter().enumerate() {
        prop_assert!(out[e] > 0.0 && out[e] <= 1.0);
        sums[t] += out[e];
        // Brute force: softmax over the edges sharing this target.
        let denom: f64 = (0..m).filter(|&f| targets[f] == t).map(|f| logits[f].exp()).sum();
        prop_assert!((out[e] - logits[e].exp() / denom).abs() < 1e-12);
    }
    for t in 0..n {
        if targets.contains(&t) {
            prop_assert!((sums[t] - 1.0).abs() < 1e-6);
        }
    }
    prop_assert_eq!(segment_softmax_values(&logits, &targets, n), out);
    Ok(())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn counterfactual_graph_is_set_union(seed in any::<u64>(), n in 2usize..30, k in 0usize..6) {
        check_counterfactual_graph_is_set_union(seed, n, k)?;
    }

    #[test]
    fn perturb_then_mask_is_subset(seed in any::<u64>(), n in 2usize..40, p in 0.0f64..=1.0, tau in 0.0f64..1.0) {
        check_perturb_then_mask_is_subset(seed, n, p, tau)?;
    }

    #[test]
    fn mask_equals_sort_and_cut(seed in any::<u64>(), m in 0usize..200, tau in 0.0f64..1.0, coarse in any::<bool>()) {
        check_mask_equals_sort_and_cut(seed, m, tau, coarse)?;
    }

    #[test]
    fn segment_softmax_normalises_per_target(seed in any::<u64>(), m in 1usize..60, n in 1usize..12) {
        check_segment_softmax_normalises_per_target(seed, m, n)?;
    }

    #[test]
    fn scatter_sum_equals_dense_adjacency(seed in any::<u64>(), n in 1usize..15, d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let g = random_graph(n, 3.0, d, 1, &mut rng);
        let x = random_matrix(n, d, &mut rng);
        let coef: Vec<f64> = (0..g.num_edges()).map(|_| rng.uniform()).collect();
        let src: Arc<[usize]> = g.edges().iter().map(|e| e.0).collect();
        let dst: Arc<[usize]> = g.edges().iter().map(|e| e.1).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let cv = tape.constant(Matrix::column(&coef));
        let gathered = tape.row_select(xv, src.clone()).unwrap();
        let msg = tape.hadamard(gathered, cv).unwrap();
        let scattered = tape.scatter_sum(msg, dst.clone(), n).unwrap();
        let fused = tape.gather_scatter(xv, cv, src, dst, n).unwrap();
        let mut adj = Matrix::zeros(n, n);
        for (e, &(s, t)) in g.edges().iter().enumerate() {
            adj.set(t, s, adj.get(t, s) + coef[e]);
        }
        let dense = adj.matmul(&x);
        for (a, b) in tape.value(scattered).as_slice().iter().zip(dense.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in tape.value(fused).as_slice().iter().zip(dense.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn graph_construction_invariants(seed in any::<u64>(), n in 1usize..30, extra in 0usize..6) {
        let mut rng = Rng::new(seed);
        let g = random_graph(n, 3.0, 2, 1, &mut rng);
        let index = neighbour_index(&g);
        prop_assert_eq!(index.in_degrees().iter().sum::<usize>(), g.num_edges());
        prop_assert_eq!(index.out_degrees().iter().sum::<usize>(), g.num_edges());
        let mut out_count = vec![0; n];
        for &(s, _) in g.edges() {
            out_count[s] += 1;
        }
        prop_assert_eq!(index.out_degrees(), out_count);
        // A second build is a fixpoint.
        let again = build_bundle(g.edges(), g.features().clone(), g.labels().to_vec(), None).unwrap();
        prop_assert_eq!(again.0.edges(), g.edges());
        prop_assert_eq!(again.1.duplicates_removed + again.1.self_loops_removed, 0);
        let pairs: Vec<(usize, usize)> = (0..extra).map(|_| (rng.below(n), rng.below(n))).collect();
        let grown = add_edges_bidirectional(&g, &pairs).unwrap();
        let mut oracle = edge_set(&g);
        for &(a, b) in &pairs {
            if a != b {
                oracle.insert((a, b));
                oracle.insert((b, a));
            }
        }
        prop_assert_eq!(edge_set(&grown), oracle);
        prop_assert_eq!(grown.num_edges(), edge_set(&grown).len());
    }

    #[test]
    fn detected_groups_are_dense(seed in any::<u64>(), n in 1usize..40, hint in 0usize..5) {
        let mut rng = Rng::new(seed);
        let g = random_graph(n, 2.0, 1, 1, &mut rng);
        let a = detect_groups(&g, hint);
        prop_assert_eq!(a.group_of.len(), n);
        prop_assert!(a.group_of.iter().all(|&x| x < a.group_count));
        prop_assert_eq!(a.sizes().iter().filter(|&&s| s == 0).count(), 0);
        if hint > 0 {
            prop_assert!(a.group_count <= hint);
        }
        prop_assert_eq!(&a, &detect_groups(&g, hint));
    }
}
