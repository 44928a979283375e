//! Counterfactual neighbourhood generation.
//!
//! Every node is wired (in both directions) to `k` nodes it is not currently
//! adjacent to. Candidates are ranked by cosine similarity of raw feature
//! rows; the `dissimilar` strategy draws from the `candidate_pool` least
//! similar candidates, `similar` from the most similar, `random` from all.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::graph::{add_edges_bidirectional, GraphBundle, GraphError, NeighbourIndex};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Random,
    Similar,
    Dissimilar,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Similar => "similar",
            Self::Dissimilar => "dissimilar",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "similar" => Ok(Self::Similar),
            "dissimilar" => Ok(Self::Dissimilar),
            other => Err(format!("unknown sampling strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CngConfig {
    pub strategy: SamplingStrategy,
    /// Counterfactual neighbours per node.
    pub k: usize,
    /// Ranked candidates to draw the `k` from; must be at least `k`.
    pub candidate_pool: usize,
}

impl Default for CngConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::Dissimilar,
            k: 5,
            candidate_pool: 15,
        }
    }
}

/// `map[v]` holds the counterfactual neighbours of node `v`, sorted.
pub type NeighbourMap = Vec<Vec<usize>>;

/// Row-normalised features in whichever layout makes all-pairs dot products
/// cheap. Zero rows stay zero, so their similarity to everything is 0.
enum UnitRows {
    Dense(Matrix),
    Sparse(Vec<Vec<(usize, f64)>>, Matrix),
}

impl UnitRows {
    fn new(x: &Matrix) -> Self {
        let mut unit = x.clone();
        for r in 0..unit.rows() {
            let row = unit.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let nnz = unit.as_slice().iter().filter(|v| **v != 0.0).count();
        if unit.is_empty() || nnz * 4 > unit.len() {
            return Self::Dense(unit);
        }
        let sparse = (0..unit.rows())
            .map(|r| {
                unit.row(r)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, v)| (c, *v))
                    .collect()
            })
            .collect();
        Self::Sparse(sparse, unit)
    }

    fn similarities(&self, v: usize) -> Vec<f64> {
        match self {
            Self::Dense(m) => {
                let a = m.row(v);
                (0..m.rows())
                    .map(|u| a.iter().zip(m.row(u)).map(|(p, q)| p * q).sum())
                    .collect()
            }
            Self::Sparse(rows, m) => {
                let a = &rows[v];
                (0..m.rows())
                    .map(|u| {
                        let b = m.row(u);
                        a.iter().map(|&(c, x)| x * b[c]).sum()
                    })
                    .collect()
            }
        }
    }
}

/// Cosine similarity of feature rows `a` and `b` (0 if either is zero).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Per-node ranked candidate pools. Depends only on features and structure,
/// so it can be computed once and re-sampled every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePools {
    strategy: SamplingStrategy,
    pools: Vec<Vec<usize>>,
}

impl CandidatePools {
    pub fn build(bundle: &GraphBundle, index: &NeighbourIndex, cfg: &CngConfig) -> Self {
        let n = bundle.num_nodes();
        if cfg.strategy == SamplingStrategy::Random || cfg.k == 0 {
            return Self {
                strategy: cfg.strategy,
                pools: vec![Vec::new(); n],
            };
        }
        let unit = UnitRows::new(bundle.features());
        let pool_size = cfg.candidate_pool.max(cfg.k);
        let dissimilar = cfg.strategy == SamplingStrategy::Dissimilar;
        let pools = (0..n)
            .into_par_iter()
            .map(|v| {
                let sims = unit.similarities(v);
                let mut cands: Vec<usize> = (0..n).filter(|&u| u != v && !index.adjacent(v, u)).collect();
                let cmp = |a: &usize, b: &usize| -> Ordering {
                    let o = sims[*a].total_cmp(&sims[*b]);
                    let o = if dissimilar { o } else { o.reverse() };
                    o.then(a.cmp(b))
                };
                if cands.len() > pool_size {
                    cands.select_nth_unstable_by(pool_size, cmp);
                    cands.truncate(pool_size);
                }
                cands.sort_unstable_by(cmp);
                cands
            })
            .collect();
        Self {
            strategy: cfg.strategy,
            pools,
        }
    }

    pub fn pool(&self, v: usize) -> &[usize] {
        &self.pools[v]
    }

    /// Draw `k` neighbours per node. Node `v` consumes stream `rng.split(v)`.
    pub fn sample(&self, index: &NeighbourIndex, k: usize, rng: &Rng) -> NeighbourMap {
        let n = self.pools.len();
        (0..n)
            .into_par_iter()
            .map(|v| {
                if k == 0 {
                    return Vec::new();
                }
                let mut stream = rng.split(v as u64);
                let mut chosen: Vec<usize> = if self.strategy == SamplingStrategy::Random {
                    let cands: Vec<usize> = (0..n).filter(|&u| u != v && !index.adjacent(v, u)).collect();
                    stream
                        .sample_indices(cands.len(), k)
                        .into_iter()
                        .map(|i| cands[i])
                        .collect()
                } else {
                    let pool = &self.pools[v];
                    stream
                        .sample_indices(pool.len(), k)
                        .into_iter()
                        .map(|i| pool[i])
                        .collect()
                };
                chosen.sort_unstable();
                chosen
            })
            .collect()
    }
}

pub fn sample_counterfactual_neighbours(
    bundle: &GraphBundle,
    index: &NeighbourIndex,
    cfg: &CngConfig,
    rng: &Rng,
) -> NeighbourMap {
    CandidatePools::build(bundle, index, cfg).sample(index, cfg.k, rng)
}

/// `G + Σ_v Σ_{u ∈ map[v]} {(v,u), (u,v)}`, skipping pairs already present.
pub fn build_counterfactual_graph(
    bundle: &GraphBundle,
    map: &[Vec<usize>],
) -> Result<GraphBundle, GraphError> {
    if map.len() > bundle.num_nodes() {
        return Err(GraphError::NodeOutOfRange {
            index: 0,
            node: map.len() - 1,
            num_nodes: bundle.num_nodes(),
        });
    }
    let pairs: Vec<(usize, usize)> = map
        .iter()
        .enumerate()
        .flat_map(|(v, us)| us.iter().map(move |&u| (v, u)))
        .collect();
    add_edges_bidirectional(bundle, &pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_bundle, neighbour_index};

    fn bundle(edges: &[(usize, usize)], rows: &[Vec<f64>]) -> GraphBundle {
        let n = rows.len();
        build_bundle(edges, Matrix::from_rows(rows), vec![0; n], None).unwrap().0
    }

    #[test]
    fn k_zero_gives_empty_sets() {
        let b = bundle(&[(0, 1)], &[vec![1.0], vec![2.0], vec![3.0]]);
        let idx = neighbour_index(&b);
        let cfg = CngConfig { k: 0, ..Default::default() };
        let m = sample_counterfactual_neighbours(&b, &idx, &cfg, &Rng::new(0));
        assert!(m.iter().all(Vec::is_empty));
    }

    #[test]
    fn neighbours_and_self_are_excluded() {
        let b = bundle(&[(0, 1), (1, 0)], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let idx = neighbour_index(&b);
        for strategy in [SamplingStrategy::Random, SamplingStrategy::Similar, SamplingStrategy::Dissimilar] {
            let cfg = CngConfig { strategy, k: 5, candidate_pool: 5 };
            let m = sample_counterfactual_neighbours(&b, &idx, &cfg, &Rng::new(1));
            assert_eq!(m[0], vec![2], "{strategy}");
            assert_eq!(m[2], vec![0, 1], "{strategy}");
        }
    }

    #[test]
    fn zero_rows_are_similarity_zero() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[-2.0, 0.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_map_is_identity() {
        let b = bundle(&[(0, 1), (1, 2)], &[vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(build_counterfactual_graph(&b, &[]).unwrap(), b);
        let g = build_counterfactual_graph(&b, &[vec![2], vec![], vec![]]).unwrap();
        assert_eq!(g.num_edges(), 4);
        assert!(build_counterfactual_graph(&b, &vec![vec![]; 4]).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let b = bundle(&[(0, 1), (2, 3)], &rows);
        let idx = neighbour_index(&b);
        let cfg = CngConfig::default();
        let a = sample_counterfactual_neighbours(&b, &idx, &cfg, &Rng::new(9));
        let c = sample_counterfactual_neighbours(&b, &idx, &cfg, &Rng::new(9));
        assert_eq!(a, c);
        assert!(a.iter().all(|s| s.len() == 5));
    }
}
