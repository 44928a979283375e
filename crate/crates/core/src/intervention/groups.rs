//! Training-free group detection by synchronous label propagation.
//!
//! Each round every node adopts the most frequent label among itself and its
//! (undirected) neighbours, all nodes updating from the previous round's
//! labels; ties go to the smallest label. Propagation stops when nothing
//! changes or after [`LPA_MAX_ITERS`] rounds. If more than `group_count_hint`
//! groups remain, the smallest group is repeatedly merged into the neighbour
//! group it shares the most edges with. Groups with no outside edges are
//! merged last, into the smallest remaining group.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::graph::{neighbour_index, GraphBundle};

pub const LPA_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub group_of: Vec<usize>,
    pub group_count: usize,
}

impl GroupAssignment {
    /// Relabel arbitrary ids densely in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap = HashMap::new();
        let group_of: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = remap.len();
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Self {
            group_of,
            group_count: remap.len(),
        }
    }

    pub fn same_group(&self, u: usize, v: usize) -> bool {
        self.group_of[u] == self.group_of[v]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.group_count];
        for &g in &self.group_of {
            s[g] += 1;
        }
        s
    }
}

/// Synchronous label propagation; returns raw (non-dense) labels and the
/// number of rounds run.
pub fn label_propagation(bundle: &GraphBundle, max_iters: usize) -> (Vec<usize>, usize) {
    let idx = neighbour_index(bundle);
    let n = bundle.num_nodes();
    let nbrs: Vec<Vec<usize>> = (0..n).map(|v| idx.undirected_nbrs(v)).collect();
    let mut labels: Vec<usize> = (0..n).collect();
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut rounds = 0;
    for _ in 0..max_iters {
        rounds += 1;
        let next: Vec<usize> = (0..n)
            .map(|v| {
                counts.clear();
                *counts.entry(labels[v]).or_default() += 1;
                for &u in &nbrs[v] {
                    *counts.entry(labels[u]).or_default() += 1;
                }
                let mut best = (0usize, usize::MAX);
                for (&label, &c) in &counts {
                    if c > best.0 || (c == best.0 && label < best.1) {
                        best = (c, label);
                    }
                }
                best.1
            })
            .collect();
        let changed = next != labels;
        labels = next;
        if !changed {
            break;
        }
    }
    (labels, rounds)
}

/// Detect at most `group_count_hint` groups (0 means no cap).
pub fn detect_groups(bundle: &GraphBundle, group_count_hint: usize) -> GroupAssignment {
    let (labels, _) = label_propagation(bundle, LPA_MAX_ITERS);
    let mut groups = GroupAssignment::from_labels(&labels);
    if group_count_hint == 0 || groups.group_count <= group_count_hint {
        return groups;
    }
    merge_groups(bundle, &mut groups, group_count_hint);
    groups
}

fn merge_groups(bundle: &GraphBundle, groups: &mut GroupAssignment, target: usize) {
    let mut g = groups.group_of.clone();
    let mut size: HashMap<usize, usize> = HashMap::new();
    for &x in &g {
        *size.entry(x).or_default() += 1;
    }
    while size.len() > target {
        let mut connected: HashSet<usize> = HashSet::new();
        for &(s, d) in bundle.edges() {
            if g[s] != g[d] {
                connected.insert(g[s]);
                connected.insert(g[d]);
            }
        }
        // Merge order: smallest size, then smallest id.
        let pick = |ids: &mut dyn Iterator<Item = usize>| ids.min_by_key(|id| (size[id], *id));
        match pick(&mut connected.iter().copied()) {
            Some(id) => {
                let mut links: HashMap<usize, usize> = HashMap::new();
                for &(s, d) in bundle.edges() {
                    if g[s] == id && g[d] != id {
                        *links.entry(g[d]).or_default() += 1;
                    } else if g[d] == id && g[s] != id {
                        *links.entry(g[s]).or_default() += 1;
                    }
                }
                let (into, _) = links
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .expect("connected group has an outside edge");
                relabel(&mut g, &mut size, id, into);
            }
            None => {
                // Everything left is mutually disconnected.
                let id = pick(&mut size.keys().copied()).expect("non-empty");
                let into = pick(&mut size.keys().copied().filter(|&x| x != id)).expect("two groups");
                relabel(&mut g, &mut size, id, into);
            }
        }
    }
    *groups = GroupAssignment::from_labels(&g);
}

fn relabel(g: &mut [usize], size: &mut HashMap<usize, usize>, from: usize, into: usize) {
    for x in g.iter_mut() {
        if *x == from {
            *x = into;
        }
    }
    let moved = size.remove(&from).unwrap_or(0);
    *size.entry(into).or_default() += moved;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_bundle;
    use crate::tensor::Matrix;

    fn clique_edges(nodes: &[usize]) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for &a in nodes {
            for &b in nodes {
                if a != b {
                    e.push((a, b));
                }
            }
        }
        e
    }

    fn make(n: usize, edges: &[(usize, usize)]) -> GraphBundle {
        build_bundle(edges, Matrix::zeros(n, 1), vec![0; n], None).unwrap().0
    }

    #[test]
    fn two_disconnected_cliques() {
        let mut e = clique_edges(&[0, 1, 2, 3]);
        e.extend(clique_edges(&[4, 5, 6, 7]));
        let g = detect_groups(&make(8, &e), 4);
        assert_eq!(g.group_count, 2);
        assert_eq!(g.group_of, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn complete_graph_is_one_group() {
        let e = clique_edges(&(0..6).collect::<Vec<_>>());
        let g = detect_groups(&make(6, &e), 3);
        assert_eq!(g.group_count, 1);
    }

    #[test]
    fn merge_respects_hint_and_isolated_last() {
        // Triangle, an edge, and two isolated nodes.
        let mut e = clique_edges(&[0, 1, 2]);
        e.extend([(3, 4), (4, 3)]);
        let b = make(7, &e);
        let free = detect_groups(&b, 0);
        assert_eq!(free.group_count, 4);
        let capped = detect_groups(&b, 2);
        assert_eq!(capped.group_count, 2);
        assert!(capped.group_of.iter().all(|&x| x < 2));
    }

    #[test]
    fn dense_relabel_in_first_appearance_order() {
        let g = GroupAssignment::from_labels(&[7, 7, 3, 9, 3]);
        assert_eq!(g.group_of, vec![0, 0, 1, 2, 1]);
        assert_eq!(g.sizes(), vec![2, 2, 1]);
    }
}
