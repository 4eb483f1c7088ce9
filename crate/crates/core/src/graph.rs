//! Undirected node-labelled graphs and datasets of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An undirected graph with categorical node labels and a class label.
///
/// Adjacency lists are kept sorted and symmetric; self-loops and duplicate
/// edges are dropped on construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    node_labels: Vec<usize>,
    class_label: usize,
}

impl Graph {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_labels: Vec<usize>,
        class_label: usize,
    ) -> Result<Self> {
        if node_labels.len() != n {
            return Err(Error::Domain(format!(
                "{} node labels for a graph of {n} nodes",
                node_labels.len()
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Domain(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                continue;
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            adjacency,
            node_labels,
            class_label,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    pub fn node_labels(&self) -> &[usize] {
        &self.node_labels
    }

    pub fn class_label(&self) -> usize {
        self.class_label
    }

    pub fn degree_sequence_sorted(&self) -> Vec<usize> {
        let mut d: Vec<usize> = (0..self.n()).map(|v| self.degree(v)).collect();
        d.sort_unstable();
        d
    }

    pub fn label_multiset(&self) -> Vec<usize> {
        let mut l = self.node_labels.clone();
        l.sort_unstable();
        l
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Graph {
        let n = self.n();
        debug_assert_eq!(perm.len(), n);
        let mut labels = vec![0; n];
        for v in 0..n {
            labels[perm[v]] = self.node_labels[v];
        }
        let edges: Vec<_> = self.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        Graph::new(n, edges, labels, self.class_label).expect("permutation preserves validity")
    }

    /// The graph re-ordered so that position `i` holds node `order[i]`.
    pub fn reorder(&self, order: &[usize]) -> Graph {
        let mut perm = vec![0; order.len()];
        for (pos, &v) in order.iter().enumerate() {
            perm[v] = pos;
        }
        self.relabel(&perm)
    }
}

/// A labelled collection of graphs with contiguous class and node-label ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub label_alphabet_size: usize,
    /// Original class value for each contiguous class id.
    pub class_values: Vec<i64>,
    /// Original node-label value for each contiguous label id.
    pub node_label_values: Vec<i64>,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn class_labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::class_label).collect()
    }

    pub fn max_graph_size(&self) -> usize {
        self.graphs.iter().map(Graph::n).max().unwrap_or(0)
    }

    pub fn avg_graph_size(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(|g| g.n() as f64).sum::<f64>() / self.graphs.len() as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in &self.graphs {
            counts[g.class_label()] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_symmetrizes_and_dedups() {
        let g = Graph::new(3, [(0, 1), (1, 0), (1, 2), (2, 2)], vec![0, 0, 0], 0).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert!(g.has_edge(1, 0));
        assert!(g.has_edge(2, 1));
        assert!(!g.has_edge(2, 2));
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Graph::new(2, [(0, 2)], vec![0, 0], 0).is_err());
        assert!(Graph::new(2, [(0, 1)], vec![0], 0).is_err());
    }

    #[test]
    fn reorder_is_inverse_of_relabel() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)], vec![3, 1, 2, 0], 1).unwrap();
        let perm = [2, 0, 3, 1];
        let h = g.relabel(&perm);
        let mut order = vec![0; 4];
        for (v, &p) in perm.iter().enumerate() {
            order[p] = v;
        }
        assert_eq!(g.reorder(&order), h);
        assert_eq!(h.node_labels()[2], 3);
        assert!(h.has_edge(2, 0));
    }
}
