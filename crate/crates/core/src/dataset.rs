//! TU-Dortmund benchmark loading, node-id permutation and one-hot encoding.
//!
//! The flat-file layout is the one published with the benchmark collection:
//!
//! * `<name>_A.txt`: one `u, v` line per (directed) adjacency entry, 1-based
//!   global node ids,
//! * `<name>_graph_indicator.txt`: graph id of node `i` on line `i`,
//! * `<name>_graph_labels.txt`: class of graph `i` on line `i`,
//! * `<name>_node_labels.txt`: label of node `i` on line `i`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::rng;

/// Sentinel for dummy nodes used to pad node sequences and receptive fields.
pub const PAD: usize = usize::MAX;

pub const TU_SUFFIXES: [&str; 4] = ["A", "graph_indicator", "graph_labels", "node_labels"];

/// Files of dataset `name`, looked up in `root/name/` when that directory
/// exists and in `root` otherwise.
pub fn dataset_files(root: &Path, name: &str) -> Vec<PathBuf> {
    let nested = root.join(name);
    let root = if nested.is_dir() { nested } else { root.to_path_buf() };
    TU_SUFFIXES
        .iter()
        .map(|s| root.join(format!("{name}_{s}.txt")))
        .collect()
}

struct Lines {
    file: String,
    text: String,
}

impl Lines {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self { file, text })
    }

    /// Non-empty lines with their 1-based line numbers.
    fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            file: self.file.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn ints(&self) -> Result<Vec<i64>> {
        self.iter()
            .map(|(ln, l)| {
                l.parse::<i64>()
                    .map_err(|_| self.err(ln, format!("expected an integer, found {l:?}")))
            })
            .collect()
    }
}

/// Maps raw values to contiguous ids in ascending value order.
fn contiguous(values: &[i64]) -> (Vec<usize>, Vec<i64>) {
    let mut table: BTreeMap<i64, usize> = values.iter().map(|&v| (v, 0)).collect();
    for (i, slot) in table.values_mut().enumerate() {
        *slot = i;
    }
    let ids = values.iter().map(|v| table[v]).collect();
    (ids, table.into_keys().collect())
}

/// Loads dataset `name` from `root`.
///
/// Node ids, class values and node-label values are re-indexed to contiguous
/// 0-based ranges; the original values are kept in the returned dataset.
pub fn load_tu_dataset(root: &Path, name: &str) -> Result<GraphDataset> {
    let files = dataset_files(root, name);
    let adjacency = Lines::read(&files[0])?;
    let indicator = Lines::read(&files[1])?;
    let graph_labels = Lines::read(&files[2])?;
    let node_labels = Lines::read(&files[3])?;

    let graph_of_node = indicator.ints()?;
    let raw_node_labels = node_labels.ints()?;
    let raw_classes = graph_labels.ints()?;
    let num_graphs = raw_classes.len();
    if num_graphs == 0 {
        return Err(graph_labels.err(1, "no graphs listed"));
    }
    if raw_node_labels.len() != graph_of_node.len() {
        return Err(node_labels.err(
            raw_node_labels.len().min(graph_of_node.len()) + 1,
            format!(
                "{} node labels but {} nodes in the graph indicator",
                raw_node_labels.len(),
                graph_of_node.len()
            ),
        ));
    }

    // global node -> (graph, local index)
    let mut sizes = vec![0usize; num_graphs];
    let mut local = Vec::with_capacity(graph_of_node.len());
    for (ln, &gid) in indicator.iter().map(|(ln, _)| ln).zip(&graph_of_node) {
        if gid < 1 || gid as usize > num_graphs {
            return Err(indicator.err(
                ln,
                format!("graph id {gid} outside 1..={num_graphs}"),
            ));
        }
        let g = gid as usize - 1;
        local.push((g, sizes[g]));
        sizes[g] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(graph_labels.err(empty + 1, format!("graph {} has zero nodes", empty + 1)));
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let num_nodes = local.len();
    for (ln, line) in adjacency.iter() {
        let mut parts = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(adjacency.err(ln, format!("expected \"u, v\", found {line:?}")));
        };
        let parse = |s: &str| -> Result<usize> {
            let v: i64 = s
                .parse()
                .map_err(|_| adjacency.err(ln, format!("expected a node id, found {s:?}")))?;
            if v < 1 || v as usize > num_nodes {
                return Err(adjacency.err(ln, format!("edge references unknown node {v}")));
            }
            Ok(v as usize - 1)
        };
        let (u, v) = (parse(a)?, parse(b)?);
        let ((gu, lu), (gv, lv)) = (local[u], local[v]);
        if gu != gv {
            return Err(adjacency.err(
                ln,
                format!("edge joins node {} of graph {} to node {} of graph {}", u + 1, gu + 1, v + 1, gv + 1),
            ));
        }
        edges[gu].push((lu, lv));
    }

    let (label_ids, node_label_values) = contiguous(&raw_node_labels);
    let (class_ids, class_values) = contiguous(&raw_classes);
    let mut labels_per_graph: Vec<Vec<usize>> =
        sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (node, &(g, _)) in local.iter().enumerate() {
        labels_per_graph[g].push(label_ids[node]);
    }

    let graphs = edges
        .into_iter()
        .zip(labels_per_graph)
        .zip(&class_ids)
        .zip(&sizes)
        .map(|(((e, l), &c), &n)| Graph::new(n, e, l, c))
        .collect::<Result<Vec<_>>>()?;

    Ok(GraphDataset {
        name: name.to_string(),
        graphs,
        num_classes: class_values.len(),
        label_alphabet_size: node_label_values.len(),
        class_values,
        node_label_values,
    })
}

/// Returns `g` with its node ids shuffled by a uniformly random permutation
/// drawn from `seed`.
pub fn permute_node_ids(g: &Graph, seed: u64) -> Graph {
    let mut perm: Vec<usize> = (0..g.n()).collect();
    perm.shuffle(&mut rng::seeded(seed));
    g.relabel(&perm)
}

/// Applies [`permute_node_ids`] to every graph, with a per-graph seed derived
/// from `seed` and the graph index.
pub fn permute_dataset(ds: &GraphDataset, seed: u64) -> GraphDataset {
    let graphs = ds
        .graphs
        .iter()
        .enumerate()
        .map(|(i, g)| permute_node_ids(g, rng::derive(seed, &[i as u64])))
        .collect();
    GraphDataset {
        graphs,
        ..ds.clone()
    }
}

/// One-hot encodes `labels` into a row-major `len × (d + 1)` matrix. Channel
/// `d` is reserved for [`PAD`].
pub fn one_hot_encode(labels: &[usize], d: usize) -> Result<Vec<f32>> {
    let width = d + 1;
    let mut out = vec![0.0; labels.len() * width];
    for (row, &l) in out.chunks_exact_mut(width).zip(labels) {
        row[channel(l, d)?] = 1.0;
    }
    Ok(out)
}

pub(crate) fn channel(label: usize, d: usize) -> Result<usize> {
    match label {
        PAD => Ok(d),
        l if l < d => Ok(l),
        l => Err(Error::Domain(format!(
            "label {l} outside the alphabet of size {d}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, suffix: &str, body: &str) {
        fs::write(dir.join(format!("{name}_{suffix}.txt")), body).unwrap();
    }

    fn triangle_dataset(dir: &Path) {
        write(dir, "TRI", "A", "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n");
        write(dir, "TRI", "graph_indicator", "1\n1\n1\n");
        write(dir, "TRI", "graph_labels", "1\n");
        write(dir, "TRI", "node_labels", "0\n0\n0\n");
    }

    #[test]
    fn loads_hand_written_triangle() {
        let dir = tempfile::tempdir().unwrap();
        triangle_dataset(dir.path());
        let ds = load_tu_dataset(dir.path(), "TRI").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.num_classes, 1);
        assert_eq!(ds.label_alphabet_size, 1);
        assert_eq!(ds.graphs[0].n(), 3);
        assert_eq!(ds.graphs[0].num_edges(), 3);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        triangle_dataset(dir.path());
        fs::remove_file(dir.path().join("TRI_node_labels.txt")).unwrap();
        let err = load_tu_dataset(dir.path(), "TRI").unwrap_err();
        assert!(err.to_string().contains("TRI_node_labels.txt"), "{err}");
    }

    #[test]
    fn unknown_node_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        triangle_dataset(dir.path());
        write(dir.path(), "TRI", "A", "1, 2\n2, 9\n");
        let err = load_tu_dataset(dir.path(), "TRI").unwrap_err();
        match err {
            Error::Format { line, ref file, .. } => {
                assert_eq!(line, 2);
                assert_eq!(file, "TRI_A.txt");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_graph_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        triangle_dataset(dir.path());
        write(dir.path(), "TRI", "graph_labels", "1\n-1\n");
        let err = load_tu_dataset(dir.path(), "TRI").unwrap_err();
        assert!(err.to_string().contains("zero nodes"), "{err}");
    }

    #[test]
    fn classes_and_labels_are_reindexed() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "X", "A", "1, 2\n3, 4\n");
        write(dir.path(), "X", "graph_indicator", "1\n1\n2\n2\n");
        write(dir.path(), "X", "graph_labels", "-1\n1\n");
        write(dir.path(), "X", "node_labels", "5\n9\n5\n7\n");
        let ds = load_tu_dataset(dir.path(), "X").unwrap();
        assert_eq!(ds.class_values, vec![-1, 1]);
        assert_eq!(ds.node_label_values, vec![5, 7, 9]);
        assert_eq!(ds.graphs[0].node_labels(), &[0, 2]);
        assert_eq!(ds.graphs[1].node_labels(), &[0, 1]);
        assert_eq!(ds.graphs[1].class_label(), 1);
        assert!(ds.graphs[1].has_edge(0, 1));
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot_encode(&[0], 2).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(one_hot_encode(&[PAD], 2).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(
            one_hot_encode(&[1, 0], 2).unwrap(),
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert!(matches!(one_hot_encode(&[2], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn single_node_permutation_is_identity() {
        let g = Graph::new(1, [], vec![3], 0).unwrap();
        assert_eq!(permute_node_ids(&g, 17), g);
    }

    #[test]
    fn triangle_permutation_keeps_degrees() {
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)], vec![0, 1, 2], 1).unwrap();
        let h = permute_node_ids(&g, 5);
        assert_eq!(h.degree_sequence_sorted(), vec![2, 2, 2]);
        assert_eq!(h.label_multiset(), vec![0, 1, 2]);
        assert_eq!(h.class_label(), 1);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..15).prop_flat_map(|n| {
            (
                proptest::collection::vec((0..n, 0..n), 0..(n * 2)),
                proptest::collection::vec(0usize..4, n),
                0usize..3,
            )
                .prop_map(move |(e, l, c)| Graph::new(n, e, l, c).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn permutation_preserves_invariants(g in arb_graph(), seed in any::<u64>()) {
            let h = permute_node_ids(&g, seed);
            prop_assert_eq!(h.degree_sequence_sorted(), g.degree_sequence_sorted());
            prop_assert_eq!(h.label_multiset(), g.label_multiset());
            prop_assert_eq!(h.class_label(), g.class_label());
            prop_assert_eq!(h.num_edges(), g.num_edges());
        }

        #[test]
        fn one_hot_rows_sum_to_one(labels in proptest::collection::vec(0usize..6, 0..20), pad in any::<bool>()) {
            let mut labels = labels;
            if pad { labels.push(PAD); }
            let m = one_hot_encode(&labels, 6).unwrap();
            for row in m.chunks_exact(7) {
                prop_assert_eq!(row.iter().sum::<f32>(), 1.0);
            }
        }
    }
}
