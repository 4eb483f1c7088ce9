//! Graph to fixed-size receptive-field tensor.
//!
//! For each graph: rank the nodes, keep the top `w` as anchors (padding with
//! dummy anchors), gather hop-count neighbourhoods around every anchor,
//! normalize each to exactly `k` members, and one-hot encode the member labels
//! into a `w × k × (d + 1)` tensor. Channel `d` marks dummy nodes.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{channel, PAD};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::labelling::{label_graph, GraphLabelling, NodeRanking, Procedure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorGeometry {
    pub w: usize,
    pub k: usize,
    /// Node-label alphabet size; the tensor has `d + 1` channels.
    pub d: usize,
}

impl TensorGeometry {
    pub fn channels(&self) -> usize {
        self.d + 1
    }

    pub fn len(&self) -> usize {
        self.w * self.k * self.channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.w, self.k, self.channels()]
    }
}

/// An anchor and its ordered neighbourhood of exactly `k` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveField {
    pub anchor: usize,
    pub members: Vec<usize>,
}

impl ReceptiveField {
    pub fn padding(k: usize) -> Self {
        Self {
            anchor: PAD,
            members: vec![PAD; k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphTensor {
    pub geometry: TensorGeometry,
    /// Row-major `w × k × (d + 1)`.
    pub data: Vec<f32>,
    pub graph_index: usize,
    pub class_label: usize,
}

impl GraphTensor {
    pub fn fiber(&self, i: usize, j: usize) -> &[f32] {
        let c = self.geometry.channels();
        let start = (i * self.geometry.k + j) * c;
        &self.data[start..start + c]
    }
}

/// Top `w` nodes of the ranking, then [`PAD`] up to length `w`.
pub fn node_sequence(g: &Graph, w: usize, ranking: &NodeRanking) -> Vec<usize> {
    debug_assert_eq!(ranking.order.len(), g.n());
    let mut seq: Vec<usize> = ranking.order.iter().copied().take(w).collect();
    seq.resize(w, PAD);
    seq
}

/// Breadth-first hop rings around `anchor`, whole rings at a time, until at
/// least `k` nodes are collected or the component is exhausted. Returns
/// `(node, hop distance)` pairs; the last ring may overshoot `k`.
pub fn assemble_neighbourhood(g: &Graph, anchor: usize, k: usize) -> Vec<(usize, usize)> {
    let mut seen = vec![false; g.n()];
    seen[anchor] = true;
    let mut out = vec![(anchor, 0)];
    let mut ring = VecDeque::from([anchor]);
    let mut hop = 0;
    while out.len() < k && !ring.is_empty() {
        hop += 1;
        let mut next = VecDeque::new();
        for v in ring {
            for &u in g.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    next.push_back(u);
                    out.push((u, hop));
                }
            }
        }
        ring = next;
    }
    out
}

/// Orders candidates by (hop, WL colour, canonical position), keeps the first
/// `k` and pads with [`PAD`].
pub fn normalize_receptive_field(
    candidates: &[(usize, usize)],
    labelling: &GraphLabelling,
    k: usize,
) -> ReceptiveField {
    let mut c = candidates.to_vec();
    c.sort_by_key(|&(v, hop)| (hop, labelling.wl[v], labelling.position[v]));
    let mut members: Vec<usize> = c.into_iter().take(k).map(|(v, _)| v).collect();
    members.resize(k, PAD);
    ReceptiveField {
        anchor: members[0],
        members,
    }
}

pub fn receptive_fields(g: &Graph, w: usize, k: usize, labelling: &GraphLabelling) -> Vec<ReceptiveField> {
    node_sequence(g, w, &labelling.ranking)
        .into_iter()
        .map(|anchor| {
            if anchor == PAD {
                ReceptiveField::padding(k)
            } else {
                normalize_receptive_field(&assemble_neighbourhood(g, anchor, k), labelling, k)
            }
        })
        .collect()
}

pub fn graph_to_tensor(
    g: &Graph,
    geometry: TensorGeometry,
    procedure: Procedure,
) -> Result<GraphTensor> {
    if geometry.w == 0 || geometry.k == 0 {
        return Err(Error::Config("w and k must be at least 1".into()));
    }
    let labelling = label_graph(g, procedure)?;
    let fields = receptive_fields(g, geometry.w, geometry.k, &labelling);
    let c = geometry.channels();
    let mut data = vec![0.0f32; geometry.len()];
    for (i, field) in fields.iter().enumerate() {
        for (j, &m) in field.members.iter().enumerate() {
            let label = if m == PAD { PAD } else { g.node_labels()[m] };
            data[(i * geometry.k + j) * c + channel(label, geometry.d)?] = 1.0;
        }
    }
    Ok(GraphTensor {
        geometry,
        data,
        graph_index: 0,
        class_label: g.class_label(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorizeConfig {
    pub w: usize,
    pub k: usize,
    pub procedure: Procedure,
}

pub const DEFAULT_K: usize = 10;

/// Default width: the average graph size, rounded.
pub fn default_width(ds: &GraphDataset) -> usize {
    (ds.avg_graph_size().round() as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct TensorSet {
    pub geometry: TensorGeometry,
    pub procedure: Procedure,
    /// Node-id permutation seed applied before extraction, if any.
    pub permutation_seed: Option<u64>,
    pub tensors: Vec<GraphTensor>,
}

impl TensorSet {
    pub fn labels(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.class_label).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Tensorizes every graph of `ds` (in parallel; output order follows the
/// dataset).
pub fn tensorize_dataset(
    ds: &GraphDataset,
    cfg: TensorizeConfig,
    permutation_seed: Option<u64>,
) -> Result<TensorSet> {
    let geometry = TensorGeometry {
        w: cfg.w,
        k: cfg.k,
        d: ds.label_alphabet_size,
    };
    let tensors = ds
        .graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let mut t = graph_to_tensor(g, geometry, cfg.procedure)?;
            t.graph_index = i;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let padded: usize = ds.graphs.iter().map(|g| cfg.w.saturating_sub(g.n())).sum();
    info!(
        "{}: tensorized {} graphs at {}x{}x{} ({}), {} padded anchors",
        ds.name,
        tensors.len(),
        geometry.w,
        geometry.k,
        geometry.channels(),
        cfg.procedure,
        padded
    );
    Ok(TensorSet {
        geometry,
        procedure: cfg.procedure,
        permutation_seed,
        tensors,
    })
}

// ---------------------------------------------------------------------------
// Cache file
//
// Little-endian throughout.
//
//   offset  size  field
//        0     4  magic "GCTS"
//        4     4  version (u32) = 1
//        8     4  w (u32)
//       12     4  k (u32)
//       16     4  d, label alphabet size (u32); tensors have d + 1 channels
//       20     4  graph count (u32)
//       24     1  procedure (u8): 0 bc, 1 canonical, 2 bc with naive ties
//       25     1  permuted flag (u8): 1 if the seed below was applied
//       26     6  reserved, zero
//       32     8  permutation seed (u64)
//       40        records, one per graph:
//                   graph index (u32), class label (u32),
//                   w*k*(d+1) f32 values, row-major (w, k, channel)
// ---------------------------------------------------------------------------

pub const CACHE_MAGIC: &[u8; 4] = b"GCTS";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

pub fn cache_file_name(dataset: &str, cfg: &TensorizeConfig, seed: Option<u64>) -> String {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    format!(
        "{dataset}_w{}_k{}_{}_seed{seed}.gct",
        cfg.w, cfg.k, cfg.procedure
    )
}

pub fn write_cache(path: &Path, set: &TensorSet) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let g = set.geometry;
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(CACHE_MAGIC);
    header.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    for v in [g.w, g.k, g.d, set.tensors.len()] {
        header.extend_from_slice(&(v as u32).to_le_bytes());
    }
    header.push(set.procedure.code());
    header.push(u8::from(set.permutation_seed.is_some()));
    header.extend_from_slice(&[0; 6]);
    header.extend_from_slice(&set.permutation_seed.unwrap_or(0).to_le_bytes());
    let io = |e| Error::io(path, e);
    out.write_all(&header).map_err(io)?;
    for t in &set.tensors {
        out.write_all(&(t.graph_index as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(t.class_label as u32).to_le_bytes()).map_err(io)?;
        for x in &t.data {
            out.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_cache(path: &Path) -> Result<TensorSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Cache {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < HEADER_LEN || &bytes[0..4] != CACHE_MAGIC {
        return Err(bad("missing magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    if u32_at(4) != CACHE_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let geometry = TensorGeometry {
        w: u32_at(8),
        k: u32_at(12),
        d: u32_at(16),
    };
    let count = u32_at(20);
    let procedure = Procedure::from_code(bytes[24]).ok_or_else(|| bad("unknown procedure"))?;
    let seed = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
    let permutation_seed = (bytes[25] == 1).then_some(seed);
    let record = 8 + 4 * geometry.len();
    if bytes.len() != HEADER_LEN + count * record {
        return Err(bad("length does not match header"));
    }
    let tensors = bytes[HEADER_LEN..]
        .chunks_exact(record)
        .map(|r| {
            let idx = u32::from_le_bytes(r[0..4].try_into().unwrap()) as usize;
            let class = u32::from_le_bytes(r[4..8].try_into().unwrap()) as usize;
            let data = r[8..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            GraphTensor {
                geometry,
                data,
                graph_index: idx,
                class_label: class,
            }
        })
        .collect();
    Ok(TensorSet {
        geometry,
        procedure,
        permutation_seed,
        tensors,
    })
}

/// Whether a cache was reused or rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheState {
    Warm,
    Cold,
}

/// Loads the cached tensors at `dir/<key>` or builds and writes them.
pub fn load_or_build(
    dir: &Path,
    ds: &GraphDataset,
    cfg: TensorizeConfig,
    permutation_seed: Option<u64>,
    force: bool,
) -> Result<(TensorSet, CacheState, PathBuf)> {
    let path = dir.join(cache_file_name(&ds.name, &cfg, permutation_seed));
    if !force && path.exists() {
        let set = read_cache(&path)?;
        if set.len() == ds.len()
            && set.geometry.d == ds.label_alphabet_size
            && set.procedure == cfg.procedure
        {
            return Ok((set, CacheState::Warm, path));
        }
    }
    let permuted;
    let source = match permutation_seed {
        Some(seed) => {
            permuted = crate::dataset::permute_dataset(ds, seed);
            &permuted
        }
        None => ds,
    };
    let set = tensorize_dataset(source, cfg, permutation_seed)?;
    write_cache(&path, &set)?;
    Ok((set, CacheState::Cold, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelling::rank_nodes;

    fn path(n: usize) -> Graph {
        Graph::new(n, (0..n - 1).map(|i| (i, i + 1)), vec![0; n], 0).unwrap()
    }

    fn star(leaves: usize) -> Graph {
        Graph::new(leaves + 1, (1..=leaves).map(|l| (0, l)), vec![0; leaves + 1], 0).unwrap()
    }

    #[test]
    fn node_sequence_pads_small_graphs() {
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)], vec![0; 3], 0).unwrap();
        let r = rank_nodes(&g, Procedure::Betweenness).unwrap();
        let seq = node_sequence(&g, 5, &r);
        assert_eq!(seq.len(), 5);
        assert!(seq[..3].iter().all(|&v| v < 3));
        assert_eq!(&seq[3..], &[PAD, PAD]);
    }

    #[test]
    fn node_sequence_truncates() {
        let g = path(28);
        let r = rank_nodes(&g, Procedure::Betweenness).unwrap();
        assert_eq!(node_sequence(&g, 18, &r), r.order[..18].to_vec());
    }

    #[test]
    fn isolated_node_neighbourhood() {
        let g = Graph::new(2, [], vec![0, 0], 0).unwrap();
        assert_eq!(assemble_neighbourhood(&g, 0, 4), vec![(0, 0)]);
    }

    #[test]
    fn star_ring_overshoots() {
        let g = star(4);
        let mut hops: Vec<usize> = assemble_neighbourhood(&g, 0, 3).iter().map(|x| x.1).collect();
        hops.sort_unstable();
        assert_eq!(hops, vec![0, 1, 1, 1, 1]);
    }

    #[test]
    fn path_end_takes_nearest() {
        // hand trace: rings {0}, {1}, {2}, {3} -> stop at 4 nodes
        let g = path(10);
        assert_eq!(
            assemble_neighbourhood(&g, 0, 4),
            vec![(0, 0), (1, 1), (2, 2), (3, 3)]
        );
    }

    #[test]
    fn normalization_pads_and_anchors_first() {
        let g = path(3);
        let l = label_graph(&g, Procedure::Canonical).unwrap();
        let f = normalize_receptive_field(&assemble_neighbourhood(&g, 1, 5), &l, 5);
        assert_eq!(f.anchor, 1);
        assert_eq!(f.members[0], 1);
        assert_eq!(&f.members[3..], &[PAD, PAD]);
    }

    #[test]
    fn star_selection_is_relabelling_invariant() {
        let g = Graph::new(5, (1..5).map(|l| (0, l)), vec![0, 1, 2, 1, 0], 0).unwrap();
        let pick = |h: &Graph| {
            let l = label_graph(h, Procedure::Canonical).unwrap();
            let center = (0..5).find(|&v| h.degree(v) == 4).unwrap();
            let f = normalize_receptive_field(&assemble_neighbourhood(h, center, 3), &l, 3);
            f.members.iter().map(|&m| h.node_labels()[m]).collect::<Vec<_>>()
        };
        let base = pick(&g);
        for perm in [[0, 1, 2, 3, 4], [4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 4, 0, 3, 2]] {
            assert_eq!(pick(&g.relabel(&perm)), base);
        }
    }

    #[test]
    fn shape_and_padding_rows() {
        let g = Graph::new(3, [(0, 1), (1, 2)], vec![0, 6, 2], 1).unwrap();
        let geom = TensorGeometry { w: 18, k: 10, d: 7 };
        let t = graph_to_tensor(&g, geom, Procedure::Betweenness).unwrap();
        assert_eq!(t.data.len(), 18 * 10 * 8);
        for i in 0..18 {
            for j in 0..10 {
                assert_eq!(t.fiber(i, j).iter().sum::<f32>(), 1.0);
            }
        }
        // anchors 3.. are dummies: whole slice is padding channel
        for i in 3..18 {
            for j in 0..10 {
                assert_eq!(t.fiber(i, j)[7], 1.0);
            }
        }
        // anchor 0 is the path centre with label 6
        assert_eq!(t.fiber(0, 0)[6], 1.0);
    }

    #[test]
    fn cache_round_trip() {
        let ds = GraphDataset {
            name: "T".into(),
            graphs: vec![path(4), star(3)],
            num_classes: 1,
            label_alphabet_size: 1,
            class_values: vec![0],
            node_label_values: vec![0],
        };
        let cfg = TensorizeConfig { w: 3, k: 2, procedure: Procedure::Canonical };
        let set = tensorize_dataset(&ds, cfg, Some(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.gct");
        write_cache(&p, &set).unwrap();
        let back = read_cache(&p).unwrap();
        assert_eq!(back.geometry, set.geometry);
        assert_eq!(back.permutation_seed, Some(9));
        assert_eq!(back.procedure, Procedure::Canonical);
        assert_eq!(back.tensors, set.tensors);
        let len = fs::metadata(&p).unwrap().len() as usize;
        assert_eq!(len, 40 + 2 * (8 + 4 * 3 * 2 * 2));
    }

    #[test]
    fn warm_cache_is_reused() {
        let ds = GraphDataset {
            name: "T".into(),
            graphs: vec![path(4)],
            num_classes: 1,
            label_alphabet_size: 1,
            class_values: vec![0],
            node_label_values: vec![0],
        };
        let cfg = TensorizeConfig { w: 2, k: 2, procedure: Procedure::Betweenness };
        let dir = tempfile::tempdir().unwrap();
        let (_, s1, _) = load_or_build(dir.path(), &ds, cfg, Some(1), false).unwrap();
        let (_, s2, _) = load_or_build(dir.path(), &ds, cfg, Some(1), false).unwrap();
        let (_, s3, _) = load_or_build(dir.path(), &ds, cfg, Some(1), true).unwrap();
        assert_eq!((s1, s2, s3), (CacheState::Cold, CacheState::Warm, CacheState::Cold));
    }
}
