use std::path::Path;

use graphcaps::analysis::*;
use graphcaps::dataset::{load_tu_dataset, permute_node_ids};
use graphcaps::labelling::Procedure;
use graphcaps::models::*;
use graphcaps::rng;
use graphcaps::tensorizer::{graph_to_tensor, tensorize_dataset, GraphTensor, TensorGeometry, TensorizeConfig};
use rand_distr::{Distribution, Normal};

fn data_root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data"))
}

/// Two 10-point Gaussian blobs in 50 dimensions, 10 units apart.
fn two_blobs(seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..10 {
            for a in 0..50 {
                let centre = if a == 0 { 10.0 * c as f64 } else { 0.0 };
                pts.push(centre + n.sample(&mut r));
            }
            labels.push(c);
        }
    }
    (pts, labels)
}

fn separable(coords: &[f64], labels: &[usize]) -> bool {
    let d = cluster_distances(coords, 2, labels).unwrap();
    assert!(d.inter > 0.0);
    let mut c = [[0.0; 2]; 2];
    let mut n = [0.0; 2];
    for (i, &l) in labels.iter().enumerate() {
        c[l][0] += coords[2 * i];
        c[l][1] += coords[2 * i + 1];
        n[l] += 1.0;
    }
    let mu: Vec<[f64; 2]> = (0..2).map(|l| [c[l][0] / n[l], c[l][1] / n[l]]).collect();
    let dir = [mu[1][0] - mu[0][0], mu[1][1] - mu[0][1]];
    let proj = |i: usize| coords[2 * i] * dir[0] + coords[2 * i + 1] * dir[1];
    let max0 = (0..labels.len()).filter(|&i| labels[i] == 0).map(proj).fold(f64::MIN, f64::max);
    let min1 = (0..labels.len()).filter(|&i| labels[i] == 1).map(proj).fold(f64::MAX, f64::min);
    max0 < min1
}

#[test]
fn tsne_separates_two_blobs() {
    for seed in 0..3 {
        let (pts, labels) = two_blobs(seed);
        let out = tsne(&pts, 50, &TsneConfig::new(5.0, seed)).unwrap();
        assert!(out.kl_final < out.kl_initial, "{} !< {}", out.kl_final, out.kl_initial);
        assert!(separable(&out.coords, &labels), "seed {seed}");
    }
}

#[test]
fn joint_probabilities_are_normalized_and_hit_perplexity() {
    let (pts, _) = two_blobs(4);
    for perp in [2.0, 5.0, 10.0] {
        let (p, h) = joint_probabilities(&pts, 50, perp).unwrap();
        let m = 20;
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "{sum}");
        for i in 0..m {
            for j in 0..m {
                assert_eq!(p[i * m + j], p[j * m + i]);
                assert!(p[i * m + j] >= 0.0);
            }
        }
        for hi in h {
            assert!((hi - perp.ln()).abs() < 1e-3, "{hi} vs {}", perp.ln());
        }
    }
}

#[test]
fn tsne_is_seeded() {
    let (pts, _) = two_blobs(1);
    let cfg = TsneConfig {
        iters: 100,
        ..TsneConfig::new(5.0, 9)
    };
    assert_eq!(tsne(&pts, 50, &cfg).unwrap(), tsne(&pts, 50, &cfg).unwrap());
}

#[test]
fn raw_embeddings_of_mutag() {
    let ds = load_tu_dataset(data_root(), "MUTAG").unwrap();
    let cfg = TensorizeConfig {
        w: 18,
        k: 10,
        procedure: Procedure::Betweenness,
    };
    let set = tensorize_dataset(&ds, cfg, None).unwrap();
    let refs: Vec<&GraphTensor> = set.tensors.iter().collect();
    let e = extract_embeddings(None, &refs, EmbeddingSource::Raw).unwrap();
    assert_eq!((e.len(), e.dim), (188, 1440));
    assert!(extract_embeddings(None, &refs, EmbeddingSource::Caps).is_err());
}

#[test]
fn model_embeddings_have_layer_width() {
    let ds = load_tu_dataset(data_root(), "MUTAG").unwrap();
    let g0 = &ds.graphs[0];
    let geometry = TensorGeometry { w: 18, k: 10, d: ds.label_alphabet_size };
    let a = graph_to_tensor(g0, geometry, Procedure::Canonical).unwrap();
    let permuted = permute_node_ids(g0, 77);
    let b = graph_to_tensor(&permuted, geometry, Procedure::Canonical).unwrap();
    let refs = [&a, &b];
    let caps = Model::Caps(build_capsnet(geometry, 2, CapsNetConfig::small(), 1).unwrap());
    let e = extract_embeddings(Some(&caps), &refs, EmbeddingSource::Caps).unwrap();
    let layout = match &caps {
        Model::Caps(m) => m.layout,
        _ => unreachable!(),
    };
    assert_eq!(e.dim, layout.primary_caps * CapsNetConfig::small().primary_dim);
    assert_eq!(e.row(0), e.row(1));
    let cnn = Model::Cnn(build_cnn(geometry, 2, CnnConfig::default(), 1).unwrap());
    let e = extract_embeddings(Some(&cnn), &refs, EmbeddingSource::Cnn).unwrap();
    assert_eq!(e.dim, 128);
    assert_eq!(e.row(0), e.row(1));
    assert!(extract_embeddings(Some(&cnn), &refs, EmbeddingSource::Caps).is_err());
}
