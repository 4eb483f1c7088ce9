use std::path::Path;

use graphcaps::dataset::{load_tu_dataset, permute_dataset};
use graphcaps::experiment::kfold_split;
use graphcaps::labelling::Procedure;
use graphcaps::tensorizer::{default_width, tensorize_dataset, TensorizeConfig};

fn data_root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data"))
}

#[test]
fn mutag_statistics() {
    let ds = load_tu_dataset(data_root(), "MUTAG").unwrap();
    assert_eq!(ds.len(), 188);
    assert_eq!(ds.num_classes, 2);
    assert_eq!(ds.label_alphabet_size, 7);
    assert_eq!(ds.max_graph_size(), 28);
    assert_eq!(default_width(&ds), 18);
    let counts = ds.class_counts();
    assert_eq!(counts, vec![63, 125]);
    let positive = 100.0 * counts[1] as f64 / 188.0;
    assert!((positive - 66.49).abs() < 0.005, "{positive}");
    assert_eq!(ds.class_values, vec![-1, 1]);
}

#[test]
fn permutation_round_trip_keeps_invariants() {
    let ds = load_tu_dataset(data_root(), "MUTAG").unwrap();
    let p = permute_dataset(&ds, 99);
    assert_eq!(p.len(), ds.len());
    let mut moved = 0;
    for (a, b) in ds.graphs.iter().zip(&p.graphs) {
        assert_eq!(a.degree_sequence_sorted(), b.degree_sequence_sorted());
        assert_eq!(a.label_multiset(), b.label_multiset());
        assert_eq!(a.class_label(), b.class_label());
        assert_eq!(a.num_edges(), b.num_edges());
        moved += usize::from(a.node_labels() != b.node_labels());
    }
    assert!(moved > 100, "permutation should actually move labels ({moved})");
}

#[test]
fn mutag_tensors_have_fixed_shape() {
    let ds = load_tu_dataset(data_root(), "MUTAG").unwrap();
    let cfg = TensorizeConfig {
        w: 18,
        k: 10,
        procedure: Procedure::Betweenness,
    };
    let set = tensorize_dataset(&ds, cfg, None).unwrap();
    assert_eq!(set.len(), 188);
    assert_eq!(set.geometry.shape(), [18, 10, 8]);
    for t in &set.tensors {
        assert_eq!(t.data.len(), 18 * 10 * 8);
        for fiber in t.data.chunks_exact(8) {
            assert_eq!(fiber.iter().sum::<f32>(), 1.0);
        }
    }
}

#[test]
fn mutag_folds_follow_class_ratio() {
    let ds = load_tu_dataset(data_root(), "MUTAG").unwrap();
    let labels = ds.class_labels();
    let folds = kfold_split(&labels, 10, 1).unwrap();
    for f in &folds {
        let pos = f.iter().filter(|&&i| labels[i] == 1).count() as f64;
        assert!((pos - 0.6649 * f.len() as f64).abs() <= 1.0);
    }
}
