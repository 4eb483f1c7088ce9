//! Embedding extraction, t-SNE and cluster distances.

pub mod tsne;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{batch_input, Model};
use crate::tensorizer::GraphTensor;

pub use tsne::{joint_probabilities, tsne, TsneConfig, TsneResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Flattened input tensor.
    Raw,
    /// Dense inner layer of the CNN.
    Cnn,
    /// Primary capsules before routing.
    Caps,
}

impl EmbeddingSource {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingSource::Raw => "raw",
            EmbeddingSource::Cnn => "cnn",
            EmbeddingSource::Caps => "caps",
        }
    }
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(EmbeddingSource::Raw),
            "cnn" => Ok(EmbeddingSource::Cnn),
            "caps" | "capsules" => Ok(EmbeddingSource::Caps),
            other => Err(Error::Config(format!(
                "unknown embedding source {other:?} (expected raw, cnn or caps)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// `m × dim`, row-major.
    pub points: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub graph_ids: Vec<usize>,
    pub source: EmbeddingSource,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// One row per tensor from the requested layer. `Raw` needs no model.
pub fn extract_embeddings(
    model: Option<&Model>,
    tensors: &[&GraphTensor],
    source: EmbeddingSource,
) -> Result<EmbeddingSet> {
    if tensors.is_empty() {
        return Err(Error::Contract("no tensors to embed".into()));
    }
    let labels = tensors.iter().map(|t| t.class_label).collect();
    let graph_ids = tensors.iter().map(|t| t.graph_index).collect();
    let geometry = tensors[0].geometry;
    let (points, dim) = match (source, model) {
        (EmbeddingSource::Raw, _) => {
            let x = batch_input(tensors, geometry)?;
            (x.into_data(), geometry.len())
        }
        (EmbeddingSource::Cnn, Some(Model::Cnn(m))) => rows_by_batch(tensors, geometry, |x| m.inner_activations(x))?,
        (EmbeddingSource::Caps, Some(Model::Caps(m))) => rows_by_batch(tensors, geometry, |x| m.primary_capsules(x))?,
        (s, m) => {
            return Err(Error::Contract(format!(
                "embedding source {s} needs a {} model, got {}",
                if s == EmbeddingSource::Cnn { "cnn" } else { "capsules" },
                m.map_or("none".to_string(), |m| m.classifier().to_string())
            )))
        }
    };
    Ok(EmbeddingSet {
        points,
        dim,
        labels,
        graph_ids,
        source,
    })
}

fn rows_by_batch(
    tensors: &[&GraphTensor],
    geometry: crate::tensorizer::TensorGeometry,
    f: impl Fn(crate::nn::Tensor) -> Result<crate::nn::Tensor>,
) -> Result<(Vec<f64>, usize)> {
    let mut points = Vec::new();
    let mut dim = 0;
    for chunk in tensors.chunks(50) {
        let out = f(batch_input(chunk, geometry)?)?;
        dim = out.len() / chunk.len();
        points.extend_from_slice(out.data());
    }
    Ok((points, dim))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistances {
    /// Mean squared distance to the class centroid, per class.
    pub intra: Vec<f64>,
    /// Point-weighted mean of the per-class values.
    pub pooled_intra: f64,
    /// Distance between class centroids (mean over pairs for more than two
    /// classes).
    pub inter: f64,
}

pub fn cluster_distances(points: &[f64], dim: usize, labels: &[usize]) -> Result<ClusterDistances> {
    if dim == 0 || points.len() != dim * labels.len() {
        return Err(Error::Shape(format!(
            "{} values for {} labels of dimension {dim}",
            points.len(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    let mut centroids = vec![0.0; classes * dim];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for a in 0..dim {
            centroids[c * dim + a] += points[i * dim + a];
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Domain(format!("class {c} has no points")));
    }
    if classes < 2 {
        return Err(Error::Domain("inter-cluster distance needs at least two classes".into()));
    }
    for c in 0..classes {
        for a in 0..dim {
            centroids[c * dim + a] /= counts[c] as f64;
        }
    }
    let mut sq = vec![0.0; classes];
    for (i, &c) in labels.iter().enumerate() {
        sq[c] += (0..dim)
            .map(|a| (points[i * dim + a] - centroids[c * dim + a]).powi(2))
            .sum::<f64>();
    }
    let intra: Vec<f64> = sq.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
    let pooled_intra = sq.iter().sum::<f64>() / labels.len() as f64;
    let mut pairs = 0usize;
    let mut total = 0.0;
    for a in 0..classes {
        for b in (a + 1)..classes {
            let d: f64 = (0..dim)
                .map(|x| (centroids[a * dim + x] - centroids[b * dim + x]).powi(2))
                .sum();
            total += d.sqrt();
            pairs += 1;
        }
    }
    Ok(ClusterDistances {
        intra,
        pooled_intra,
        inter: total / pairs as f64,
    })
}

/// `graph_id,class,x,y[,...]` rows for a 2-D (or higher) layout.
pub fn embeddings_csv(set: &EmbeddingSet, coords: &[f64], dims: usize) -> String {
    let mut s = String::from("graph_id,class");
    for a in 0..dims {
        s.push_str(&format!(",{}", ["x", "y", "z"].get(a).map_or(format!("c{a}"), |n| n.to_string())));
    }
    s.push('\n');
    for i in 0..set.len() {
        s.push_str(&format!("{},{}", set.graph_ids[i], set.labels[i]));
        for a in 0..dims {
            s.push_str(&format!(",{}", coords[i * dims + a]));
        }
        s.push('\n');
    }
    s
}

pub fn distances_csv(rows: &[(EmbeddingSource, ClusterDistances)]) -> String {
    let classes = rows.iter().map(|(_, d)| d.intra.len()).max().unwrap_or(0);
    let mut s = String::from("source");
    for c in 0..classes {
        s.push_str(&format!(",intra_{c}"));
    }
    s.push_str(",intra_pooled,inter\n");
    for (src, d) in rows {
        s.push_str(src.name());
        for c in 0..classes {
            s.push(',');
            if let Some(v) = d.intra.get(c) {
                s.push_str(&v.to_string());
            }
        }
        s.push_str(&format!(",{},{}\n", d.pooled_intra, d.inter));
    }
    s
}

pub fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let pts = [0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0];
        let d = cluster_distances(&pts, 2, &[0, 0, 1, 1]).unwrap();
        assert_eq!(d.intra, vec![1.0, 1.0]);
        assert_eq!(d.pooled_intra, 1.0);
        assert_eq!(d.inter, 2.0);
    }

    #[test]
    fn single_point_classes() {
        let d = cluster_distances(&[1.0, 1.0, 4.0, 5.0], 2, &[0, 1]).unwrap();
        assert_eq!(d.intra, vec![0.0, 0.0]);
        assert_eq!(d.inter, 5.0);
    }

    #[test]
    fn multiclass_inter_is_pair_mean() {
        // Centroids at 0, 3 and 7 on a line: pair distances 3, 7, 4.
        let d = cluster_distances(&[0.0, 3.0, 7.0], 1, &[0, 1, 2]).unwrap();
        assert!((d.inter - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_class_is_domain_error() {
        assert!(matches!(cluster_distances(&[0.0, 1.0], 1, &[0, 2]), Err(Error::Domain(_))));
        assert!(matches!(cluster_distances(&[0.0, 1.0], 1, &[0, 0]), Err(Error::Domain(_))));
    }

    #[test]
    fn translation_invariance() {
        let pts: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 * 0.37).collect();
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let a = cluster_distances(&pts, 2, &labels).unwrap();
        let moved: Vec<f64> = pts.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 13.5 } else { -4.25 }).collect();
        let b = cluster_distances(&moved, 2, &labels).unwrap();
        for (x, y) in a.intra.iter().zip(&b.intra) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((a.inter - b.inter).abs() < 1e-9);
        assert!((a.pooled_intra - b.pooled_intra).abs() < 1e-9);
    }
}
