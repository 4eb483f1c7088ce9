//! The capsule network, the CNN baseline, and their training loop.

pub mod capsnet;
pub mod cnn;
pub mod train;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::tensorizer::{GraphTensor, TensorGeometry};

pub use capsnet::{build_capsnet, CapsNet, CapsNetConfig, LossMode};
pub use cnn::{build_cnn, Cnn, CnnConfig};
pub use train::{evaluate, train, LossRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Capsules,
    Cnn,
}

impl Classifier {
    pub fn name(self) -> &'static str {
        match self {
            Classifier::Capsules => "capsules",
            Classifier::Cnn => "cnn",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Classifier::Capsules => "Capsules",
            Classifier::Cnn => "CNN",
        }
    }
}

impl std::fmt::Display for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Classifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "capsules" | "caps" | "capsnet" => Ok(Classifier::Capsules),
            "cnn" => Ok(Classifier::Cnn),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected capsules or cnn)"
            ))),
        }
    }
}

/// Architecture size bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Small,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "small" => Ok(Preset::Small),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected paper or small)"
            ))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Small => "small",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Caps(CapsNet),
    Cnn(Cnn),
}

/// Scalar losses of one forward pass.
pub struct LossVars {
    pub total: Var,
    pub margin: Var,
    pub mse: Option<Var>,
}

impl Model {
    pub fn build(
        kind: Classifier,
        geometry: TensorGeometry,
        classes: usize,
        preset: Preset,
        caps: &CapsNetConfig,
        seed: u64,
    ) -> Result<Model> {
        Ok(match kind {
            Classifier::Capsules => Model::Caps(build_capsnet(geometry, classes, caps.clone(), seed)?),
            Classifier::Cnn => Model::Cnn(build_cnn(geometry, classes, CnnConfig::preset(preset), seed)?),
        })
    }

    pub fn classifier(&self) -> Classifier {
        match self {
            Model::Caps(_) => Classifier::Capsules,
            Model::Cnn(_) => Classifier::Cnn,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Caps(m) => &m.params,
            Model::Cnn(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Caps(m) => &mut m.params,
            Model::Cnn(m) => &mut m.params,
        }
    }

    pub fn geometry(&self) -> TensorGeometry {
        match self {
            Model::Caps(m) => m.geometry,
            Model::Cnn(m) => m.geometry,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Caps(m) => m.classes,
            Model::Cnn(m) => m.classes,
        }
    }

    /// Records the training loss of a batch on `tape`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x: Tensor,
        targets: &[usize],
        rng: &mut Rng,
    ) -> Result<LossVars> {
        match self {
            Model::Caps(m) => m.loss(tape, pv, x, targets),
            Model::Cnn(m) => m.loss(tape, pv, x, targets, rng),
        }
    }

    /// Predicted class for each input (lowest index wins ties).
    pub fn predict(&self, tensors: &[&GraphTensor]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(tensors.len());
        for chunk in tensors.chunks(EVAL_BATCH) {
            let x = batch_input(chunk, self.geometry())?;
            let scores = match self {
                Model::Caps(m) => m.class_norms(x)?,
                Model::Cnn(m) => m.logits(x)?,
            };
            out.extend(scores.rows().map(argmax));
        }
        Ok(out)
    }
}

const EVAL_BATCH: usize = 50;

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Stacks graph tensors into a `[B, w, k, channels]` batch.
pub fn batch_input(tensors: &[&GraphTensor], geometry: TensorGeometry) -> Result<Tensor> {
    let len = geometry.len();
    let mut data = Vec::with_capacity(len * tensors.len());
    for t in tensors {
        if t.geometry != geometry {
            return Err(Error::Shape(format!(
                "tensor of graph {} has geometry {:?}, model expects {:?}",
                t.graph_index, t.geometry, geometry
            )));
        }
        data.extend(t.data.iter().map(|&v| v as f64));
    }
    let [w, k, c] = geometry.shape();
    Tensor::new(&[tensors.len(), w, k, c], data)
}

pub(crate) fn register_params(tape: &mut Tape, params: &ParamSet) -> Vec<Var> {
    params.tensors().iter().map(|t| tape.param(t.clone())).collect()
}

pub(crate) fn constants(tape: &mut Tape, params: &ParamSet) -> Vec<Var> {
    params.tensors().iter().map(|t| tape.constant(t.clone())).collect()
}

pub(crate) fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Dense layer `x · W + b` with `W: [n_in, n_out]`.
pub(crate) fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Inverted dropout mask for `n` activations.
pub(crate) fn dropout_mask(shape: &[usize], rate: f64, rng: &mut Rng) -> Tensor {
    let keep = 1.0 - rate;
    Tensor::from_fn(shape, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}
