//! Convolutional baseline over the same receptive-field tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tape, Tensor, Var};
use crate::rng::{self, Rng};
use crate::tensorizer::TensorGeometry;

use super::{constants, dense, dropout_mask, normal, LossVars, Preset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    /// Filters of the per-field convolution (kernel spans one whole field).
    pub field_filters: usize,
    /// Filters and height of the convolution across neighbouring fields.
    pub seq_filters: usize,
    pub seq_kernel: usize,
    pub dense: usize,
    pub dropout: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            field_filters: 16,
            seq_filters: 8,
            seq_kernel: 10,
            dense: 128,
            dropout: 0.5,
        }
    }
}

impl CnnConfig {
    pub fn preset(_: Preset) -> Self {
        // The baseline is small enough that both presets share it.
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct Cnn {
    pub cfg: CnnConfig,
    pub geometry: TensorGeometry,
    pub classes: usize,
    /// Height of the second convolution after clamping to `w`.
    pub seq_kernel: usize,
    pub params: ParamSet,
}

pub fn build_cnn(geometry: TensorGeometry, classes: usize, cfg: CnnConfig, seed: u64) -> Result<Cnn> {
    if [cfg.field_filters, cfg.seq_filters, cfg.seq_kernel, cfg.dense].contains(&0)
        || geometry.is_empty()
    {
        return Err(Error::Config("CNN dimensions must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(format!("dropout {} not in [0, 1)", cfg.dropout)));
    }
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let [w, k, c] = geometry.shape();
    let sk = cfg.seq_kernel.min(w);
    let rows = w - sk + 1;
    let flat = rows * cfg.seq_filters;
    let mut r = rng::seeded(seed);
    let mut p = ParamSet::new();
    let he = |fan: usize| (2.0 / fan as f64).sqrt();
    p.push("field.kernel", normal(&[1, k, c, cfg.field_filters], he(k * c), &mut r));
    p.push("field.bias", Tensor::zeros(&[cfg.field_filters]));
    p.push("seq.kernel", normal(&[sk, 1, cfg.field_filters, cfg.seq_filters], he(sk * cfg.field_filters), &mut r));
    p.push("seq.bias", Tensor::zeros(&[cfg.seq_filters]));
    p.push("dense.weight", normal(&[flat, cfg.dense], he(flat), &mut r));
    p.push("dense.bias", Tensor::zeros(&[cfg.dense]));
    let glorot = (2.0 / (cfg.dense + classes) as f64).sqrt();
    p.push("out.weight", normal(&[cfg.dense, classes], glorot, &mut r));
    p.push("out.bias", Tensor::zeros(&[classes]));
    Ok(Cnn {
        cfg,
        geometry,
        classes,
        seq_kernel: sk,
        params: p,
    })
}

impl Cnn {
    /// Activations of the dense inner layer `[B, dense]`, with dropout when a
    /// generator is given.
    pub fn inner(&self, tape: &mut Tape, pv: &[Var], x: Var, dropout: Option<&mut Rng>) -> Result<Var> {
        let b = tape.shape(x)[0];
        let h = tape.conv2d(x, pv[0], pv[1], (1, 1))?;
        let h = tape.relu(h);
        let h = tape.conv2d(h, pv[2], pv[3], (1, 1))?;
        let h = tape.relu(h);
        let n = tape.value(h).len() / b;
        let h = tape.reshape(h, &[b, n])?;
        let h = dense(tape, h, pv[4], pv[5])?;
        let mut h = tape.relu(h);
        if let Some(r) = dropout {
            if self.cfg.dropout > 0.0 {
                let mask = dropout_mask(tape.shape(h), self.cfg.dropout, r);
                h = tape.mul_const(h, mask)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var, dropout: Option<&mut Rng>) -> Result<Var> {
        let h = self.inner(tape, pv, x, dropout)?;
        dense(tape, h, pv[6], pv[7])
    }

    pub(crate) fn loss(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x: Tensor,
        targets: &[usize],
        r: &mut Rng,
    ) -> Result<LossVars> {
        let xv = tape.constant(x);
        let logits = self.forward(tape, pv, xv, Some(r))?;
        let ce = tape.softmax_ce(logits, targets)?;
        Ok(LossVars {
            total: ce,
            margin: ce,
            mse: None,
        })
    }

    pub fn logits(&self, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = constants(&mut tape, &self.params);
        let xv = tape.constant(x);
        let y = self.forward(&mut tape, &pv, xv, None)?;
        Ok(tape.value(y).clone())
    }

    pub fn inner_activations(&self, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = constants(&mut tape, &self.params);
        let xv = tape.constant(x);
        let y = self.inner(&mut tape, &pv, xv, None)?;
        Ok(tape.value(y).clone())
    }
}
