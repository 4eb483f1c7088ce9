//! Mini-batch training with Adam.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Tape};
use crate::rng;
use crate::tensorizer::GraphTensor;

use super::{batch_input, register_params, Model};

pub const DEFAULT_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Drives batch order and dropout.
    pub seed: u64,
}

/// Sample-weighted epoch means of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub margin: f64,
    pub mse: f64,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub trace: Vec<LossRecord>,
    pub seconds: f64,
}

pub fn train(model: &mut Model, data: &[&GraphTensor], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let classes = model.num_classes();
    let mut seen = vec![false; classes];
    for t in data {
        if t.class_label >= classes {
            return Err(Error::Contract(format!(
                "graph {} has class {} but the model has {classes} classes",
                t.graph_index, t.class_label
            )));
        }
        seen[t.class_label] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Contract(format!(
            "training split has no sample of class {missing}"
        )));
    }
    let start = Instant::now();
    let geometry = model.geometry();
    let mut adam = AdamState::new(cfg.adam, model.params());
    let mut r = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let (mut total, mut margin, mut mse) = (0.0, 0.0, 0.0);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&GraphTensor> = idx.iter().map(|&i| data[i]).collect();
            let targets: Vec<usize> = batch.iter().map(|t| t.class_label).collect();
            let x = batch_input(&batch, geometry)?;
            let mut tape = Tape::new();
            let pv = register_params(&mut tape, model.params());
            let l = model.loss(&mut tape, &pv, x, &targets, &mut r)?;
            let lt = tape.value(l.total).item();
            if !lt.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {lt} at epoch {epoch}, step {step}"
                )));
            }
            let n = batch.len() as f64;
            total += lt * n;
            margin += tape.value(l.margin).item() * n;
            mse += l.mse.map_or(0.0, |v| tape.value(v).item()) * n;
            let mut g = tape.backward(l.total);
            let grads: Vec<_> = pv
                .iter()
                .zip(model.params().tensors())
                .map(|(&v, p)| g.take_or_zeros(v, p.shape()))
                .collect();
            adam.step(model.params_mut(), &grads, epoch)?;
        }
        let m = data.len() as f64;
        let rec = LossRecord {
            epoch,
            total: total / m,
            margin: margin / m,
            mse: mse / m,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} (margin {:.5}, mse {:.5})",
            rec.total,
            rec.margin,
            rec.mse
        );
        trace.push(rec);
    }
    Ok(TrainOutcome {
        trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fraction of correctly classified tensors.
pub fn evaluate(model: &Model, data: &[&GraphTensor]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty split".into()));
    }
    let pred = model.predict(data)?;
    let correct = pred
        .iter()
        .zip(data)
        .filter(|(p, t)| **p == t.class_label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Loss trace as CSV with a header row.
pub fn trace_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("epoch,total,margin,mse,seconds\n");
    for r in trace {
        s.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.epoch, r.total, r.margin, r.mse, r.seconds
        ));
    }
    s
}
