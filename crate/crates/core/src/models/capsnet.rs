//! Convolution → primary capsules → graph capsules, with a reconstruction
//! decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::DEFAULT_LAMBDA;
use crate::nn::routing::{route, DEFAULT_ROUTING_ITERS};
use crate::nn::{ParamSet, Tape, Tensor, Var};
use crate::rng;
use crate::tensorizer::TensorGeometry;

use super::{argmax, constants, dense, normal, LossVars, Preset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Softmax cross-entropy over capsule norms for two classes, margin loss
    /// otherwise.
    Auto,
    MarginMulticlass,
    BinaryCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapsNetConfig {
    pub conv_filters: usize,
    pub conv_kernel: (usize, usize),
    pub conv_stride: usize,
    pub primary_channels: usize,
    pub primary_dim: usize,
    pub primary_kernel: (usize, usize),
    pub primary_stride: usize,
    pub caps_dim: usize,
    pub decoder: Vec<usize>,
    pub routing_iters: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub loss_mode: LossMode,
    /// Std of the capsule transformation matrices at init.
    pub caps_init_std: f64,
}

impl Default for CapsNetConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl CapsNetConfig {
    pub fn paper() -> Self {
        Self {
            conv_filters: 256,
            conv_kernel: (3, 3),
            conv_stride: 1,
            primary_channels: 32,
            primary_dim: 8,
            primary_kernel: (3, 3),
            primary_stride: 2,
            caps_dim: 16,
            decoder: vec![512, 1024],
            routing_iters: DEFAULT_ROUTING_ITERS,
            lambda: DEFAULT_LAMBDA,
            alpha: 1.0,
            loss_mode: LossMode::Auto,
            caps_init_std: 0.01,
        }
    }

    pub fn small() -> Self {
        Self {
            conv_filters: 64,
            primary_channels: 8,
            decoder: vec![128, 256],
            ..Self::paper()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Small => Self::small(),
        }
    }
}

/// Spatial layout derived from the input geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapsLayout {
    pub conv_out: (usize, usize),
    pub primary_grid: (usize, usize),
    /// Number of primary capsules.
    pub primary_caps: usize,
}

#[derive(Debug, Clone)]
pub struct CapsNet {
    pub cfg: CapsNetConfig,
    pub geometry: TensorGeometry,
    pub classes: usize,
    pub layout: CapsLayout,
    pub loss_mode: LossMode,
    pub params: ParamSet,
}

fn conv_out(
    layer: &str,
    input: (usize, usize),
    kernel: (usize, usize),
    stride: usize,
) -> Result<(usize, usize)> {
    let fits = kernel.0 >= 1 && kernel.1 >= 1 && input.0 >= kernel.0 && input.1 >= kernel.1;
    if !fits || stride == 0 {
        return Err(Error::Config(format!(
            "{layer}: {}x{} kernel with stride {stride} does not fit a {}x{} input",
            kernel.0, kernel.1, input.0, input.1
        )));
    }
    Ok((
        (input.0 - kernel.0) / stride + 1,
        (input.1 - kernel.1) / stride + 1,
    ))
}

pub fn capsnet_layout(geometry: TensorGeometry, cfg: &CapsNetConfig) -> Result<CapsLayout> {
    let conv = conv_out("conv", (geometry.w, geometry.k), cfg.conv_kernel, cfg.conv_stride)?;
    let grid = conv_out("primary caps", conv, cfg.primary_kernel, cfg.primary_stride)?;
    Ok(CapsLayout {
        conv_out: conv,
        primary_grid: grid,
        primary_caps: grid.0 * grid.1 * cfg.primary_channels,
    })
}

/// Builds a capsule network for `[w, k, d+1]` inputs and `classes` outputs
/// with weights drawn from `seed`.
pub fn build_capsnet(
    geometry: TensorGeometry,
    classes: usize,
    cfg: CapsNetConfig,
    seed: u64,
) -> Result<CapsNet> {
    let positive = [
        cfg.conv_filters,
        cfg.primary_channels,
        cfg.primary_dim,
        cfg.caps_dim,
        cfg.routing_iters,
    ];
    if positive.contains(&0) || cfg.decoder.contains(&0) || geometry.is_empty() {
        return Err(Error::Config("capsule network dimensions must be positive".into()));
    }
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let loss_mode = match (cfg.loss_mode, classes) {
        (LossMode::Auto, 2) => LossMode::BinaryCe,
        (LossMode::Auto, _) => LossMode::MarginMulticlass,
        (LossMode::BinaryCe, c) if c != 2 => {
            return Err(Error::Config(format!(
                "binary cross-entropy loss needs 2 classes, got {c}"
            )))
        }
        (m, _) => m,
    };
    let layout = capsnet_layout(geometry, &cfg)?;
    let c = geometry.channels();
    let mut r = rng::seeded(seed);
    let mut p = ParamSet::new();

    let (fh, fw) = cfg.conv_kernel;
    let fan = (fh * fw * c) as f64;
    p.push("conv.kernel", normal(&[fh, fw, c, cfg.conv_filters], (2.0 / fan).sqrt(), &mut r));
    p.push("conv.bias", Tensor::zeros(&[cfg.conv_filters]));

    let (ph, pw) = cfg.primary_kernel;
    let out = cfg.primary_channels * cfg.primary_dim;
    let fan = (ph * pw * cfg.conv_filters) as f64;
    p.push("primary.kernel", normal(&[ph, pw, cfg.conv_filters, out], (1.0 / fan).sqrt(), &mut r));
    p.push("primary.bias", Tensor::zeros(&[out]));

    p.push(
        "caps.weight",
        normal(
            &[layout.primary_caps, classes, cfg.caps_dim, cfg.primary_dim],
            cfg.caps_init_std,
            &mut r,
        ),
    );

    let mut widths = vec![classes * cfg.caps_dim];
    widths.extend(&cfg.decoder);
    widths.push(geometry.len());
    for (i, win) in widths.windows(2).enumerate() {
        let (a, b) = (win[0], win[1]);
        let last = i + 2 == widths.len();
        let std = if last {
            (2.0 / (a + b) as f64).sqrt()
        } else {
            (2.0 / a as f64).sqrt()
        };
        p.push(format!("decoder{i}.weight"), normal(&[a, b], std, &mut r));
        p.push(format!("decoder{i}.bias"), Tensor::zeros(&[b]));
    }
    Ok(CapsNet {
        cfg,
        geometry,
        classes,
        layout,
        loss_mode,
        params: p,
    })
}

/// Values recorded by one forward pass.
pub struct CapsForward {
    /// `[B, I, primary_dim]` squashed primary capsules.
    pub primary: Var,
    /// `[B, C, caps_dim]`.
    pub capsules: Var,
    /// `[B, C]`.
    pub norms: Var,
    /// `[B, w·k·(d+1)]`, present when the decoder ran.
    pub reconstruction: Option<Var>,
}

/// How the decoder input is masked.
#[derive(Debug, Clone, Copy)]
pub enum Mask<'a> {
    /// Keep the target capsule (training).
    Targets(&'a [usize]),
    /// Keep the longest capsule (inference).
    Predicted,
    /// Skip the decoder.
    None,
}

impl CapsNet {
    /// Primary-capsule stage only.
    pub fn primary(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var> {
        let cfg = &self.cfg;
        let s = (cfg.conv_stride, cfg.conv_stride);
        let h = tape.conv2d(x, pv[0], pv[1], s)?;
        let h = tape.relu(h);
        let s = (cfg.primary_stride, cfg.primary_stride);
        let p = tape.conv2d(h, pv[2], pv[3], s)?;
        let b = tape.shape(x)[0];
        let u = tape.reshape(p, &[b, self.layout.primary_caps, cfg.primary_dim])?;
        Ok(tape.squash(u))
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var, mask: Mask) -> Result<CapsForward> {
        let primary = self.primary(tape, pv, x)?;
        let u_hat = tape.caps_predict(primary, pv[4])?;
        let (capsules, _) = route(tape, u_hat, self.cfg.routing_iters)?;
        let norms = tape.norm(capsules);
        let predicted: Vec<usize>;
        let targets = match mask {
            Mask::Targets(t) => t,
            Mask::Predicted => {
                predicted = tape.value(norms).rows().map(argmax).collect();
                &predicted
            }
            Mask::None => {
                return Ok(CapsForward {
                    primary,
                    capsules,
                    norms,
                    reconstruction: None,
                })
            }
        };
        let mut h = tape.mask_caps(capsules, targets)?;
        let layers = self.cfg.decoder.len() + 1;
        for i in 0..layers {
            h = dense(tape, h, pv[5 + 2 * i], pv[6 + 2 * i])?;
            h = if i + 1 < layers {
                tape.relu(h)
            } else {
                tape.sigmoid(h)
            };
        }
        Ok(CapsForward {
            primary,
            capsules,
            norms,
            reconstruction: Some(h),
        })
    }

    pub(crate) fn loss(&self, tape: &mut Tape, pv: &[Var], x: Tensor, targets: &[usize]) -> Result<LossVars> {
        let flat = x.clone().reshape(&[x.dim(0), self.geometry.len()])?;
        let xv = tape.constant(x);
        let f = self.forward(tape, pv, xv, Mask::Targets(targets))?;
        let margin = match self.loss_mode {
            LossMode::BinaryCe => tape.softmax_ce(f.norms, targets)?,
            _ => tape.margin_loss(f.norms, targets, self.cfg.lambda)?,
        };
        let mse = tape.mse(f.reconstruction.expect("decoder ran"), flat)?;
        let scaled = tape.scale(mse, self.cfg.alpha);
        let total = tape.add(margin, scaled)?;
        Ok(LossVars {
            total,
            margin,
            mse: Some(mse),
        })
    }

    /// Capsule lengths `[B, C]` for a batch.
    pub fn class_norms(&self, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = constants(&mut tape, &self.params);
        let xv = tape.constant(x);
        let f = self.forward(&mut tape, &pv, xv, Mask::None)?;
        Ok(tape.value(f.norms).clone())
    }

    /// Class capsules, their lengths and the reconstruction masked by the
    /// predicted class.
    pub fn infer(&self, x: Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mut tape = Tape::new();
        let pv = constants(&mut tape, &self.params);
        let xv = tape.constant(x);
        let f = self.forward(&mut tape, &pv, xv, Mask::Predicted)?;
        Ok((
            tape.value(f.capsules).clone(),
            tape.value(f.norms).clone(),
            tape.value(f.reconstruction.expect("decoder ran")).clone(),
        ))
    }

    /// Flattened primary capsules `[B, I·primary_dim]`.
    pub fn primary_capsules(&self, x: Tensor) -> Result<Tensor> {
        let b = x.dim(0);
        let mut tape = Tape::new();
        let pv = constants(&mut tape, &self.params);
        let xv = tape.constant(x);
        let u = self.primary(&mut tape, &pv, xv)?;
        tape.value(u)
            .clone()
            .reshape(&[b, self.layout.primary_caps * self.cfg.primary_dim])
    }
}
