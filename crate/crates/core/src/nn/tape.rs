//! Reverse-mode differentiation over a recorded tape of coarse tensor ops.
//!
//! Only the operations the capsule network and the CNN baseline need are
//! provided. Each op checks shapes on record and knows its own adjoint.

use crate::error::{Error, Result};

use super::gemm::{gemm, View, ViewMut};
use super::tensor::Tensor;

/// Stabilizer inside the square roots of [`Tape::squash`] and [`Tape::norm`].
pub const NORM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
    },
    Squash(Var),
    Norm(Var),
    CapsPredict {
        u: Var,
        w: Var,
    },
    SoftmaxLast(Var),
    RouteSum {
        c: Var,
        u_hat: Var,
    },
    Agreement {
        u_hat: Var,
        v: Var,
    },
    MaskCaps {
        v: Var,
        targets: Vec<usize>,
    },
    MarginLoss {
        norms: Var,
        targets: Vec<usize>,
        lambda: f64,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
    },
    Mse {
        x: Var,
        target: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`].
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }

    /// The gradient of `v`, or zeros of `shape` if nothing flowed into it.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.0[v.0].take().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn shape_err(op: &str, msg: String) -> Error {
    Error::Shape(format!("{op}: {msg}"))
}

fn conv_out(size: usize, f: usize, stride: usize) -> Option<usize> {
    (size >= f && f > 0 && stride > 0).then(|| (size - f) / stride + 1)
}

struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    fh: usize,
    fw: usize,
    cout: usize,
    sh: usize,
    sw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.fh * self.fw * self.cin
    }

    fn positions(&self) -> usize {
        self.b * self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut cols = Vec::with_capacity(g.positions() * g.patch());
    for b in 0..g.b {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                for dy in 0..g.fh {
                    let row = ((b * g.h + oy * g.sh + dy) * g.w + ox * g.sw) * g.cin;
                    cols.extend_from_slice(&x[row..row + g.fw * g.cin]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut x = vec![0.0; g.b * g.h * g.w * g.cin];
    let mut src = cols.chunks_exact(g.fw * g.cin);
    for b in 0..g.b {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                for dy in 0..g.fh {
                    let row = ((b * g.h + oy * g.sh + dy) * g.w + ox * g.sw) * g.cin;
                    let chunk = src.next().expect("cols sized by geometry");
                    for (d, s) in x[row..row + g.fw * g.cin].iter_mut().zip(chunk) {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

/// Squash scale `f(q) = q / ((1 + q)·sqrt(q + ε))` and its derivative in `q`.
fn squash_scale(q: f64) -> (f64, f64) {
    let a = 1.0 / (1.0 + q);
    let b = 1.0 / (q + NORM_EPS).sqrt();
    let f = q * a * b;
    let df = a * b * (1.0 - q * a - q / (2.0 * (q + NORM_EPS)));
    (f, df)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant input (no gradient needed).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `[m, k] × [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            View::rows(self.value(a).data(), k),
            View::rows(self.value(b).data(), n),
            0.0,
            ViewMut::rows(out.data_mut(), n),
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds `bias` (shape `[n]`) along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, bb) in row.iter_mut().zip(&b) {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} + {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(shape_err(
                "mul_const",
                format!("{:?} * {:?}", self.shape(x), c.shape()),
            ));
        }
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(c.data()) {
            *o *= m;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MulConst(x, c), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    fn conv_geom(&self, x: Var, kernel: Var, stride: (usize, usize)) -> Result<ConvGeom> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sx.len() != 4 || sk.len() != 4 || sx[3] != sk[2] {
            return Err(shape_err(
                "conv2d",
                format!("input {sx:?} with kernel {sk:?}"),
            ));
        }
        let (ho, wo) = match (
            conv_out(sx[1], sk[0], stride.0),
            conv_out(sx[2], sk[1], stride.1),
        ) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(shape_err(
                    "conv2d",
                    format!("kernel {sk:?} stride {stride:?} does not fit input {sx:?}"),
                ))
            }
        };
        Ok(ConvGeom {
            b: sx[0],
            h: sx[1],
            w: sx[2],
            cin: sx[3],
            fh: sk[0],
            fw: sk[1],
            cout: sk[3],
            sh: stride.0,
            sw: stride.1,
            ho,
            wo,
        })
    }

    /// Valid cross-correlation of `x: [B, H, W, Cin]` with
    /// `kernel: [fh, fw, Cin, Cout]` plus `bias: [Cout]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: (usize, usize)) -> Result<Var> {
        let g = self.conv_geom(x, kernel, stride)?;
        if self.shape(bias) != [g.cout] {
            return Err(shape_err(
                "conv2d",
                format!("bias {:?} for {} filters", self.shape(bias), g.cout),
            ));
        }
        let cols = im2col(self.value(x).data(), &g);
        let (p, patch) = (g.positions(), g.patch());
        let mut out = Tensor::zeros(&[g.b, g.ho, g.wo, g.cout]);
        for row in out.data_mut().chunks_exact_mut(g.cout) {
            row.copy_from_slice(self.value(bias).data());
        }
        gemm(
            p,
            patch,
            g.cout,
            1.0,
            View::rows(&cols, patch),
            View::rows(self.value(kernel).data(), g.cout),
            1.0,
            ViewMut::rows(out.data_mut(), g.cout),
        );
        let rg = self.rg(&[x, kernel, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
            },
            rg,
        ))
    }

    /// Squash along the last axis: `s · |s|² / ((1 + |s|²)·sqrt(|s|² + ε))`.
    pub fn squash(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let d = out.last_dim();
        for v in out.data_mut().chunks_exact_mut(d) {
            let q: f64 = v.iter().map(|a| a * a).sum();
            let (f, _) = squash_scale(q);
            v.iter_mut().for_each(|a| *a *= f);
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::Squash(x), rg)
    }

    /// `sqrt(|x|² + ε)` along the last axis.
    pub fn norm(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let shape = &t.shape()[..t.shape().len() - 1];
        let data = t
            .data()
            .chunks_exact(d)
            .map(|v| (v.iter().map(|a| a * a).sum::<f64>() + NORM_EPS).sqrt())
            .collect();
        let out = Tensor::new(shape, data).expect("norm shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Norm(x), rg)
    }

    /// Capsule predictions `û[b, i, j] = W[i, j] · u[b, i]` for
    /// `u: [B, I, Din]`, `w: [I, J, Dout, Din]`.
    pub fn caps_predict(&mut self, u: Var, w: Var) -> Result<Var> {
        let (su, sw) = (self.shape(u), self.shape(w));
        if su.len() != 3 || sw.len() != 4 || su[1] != sw[0] || su[2] != sw[3] {
            return Err(shape_err("caps_predict", format!("u {su:?} with W {sw:?}")));
        }
        let (b, i_n, din, j_n, dout) = (su[0], su[1], su[2], sw[1], sw[2]);
        let jd = j_n * dout;
        let mut out = Tensor::zeros(&[b, i_n, j_n, dout]);
        let (ud, wd) = (self.value(u).data(), self.value(w).data());
        for i in 0..i_n {
            gemm(
                b,
                din,
                jd,
                1.0,
                View {
                    data: ud,
                    offset: i * din,
                    row_stride: i_n * din,
                    col_stride: 1,
                },
                View {
                    data: wd,
                    offset: i * jd * din,
                    row_stride: 1,
                    col_stride: din,
                },
                0.0,
                ViewMut {
                    data: out.data_mut(),
                    offset: i * jd,
                    row_stride: i_n * jd,
                    col_stride: 1,
                },
            );
        }
        let rg = self.rg(&[u, w]);
        Ok(self.push(out, Op::CapsPredict { u, w }, rg))
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let d = out.last_dim();
        for row in out.data_mut().chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::SoftmaxLast(x), rg)
    }

    /// `s[b, j] = Σ_i c[b, i, j] · û[b, i, j]` for `c: [B, I, J]`,
    /// `û: [B, I, J, D]`.
    pub fn route_sum(&mut self, c: Var, u_hat: Var) -> Result<Var> {
        let (sc, su) = (self.shape(c), self.shape(u_hat));
        if sc.len() != 3 || su.len() != 4 || sc != &su[..3] {
            return Err(shape_err("route_sum", format!("c {sc:?} with û {su:?}")));
        }
        let (b, i_n, j_n, d) = (su[0], su[1], su[2], su[3]);
        let (cd, ud) = (self.value(c).data(), self.value(u_hat).data());
        let mut out = vec![0.0; b * j_n * d];
        for bb in 0..b {
            let s = &mut out[bb * j_n * d..(bb + 1) * j_n * d];
            for i in 0..i_n {
                for j in 0..j_n {
                    let cij = cd[(bb * i_n + i) * j_n + j];
                    let u = &ud[((bb * i_n + i) * j_n + j) * d..][..d];
                    for (sv, uv) in s[j * d..(j + 1) * d].iter_mut().zip(u) {
                        *sv += cij * uv;
                    }
                }
            }
        }
        let out = Tensor::new(&[b, j_n, d], out)?;
        let rg = self.rg(&[c, u_hat]);
        Ok(self.push(out, Op::RouteSum { c, u_hat }, rg))
    }

    /// Agreement `a[b, i, j] = û[b, i, j] · v[b, j]`.
    pub fn agreement(&mut self, u_hat: Var, v: Var) -> Result<Var> {
        let (su, sv) = (self.shape(u_hat), self.shape(v));
        if su.len() != 4 || sv.len() != 3 || sv[0] != su[0] || sv[1] != su[2] || sv[2] != su[3] {
            return Err(shape_err("agreement", format!("û {su:?} with v {sv:?}")));
        }
        let (b, i_n, j_n, d) = (su[0], su[1], su[2], su[3]);
        let (ud, vd) = (self.value(u_hat).data(), self.value(v).data());
        let mut out = vec![0.0; b * i_n * j_n];
        for bb in 0..b {
            for i in 0..i_n {
                for j in 0..j_n {
                    let u = &ud[((bb * i_n + i) * j_n + j) * d..][..d];
                    let vv = &vd[(bb * j_n + j) * d..][..d];
                    out[(bb * i_n + i) * j_n + j] = u.iter().zip(vv).map(|(x, y)| x * y).sum();
                }
            }
        }
        let out = Tensor::new(&[b, i_n, j_n], out)?;
        let rg = self.rg(&[u_hat, v]);
        Ok(self.push(out, Op::Agreement { u_hat, v }, rg))
    }

    /// Keeps only capsule `targets[b]` of each sample and flattens to
    /// `[B, J·D]`.
    pub fn mask_caps(&mut self, v: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(v);
        if s.len() != 3 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
            return Err(shape_err(
                "mask_caps",
                format!("{s:?} with {} targets", targets.len()),
            ));
        }
        let (b, j_n, d) = (s[0], s[1], s[2]);
        let mut out = Tensor::zeros(&[b, j_n * d]);
        let src = self.value(v).data().to_vec();
        for (bb, &t) in targets.iter().enumerate() {
            let at = (bb * j_n + t) * d;
            out.data_mut()[at..at + d].copy_from_slice(&src[at..at + d]);
        }
        let rg = self.rg(&[v]);
        Ok(self.push(
            out,
            Op::MaskCaps {
                v,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Batch mean of the margin loss over capsule lengths `norms: [B, C]`.
    pub fn margin_loss(&mut self, norms: Var, targets: &[usize], lambda: f64) -> Result<Var> {
        let s = self.shape(norms);
        if s.len() != 2 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
            return Err(shape_err(
                "margin_loss",
                format!("{s:?} with {} targets", targets.len()),
            ));
        }
        let total: f64 = self
            .value(norms)
            .rows()
            .zip(targets)
            .map(|(row, &t)| super::loss::margin_loss(row, t, lambda))
            .sum();
        let out = Tensor::scalar(total / targets.len() as f64);
        let rg = self.rg(&[norms]);
        Ok(self.push(
            out,
            Op::MarginLoss {
                norms,
                targets: targets.to_vec(),
                lambda,
            },
            rg,
        ))
    }

    /// Batch mean of `−log softmax(logits)[target]`.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
            return Err(shape_err(
                "softmax_ce",
                format!("{s:?} with {} targets", targets.len()),
            ));
        }
        let total: f64 = self
            .value(logits)
            .rows()
            .zip(targets)
            .map(|(row, &t)| super::loss::softmax_cross_entropy(row, t))
            .sum();
        let out = Tensor::scalar(total / targets.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target with the same number of
    /// elements.
    pub fn mse(&mut self, x: Var, target: Tensor) -> Result<Var> {
        if self.value(x).len() != target.len() {
            return Err(shape_err(
                "mse",
                format!("{:?} vs {:?}", self.shape(x), target.shape()),
            ));
        }
        let out = Tensor::scalar(super::loss::mean_squared_error(
            self.value(x).data(),
            target.data(),
        ));
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Mse { x, target }, rg))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value
    /// that requires one.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_fn(self.value(loss).shape(), |_| 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients(grads)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.dim(0), ta.dim(1), tb.dim(1));
                if self.wants(*a) {
                    let mut da = Tensor::zeros(&[m, k]);
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        View::rows(g.data(), n),
                        View::transposed(tb.data(), n),
                        0.0,
                        ViewMut::rows(da.data_mut(), k),
                    );
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(&[k, n]);
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        View::transposed(ta.data(), k),
                        View::rows(g.data(), n),
                        0.0,
                        ViewMut::rows(db.data_mut(), n),
                    );
                    acc(*b, db);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*b) {
                    let n = g.last_dim();
                    let mut db = Tensor::zeros(&[n]);
                    for row in g.data().chunks_exact(n) {
                        for (d, r) in db.data_mut().iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    acc(*b, db);
                }
                if self.wants(*x) {
                    acc(*x, g.clone());
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Scale(x, s) => {
                let mut d = g.clone();
                d.data_mut().iter_mut().for_each(|v| *v *= s);
                acc(*x, d);
            }
            Op::MulConst(x, c) => {
                let mut d = g.clone();
                for (v, m) in d.data_mut().iter_mut().zip(c.data()) {
                    *v *= m;
                }
                acc(*x, d);
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                for (v, xi) in d.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if *xi <= 0.0 {
                        *v = 0.0;
                    }
                }
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                for (v, y) in d.data_mut().iter_mut().zip(node.value.data()) {
                    *v *= y * (1.0 - y);
                }
                acc(*x, d);
            }
            Op::Reshape(x) => {
                let d = g.clone().reshape(self.shape(*x)).expect("same size");
                acc(*x, d);
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
            } => {
                let geo = self.conv_geom(*x, *kernel, *stride).expect("checked on record");
                let (p, patch, cout) = (geo.positions(), geo.patch(), geo.cout);
                if self.wants(*bias) {
                    let mut db = Tensor::zeros(&[cout]);
                    for row in g.data().chunks_exact(cout) {
                        for (d, r) in db.data_mut().iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    acc(*bias, db);
                }
                if self.wants(*kernel) {
                    let cols = im2col(self.value(*x).data(), &geo);
                    let mut dk = Tensor::zeros(self.shape(*kernel));
                    gemm(
                        patch,
                        p,
                        cout,
                        1.0,
                        View::transposed(&cols, patch),
                        View::rows(g.data(), cout),
                        0.0,
                        ViewMut::rows(dk.data_mut(), cout),
                    );
                    acc(*kernel, dk);
                }
                if self.wants(*x) {
                    let mut dcols = vec![0.0; p * patch];
                    gemm(
                        p,
                        cout,
                        patch,
                        1.0,
                        View::rows(g.data(), cout),
                        View::transposed(self.value(*kernel).data(), cout),
                        0.0,
                        ViewMut::rows(&mut dcols, patch),
                    );
                    let dx = Tensor::new(self.shape(*x), col2im(&dcols, &geo)).expect("geometry");
                    acc(*x, dx);
                }
            }
            Op::Squash(x) => {
                let xs = self.value(*x);
                let d = xs.last_dim();
                let mut dx = g.clone();
                for (gv, s) in dx.data_mut().chunks_exact_mut(d).zip(xs.data().chunks_exact(d)) {
                    let q: f64 = s.iter().map(|a| a * a).sum();
                    let (f, df) = squash_scale(q);
                    let gs: f64 = gv.iter().zip(s).map(|(a, b)| a * b).sum();
                    for (gi, si) in gv.iter_mut().zip(s) {
                        *gi = *gi * f + 2.0 * si * df * gs;
                    }
                }
                acc(*x, dx);
            }
            Op::Norm(x) => {
                let xs = self.value(*x);
                let d = xs.last_dim();
                let mut dx = xs.clone();
                for ((v, &n), &gv) in dx
                    .data_mut()
                    .chunks_exact_mut(d)
                    .zip(node.value.data())
                    .zip(g.data())
                {
                    v.iter_mut().for_each(|a| *a *= gv / n);
                }
                acc(*x, dx);
            }
            Op::CapsPredict { u, w } => {
                let (tu, tw) = (self.value(*u), self.value(*w));
                let (b, i_n, din) = (tu.dim(0), tu.dim(1), tu.dim(2));
                let jd = tw.dim(1) * tw.dim(2);
                if self.wants(*w) {
                    let mut dw = Tensor::zeros(tw.shape());
                    for i in 0..i_n {
                        // dW_i [jd, din] = dÛ_iᵀ [jd, B] · U_i [B, din]
                        gemm(
                            jd,
                            b,
                            din,
                            1.0,
                            View {
                                data: g.data(),
                                offset: i * jd,
                                row_stride: 1,
                                col_stride: i_n * jd,
                            },
                            View {
                                data: tu.data(),
                                offset: i * din,
                                row_stride: i_n * din,
                                col_stride: 1,
                            },
                            0.0,
                            ViewMut {
                                data: dw.data_mut(),
                                offset: i * jd * din,
                                row_stride: din,
                                col_stride: 1,
                            },
                        );
                    }
                    acc(*w, dw);
                }
                if self.wants(*u) {
                    let mut du = Tensor::zeros(tu.shape());
                    for i in 0..i_n {
                        // dU_i [B, din] = dÛ_i [B, jd] · W_i [jd, din]
                        gemm(
                            b,
                            jd,
                            din,
                            1.0,
                            View {
                                data: g.data(),
                                offset: i * jd,
                                row_stride: i_n * jd,
                                col_stride: 1,
                            },
                            View {
                                data: tw.data(),
                                offset: i * jd * din,
                                row_stride: din,
                                col_stride: 1,
                            },
                            0.0,
                            ViewMut {
                                data: du.data_mut(),
                                offset: i * din,
                                row_stride: i_n * din,
                                col_stride: 1,
                            },
                        );
                    }
                    acc(*u, du);
                }
            }
            Op::SoftmaxLast(x) => {
                let d = node.value.last_dim();
                let mut dx = g.clone();
                for (gv, y) in dx
                    .data_mut()
                    .chunks_exact_mut(d)
                    .zip(node.value.data().chunks_exact(d))
                {
                    let dot: f64 = gv.iter().zip(y).map(|(a, b)| a * b).sum();
                    for (gi, yi) in gv.iter_mut().zip(y) {
                        *gi = yi * (*gi - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::RouteSum { c, u_hat } => {
                let (tc, tu) = (self.value(*c), self.value(*u_hat));
                let s = tu.shape();
                let (b, i_n, j_n, d) = (s[0], s[1], s[2], s[3]);
                let want_c = self.wants(*c);
                let want_u = self.wants(*u_hat);
                let mut dc = Tensor::zeros(tc.shape());
                let mut du = Tensor::zeros(tu.shape());
                for bb in 0..b {
                    for i in 0..i_n {
                        for j in 0..j_n {
                            let cij = (bb * i_n + i) * j_n + j;
                            let gs = &g.data()[(bb * j_n + j) * d..][..d];
                            let off = cij * d;
                            if want_c {
                                dc.data_mut()[cij] = tu.data()[off..off + d]
                                    .iter()
                                    .zip(gs)
                                    .map(|(a, b)| a * b)
                                    .sum();
                            }
                            if want_u {
                                let cv = tc.data()[cij];
                                for (o, gv) in du.data_mut()[off..off + d].iter_mut().zip(gs) {
                                    *o = cv * gv;
                                }
                            }
                        }
                    }
                }
                if want_c {
                    acc(*c, dc);
                }
                if want_u {
                    acc(*u_hat, du);
                }
            }
            Op::Agreement { u_hat, v } => {
                let (tu, tv) = (self.value(*u_hat), self.value(*v));
                let s = tu.shape();
                let (b, i_n, j_n, d) = (s[0], s[1], s[2], s[3]);
                let mut du = Tensor::zeros(tu.shape());
                let mut dv = Tensor::zeros(tv.shape());
                for bb in 0..b {
                    for i in 0..i_n {
                        for j in 0..j_n {
                            let gij = g.data()[(bb * i_n + i) * j_n + j];
                            let off = ((bb * i_n + i) * j_n + j) * d;
                            let voff = (bb * j_n + j) * d;
                            for t in 0..d {
                                du.data_mut()[off + t] = gij * tv.data()[voff + t];
                                dv.data_mut()[voff + t] += gij * tu.data()[off + t];
                            }
                        }
                    }
                }
                if self.wants(*u_hat) {
                    acc(*u_hat, du);
                }
                if self.wants(*v) {
                    acc(*v, dv);
                }
            }
            Op::MaskCaps { v, targets } => {
                let s = self.shape(*v);
                let (j_n, d) = (s[1], s[2]);
                let mut dv = Tensor::zeros(s);
                for (bb, &t) in targets.iter().enumerate() {
                    let at = (bb * j_n + t) * d;
                    dv.data_mut()[at..at + d].copy_from_slice(&g.data()[at..at + d]);
                }
                acc(*v, dv);
            }
            Op::MarginLoss {
                norms,
                targets,
                lambda,
            } => {
                let t = self.value(*norms);
                let scale = g.item() / targets.len() as f64;
                let mut dn = t.clone();
                let c = t.last_dim();
                for (row, &tg) in dn.data_mut().chunks_exact_mut(c).zip(targets) {
                    for (k, x) in row.iter_mut().enumerate() {
                        let n = *x;
                        *x = if k == tg {
                            -2.0 * (super::loss::M_PLUS - n).max(0.0)
                        } else {
                            2.0 * lambda * (n - super::loss::M_MINUS).max(0.0)
                        } * scale;
                    }
                }
                acc(*norms, dn);
            }
            Op::SoftmaxCe { logits, targets } => {
                let scale = g.item() / targets.len() as f64;
                let mut dz = self.value(*logits).clone();
                let c = dz.last_dim();
                for (row, &tg) in dz.data_mut().chunks_exact_mut(c).zip(targets) {
                    softmax_in_place(row);
                    row[tg] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                acc(*logits, dz);
            }
            Op::Mse { x, target } => {
                let xs = self.value(*x);
                let scale = 2.0 * g.item() / xs.len() as f64;
                let mut dx = xs.clone();
                for (v, t) in dx.data_mut().iter_mut().zip(target.data()) {
                    *v = (*v - t) * scale;
                }
                acc(*x, dx);
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
