//! Exact t-SNE.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub out_dims: usize,
    pub iters: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    /// Iterations with exaggerated affinities and low momentum.
    pub early_iters: usize,
    pub seed: u64,
}

impl TsneConfig {
    pub fn new(perplexity: f64, seed: u64) -> Self {
        Self {
            perplexity,
            out_dims: 2,
            iters: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            early_iters: 250,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `m × out_dims`, row-major.
    pub coords: Vec<f64>,
    pub kl_initial: f64,
    pub kl_final: f64,
}

/// Squared Euclidean distances of `m` rows of length `dim`.
pub fn squared_distances(points: &[f64], dim: usize) -> Vec<f64> {
    let m = points.len() / dim;
    let mut d = vec![0.0; m * m];
    d.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let a = &points[i * dim..(i + 1) * dim];
        for (j, out) in row.iter_mut().enumerate() {
            let b = &points[j * dim..(j + 1) * dim];
            *out = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    });
    d
}

/// Conditional distribution of one point given its squared distances to the
/// others (`dists[self_index]` is ignored) and precision `beta`. Returns the
/// probabilities and their Shannon entropy in nats.
pub fn conditional(dists: &[f64], self_index: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = dists
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != self_index)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dists
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == self_index { 0.0 } else { (-(d - min) * beta).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (j, v) in p.iter_mut().enumerate() {
        *v /= sum;
        if j != self_index {
            weighted += *v * (dists[j] - min);
        }
    }
    // H = ln Σ exp(−β(d − min)) + β·E[d − min]
    (p, sum.ln() + beta * weighted)
}

/// Binary search for the precision whose conditional entropy is
/// `ln(perplexity)`. Returns `(beta, probabilities, entropy)`.
pub fn search_beta(dists: &[f64], self_index: usize, perplexity: f64) -> (f64, Vec<f64>, f64) {
    let target = perplexity.ln();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let (mut p, mut h) = conditional(dists, self_index, beta);
    for _ in 0..200 {
        let diff = h - target;
        if diff.abs() < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        (p, h) = conditional(dists, self_index, beta);
    }
    (beta, p, h)
}

/// Symmetric joint affinities `P = (P_{j|i} + P_{i|j}) / 2m` and the
/// per-point entropies reached.
pub fn joint_probabilities(points: &[f64], dim: usize, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = check_input(points, dim, perplexity)?;
    let d = squared_distances(points, dim);
    let rows: Vec<(Vec<f64>, f64)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let (_, p, h) = search_beta(&d[i * m..(i + 1) * m], i, perplexity);
            (p, h)
        })
        .collect();
    let mut p = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            p[i * m + j] = (rows[i].0[j] + rows[j].0[i]) / (2.0 * m as f64);
        }
    }
    Ok((p, rows.into_iter().map(|r| r.1).collect()))
}

fn check_input(points: &[f64], dim: usize, perplexity: f64) -> Result<usize> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Shape(format!("{} values do not form rows of {dim}", points.len())));
    }
    let m = points.len() / dim;
    if m < 3 {
        return Err(Error::Domain(format!("t-SNE needs at least 3 points, got {m}")));
    }
    if !(perplexity > 1.0 && perplexity < (m - 1) as f64) {
        return Err(Error::Domain(format!(
            "perplexity {perplexity} is infeasible for {m} points (needs 1 < p < {})",
            m - 1
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("t-SNE input contains non-finite values".into()));
    }
    let first = &points[..dim];
    if points.chunks_exact(dim).all(|r| r == first) {
        return Err(Error::Domain("t-SNE input has zero variance (all points identical)".into()));
    }
    Ok(m)
}

/// KL(P || Q) and the unnormalized Student-t kernel of `y`.
fn kl_and_kernel(p: &[f64], y: &[f64], m: usize, dims: usize) -> (f64, Vec<f64>, f64) {
    let mut num = vec![0.0; m * m];
    let mut sum = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let d: f64 = (0..dims).map(|a| (y[i * dims + a] - y[j * dims + a]).powi(2)).sum();
            let v = 1.0 / (1.0 + d);
            num[i * m + j] = v;
            num[j * m + i] = v;
            sum += 2.0 * v;
        }
    }
    let mut kl = 0.0;
    for (idx, &pv) in p.iter().enumerate() {
        if pv > 0.0 && idx / m != idx % m {
            let q = (num[idx] / sum).max(f64::MIN_POSITIVE);
            kl += pv * (pv / q).ln();
        }
    }
    (kl, num, sum)
}

pub fn kl_divergence(p: &[f64], y: &[f64], dims: usize) -> f64 {
    let m = y.len() / dims;
    kl_and_kernel(p, y, m, dims).0
}

pub fn tsne(points: &[f64], dim: usize, cfg: &TsneConfig) -> Result<TsneResult> {
    if cfg.out_dims == 0 {
        return Err(Error::Config("t-SNE output dimension must be positive".into()));
    }
    let (p, _) = joint_probabilities(points, dim, cfg.perplexity)?;
    let m = points.len() / dim;
    let dims = cfg.out_dims;
    let mut r = rng::seeded(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<f64> = (0..m * dims).map(|_| normal.sample(&mut r)).collect();
    let kl_initial = kl_divergence(&p, &y, dims);
    let mut velocity = vec![0.0; m * dims];
    let mut gains = vec![1.0f64; m * dims];
    let mut grad = vec![0.0; m * dims];
    for it in 0..cfg.iters {
        let early = it < cfg.early_iters;
        let exag = if early { cfg.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let (_, num, sum) = kl_and_kernel(&p, &y, m, dims);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let w = num[i * m + j];
                let f = 4.0 * (exag * p[i * m + j] - w / sum) * w;
                for a in 0..dims {
                    grad[i * dims + a] += f * (y[i * dims + a] - y[j * dims + a]);
                }
            }
        }
        for idx in 0..m * dims {
            let same_sign = (grad[idx] > 0.0) == (velocity[idx] > 0.0);
            gains[idx] = if same_sign { gains[idx] * 0.8 } else { gains[idx] + 0.2 };
            gains[idx] = gains[idx].max(0.01);
            velocity[idx] = momentum * velocity[idx] - cfg.learning_rate * gains[idx] * grad[idx];
            y[idx] += velocity[idx];
        }
        for a in 0..dims {
            let mean = (0..m).map(|i| y[i * dims + a]).sum::<f64>() / m as f64;
            (0..m).for_each(|i| y[i * dims + a] -= mean);
        }
    }
    let kl_final = kl_divergence(&p, &y, dims);
    if !kl_final.is_finite() {
        return Err(Error::Training("t-SNE diverged".into()));
    }
    Ok(TsneResult {
        coords: y,
        kl_initial,
        kl_final,
    })
}
