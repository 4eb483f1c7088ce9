//! Squash and routing-by-agreement.

use crate::error::Result;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const DEFAULT_ROUTING_ITERS: usize = 3;

/// Squash of a single vector (same stabilized form as the tape op).
pub fn squash(v: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[v.len()], v.to_vec()).expect("1-d"));
    let y = tape.squash(x);
    tape.value(y).data().to_vec()
}

/// Routing on the tape for batched predictions `û: [B, I, J, D]`.
///
/// Logits start at zero; each iteration takes the softmax over output
/// capsules, forms the coupled sum, squashes it, and (except after the last
/// iteration) adds the agreement to the logits. Returns the output capsules
/// `[B, J, D]` and the coupling coefficients used at every iteration.
pub fn route(tape: &mut Tape, u_hat: Var, iters: usize) -> Result<(Var, Vec<Var>)> {
    let s = tape.shape(u_hat).to_vec();
    let mut logits = tape.constant(Tensor::zeros(&s[..3]));
    let mut couplings = Vec::with_capacity(iters);
    let mut v = None;
    for it in 0..iters.max(1) {
        let c = tape.softmax_last(logits);
        couplings.push(c);
        let sum = tape.route_sum(c, u_hat)?;
        let out = tape.squash(sum);
        v = Some(out);
        if it + 1 < iters {
            let a = tape.agreement(u_hat, out)?;
            logits = tape.add(logits, a)?;
        }
    }
    Ok((v.expect("at least one iteration"), couplings))
}

#[derive(Debug, Clone)]
pub struct RoutingOutput {
    /// `[n_out, dim_out]`.
    pub capsules: Tensor,
    /// `[n_in, n_out]` coupling coefficients, one per iteration.
    pub couplings: Vec<Tensor>,
}

/// Unbatched routing of predictions `[n_in, n_out, dim_out]`.
pub fn dynamic_routing(u_hat: &Tensor, iters: usize) -> Result<RoutingOutput> {
    let s = u_hat.shape();
    let batched = u_hat.clone().reshape(&[1, s[0], s[1], s[2]])?;
    let mut tape = Tape::new();
    let u = tape.constant(batched);
    let (v, cs) = route(&mut tape, u, iters)?;
    Ok(RoutingOutput {
        capsules: tape.value(v).clone().reshape(&[s[1], s[2]])?,
        couplings: cs
            .into_iter()
            .map(|c| tape.value(c).clone().reshape(&[s[0], s[1]]).expect("coupling shape"))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn squash_examples() {
        assert_eq!(squash(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        let e = squash(&[0.0, 1.0]);
        assert!((e[1] - 0.5).abs() < 1e-9 && e[0] == 0.0);
        let t = squash(&[3.0, 0.0, 0.0]);
        assert!((t[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn squash_preserves_direction_and_bounds_norm() {
        let mut r = rng::seeded(3);
        for _ in 0..200 {
            let v: Vec<f64> = (0..8).map(|_| r.random_range(-5.0..5.0)).collect();
            let s = squash(&v);
            assert!(norm(&s) < 1.0);
            let cos = v.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / (norm(&v) * norm(&s));
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_capsule_routes_to_its_squash() {
        let u = Tensor::new(&[1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = dynamic_routing(&u, 3).unwrap();
        assert_eq!(out.capsules.data(), squash(&[0.5, -1.0, 2.0]).as_slice());
        assert!(out.couplings.iter().all(|c| c.data() == [1.0]));
    }

    #[test]
    fn one_iteration_couples_uniformly() {
        let u = Tensor::from_fn(&[4, 3, 2], |i| (i as f64 * 0.37).sin());
        let out = dynamic_routing(&u, 1).unwrap();
        assert_eq!(out.couplings.len(), 1);
        assert!(out.couplings[0].data().iter().all(|&c| (c - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn coupling_rows_sum_to_one() {
        let mut r = rng::seeded(11);
        for iters in 1..=5 {
            let u = Tensor::from_fn(&[6, 4, 5], |_| r.random_range(-1.0..1.0));
            let out = dynamic_routing(&u, iters).unwrap();
            assert_eq!(out.couplings.len(), iters);
            for c in &out.couplings {
                for row in c.data().chunks_exact(4) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
