//! Central finite differences against reverse-mode gradients.

/// Largest elementwise relative error between the reverse-mode gradient of
/// `f` at `point` and central differences with step `h`.
///
/// `f` returns the value and its reverse-mode gradient. The relative error of
/// one coordinate is `|a − n| / max(|a|, |n|, floor)`; `floor` keeps
/// coordinates whose true gradient is (numerically) zero from dividing by
/// round-off.
pub fn grad_check<F>(f: F, point: &[f64], h: f64, floor: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(h > 0.0);
    let (_, analytic) = f(point);
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let (fp, _) = f(&x);
        x[i] = orig - h;
        let (fm, _) = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Default floor for [`grad_check`].
pub const REL_FLOOR: f64 = 1e-8;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Tape, Tensor};
    use crate::rng;
    use rand::Rng;

    #[test]
    fn linear_map_is_exact() {
        let c = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| (x.iter().zip(&c).map(|(a, b)| a * b).sum(), c.to_vec());
        assert!(grad_check(f, &[0.3, 0.1, -4.0], 1e-5, REL_FLOOR) < 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| (x[0] * x[0], vec![3.0 * x[0]]);
        assert!(grad_check(f, &[1.0], 1e-5, REL_FLOOR) > 0.1);
    }

    fn tape_check<B>(shape: &[usize], seed: u64, build: B) -> f64
    where
        B: Fn(&mut Tape, crate::nn::Var) -> crate::nn::Var,
    {
        let mut r = rng::seeded(seed);
        let point: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let f = |x: &[f64]| {
            let mut t = Tape::new();
            let v = t.param(Tensor::new(shape, x.to_vec()).unwrap());
            let out = build(&mut t, v);
            let mut g = t.backward(out);
            (t.value(out).item(), g.take_or_zeros(v, shape).into_data())
        };
        grad_check(f, &point, 1e-5, REL_FLOOR)
    }

    /// Reduces any tensor to a scalar through a fixed random projection.
    fn project(t: &mut Tape, x: crate::nn::Var, seed: u64) -> crate::nn::Var {
        let n = t.value(x).len();
        let mut r = rng::seeded(seed);
        let target = Tensor::from_fn(&[n], |_| r.random_range(-1.0..1.0));
        let flat = t.reshape(x, &[n]).unwrap();
        t.mse(flat, target).unwrap()
    }

    #[test]
    fn squash_gradient() {
        for seed in 0..5 {
            let e = tape_check(&[3, 4], seed, |t, x| {
                let s = t.squash(x);
                project(t, s, 99)
            });
            assert!(e < 1e-6, "squash rel err {e}");
        }
    }

    #[test]
    fn elementwise_and_dense_gradients() {
        let e = tape_check(&[2, 3], 1, |t, x| {
            let w = t.constant(Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.7).cos()));
            let b = t.constant(Tensor::from_fn(&[4], |i| i as f64 * 0.1));
            let y = t.matmul(x, w).unwrap();
            let y = t.add_bias(y, b).unwrap();
            let y = t.sigmoid(y);
            let y = t.scale(y, 1.7);
            project(t, y, 5)
        });
        assert!(e < 1e-6, "{e}");
        let e = tape_check(&[3, 4], 2, |t, w| {
            let x = t.constant(Tensor::from_fn(&[2, 3], |i| (i as f64 * 0.3).sin()));
            let y = t.matmul(x, w).unwrap();
            let y = t.relu(y);
            project(t, y, 6)
        });
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn conv_gradients() {
        let e = tape_check(&[2, 5, 4, 2], 3, |t, x| {
            let k = t.constant(Tensor::from_fn(&[3, 2, 2, 3], |i| (i as f64 * 0.13).sin()));
            let b = t.constant(Tensor::from_fn(&[3], |i| i as f64));
            let y = t.conv2d(x, k, b, (2, 1)).unwrap();
            project(t, y, 7)
        });
        assert!(e < 1e-6, "conv input {e}");
        let e = tape_check(&[3, 2, 2, 3], 4, |t, k| {
            let x = t.constant(Tensor::from_fn(&[2, 5, 4, 2], |i| (i as f64 * 0.41).cos()));
            let b = t.constant(Tensor::zeros(&[3]));
            let y = t.conv2d(x, k, b, (2, 1)).unwrap();
            project(t, y, 8)
        });
        assert!(e < 1e-6, "conv kernel {e}");
    }

    #[test]
    fn routing_gradients() {
        for iters in 1..=3 {
            let e = tape_check(&[2, 3, 2, 4], 10 + iters as u64, |t, u| {
                let (v, _) = crate::nn::routing::route(t, u, iters).unwrap();
                let n = t.norm(v);
                t.margin_loss(n, &[0, 1], 0.5).unwrap()
            });
            assert!(e < 1e-6, "routing r={iters}: {e}");
        }
    }

    #[test]
    fn caps_predict_gradients() {
        let e = tape_check(&[3, 2, 4, 5], 20, |t, w| {
            let u = t.constant(Tensor::from_fn(&[2, 3, 5], |i| (i as f64 * 0.29).sin()));
            let y = t.caps_predict(u, w).unwrap();
            project(t, y, 9)
        });
        assert!(e < 1e-6, "W {e}");
        let e = tape_check(&[2, 3, 5], 21, |t, u| {
            let w = t.constant(Tensor::from_fn(&[3, 2, 4, 5], |i| (i as f64 * 0.17).cos()));
            let y = t.caps_predict(u, w).unwrap();
            project(t, y, 10)
        });
        assert!(e < 1e-6, "u {e}");
    }

    #[test]
    fn loss_gradients() {
        let e = tape_check(&[3, 4], 30, |t, z| t.softmax_ce(z, &[0, 3, 1]).unwrap());
        assert!(e < 1e-6, "{e}");
        let e = tape_check(&[2, 3, 4], 31, |t, v| {
            let m = t.mask_caps(v, &[2, 0]).unwrap();
            let s = t.sigmoid(m);
            project(t, s, 11)
        });
        assert!(e < 1e-6, "{e}");
    }
}
