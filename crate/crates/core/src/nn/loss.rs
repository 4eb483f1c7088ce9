//! Scalar loss functions. The tape ops in [`super::tape`] call into these for
//! their forward values.

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const M_PLUS: f64 = 0.9;
pub const M_MINUS: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// `Σ_k T_k·max(0, m⁺ − |v_k|)² + λ(1 − T_k)·max(0, |v_k| − m⁻)²`.
pub fn margin_loss(norms: &[f64], target: usize, lambda: f64) -> f64 {
    norms
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if k == target {
                (M_PLUS - n).max(0.0).powi(2)
            } else {
                lambda * (n - M_MINUS).max(0.0).powi(2)
            }
        })
        .sum()
}

/// `−log softmax(logits)[target]`, computed stably.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Two-class loss: softmax over the capsule lengths, then cross-entropy.
pub fn binary_margin_loss(norms: &[f64], target: usize) -> Result<f64> {
    if norms.len() != 2 {
        return Err(Error::Contract(format!(
            "binary loss needs exactly 2 classes, got {}",
            norms.len()
        )));
    }
    if target >= 2 {
        return Err(Error::Contract(format!("target {target} outside 0..2")));
    }
    Ok(softmax_cross_entropy(norms, target))
}

pub(crate) fn mean_squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

pub fn reconstruction_loss(reconstructed: &Tensor, original: &Tensor) -> Result<f64> {
    if reconstructed.shape() != original.shape() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs original {:?}",
            reconstructed.shape(),
            original.shape()
        )));
    }
    Ok(mean_squared_error(reconstructed.data(), original.data()))
}

/// `ml + α·mse`.
pub fn total_loss(ml: f64, mse: f64, alpha: f64) -> f64 {
    ml + alpha * mse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_examples() {
        assert_eq!(margin_loss(&[0.9, 0.1], 0, 0.5), 0.0);
        assert_eq!(margin_loss(&[0.0, 0.0, 0.0], 0, 0.5), 0.81);
        assert!((margin_loss(&[0.9, 1.0], 0, 0.5) - 0.405).abs() < 1e-15);
    }

    #[test]
    fn binary_examples() {
        assert!((binary_margin_loss(&[0.4, 0.4], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(binary_margin_loss(&[60.0, 0.0], 0).unwrap() < 1e-20);
        // independent scalar evaluation: −ln(e^0.9 / (e^0.9 + e^0.1))
        let want = -(0.9f64.exp() / (0.9f64.exp() + 0.1f64.exp())).ln();
        assert!((binary_margin_loss(&[0.9, 0.1], 0).unwrap() - want).abs() < 1e-15);
        assert!(matches!(
            binary_margin_loss(&[0.1, 0.2, 0.3], 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reconstruction_examples() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        let b = Tensor::from_fn(&[2, 3], |i| i as f64 + 1.0);
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), 1.0);
        assert!(reconstruction_loss(&a, &Tensor::zeros(&[3, 2])).is_err());
        // scalar loop oracle on an uneven pair
        let c = Tensor::from_fn(&[2, 3], |i| ((i * 7) % 5) as f64 * 0.3);
        let mut want = 0.0;
        for i in 0..6 {
            want += (a.data()[i] - c.data()[i]) * (a.data()[i] - c.data()[i]);
        }
        assert!((reconstruction_loss(&a, &c).unwrap() - want / 6.0).abs() < 1e-15);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(0.0, 0.0, 1.0), 0.0);
        assert_eq!(total_loss(0.81, 0.0, 1.0), 0.81);
        assert!((total_loss(0.3, 0.2, 0.5) - 0.4).abs() < 1e-15);
    }
}
