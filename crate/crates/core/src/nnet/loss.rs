use super::scalar::Float;
use crate::error::{Error, Result};

/// Probabilities are clamped here before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

fn check(probs_len: usize, labels: &[usize], n_classes: usize) -> Result<()> {
    if probs_len != labels.len() * n_classes {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for {} labels of {n_classes} classes",
            probs_len,
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::ShapeMismatch(format!("label {l} out of range")));
    }
    Ok(())
}

/// Mean over the batch of `w[y] * -ln p[y]`; `probs` is row-major B×C.
pub fn weighted_ce_loss<T: Float>(probs: &[T], labels: &[usize], weights: &[f64]) -> Result<f64> {
    let c = weights.len();
    check(probs.len(), labels, c)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| weights[y] * -probs[b * c + y].to_f64().max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of [`weighted_ce_loss`] with respect to the softmax logits:
/// `w[y] / B * (p - onehot(y))`. The clamp is treated as inactive.
pub fn weighted_ce_logit_grad<T: Float>(probs: &[T], labels: &[usize], weights: &[f64]) -> Result<Vec<T>> {
    let c = weights.len();
    check(probs.len(), labels, c)?;
    let inv_b = 1.0 / labels.len().max(1) as f64;
    let mut g = vec![T::ZERO; probs.len()];
    for (b, &y) in labels.iter().enumerate() {
        let scale = T::from_f64(weights[y] * inv_b);
        for k in 0..c {
            let target = if k == y { T::ONE } else { T::ZERO };
            g[b * c + k] = scale * (probs[b * c + k] - target);
        }
    }
    Ok(g)
}

/// Row-wise softmax of a row-major B×C matrix.
pub fn softmax<T: Float>(logits: &[T], c: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().fold(row[0], |m, &v| m.max(v));
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn loss_examples() {
        assert_eq!(weighted_ce_loss(&[1.0f64, 0.0], &[0], &[1.0, 1.0]).unwrap(), 0.0);
        let l = weighted_ce_loss(&[0.5f64, 0.5], &[0], &[1.0, 1.0]).unwrap();
        assert!((l - LN2).abs() < 1e-12);
        let l = weighted_ce_loss(&[0.5f64, 0.5], &[0], &[2.0, 1.0]).unwrap();
        assert!((l - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let l = weighted_ce_loss(&[0.0f64, 1.0], &[0], &[1.0, 1.0]).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn loss_is_batch_mean() {
        let l = weighted_ce_loss(&[0.5f64, 0.5, 1.0, 0.0], &[0, 0], &[1.0, 1.0]).unwrap();
        assert!((l - LN2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn logit_grad_matches_finite_difference() {
        let logits = [0.3f64, -1.2, 2.0, 0.5];
        let labels = [1, 0];
        let w = [1.5, 0.5];
        let loss = |z: &[f64]| weighted_ce_loss(&softmax(z, 2), &labels, &w).unwrap();
        let g = weighted_ce_logit_grad(&softmax(&logits, 2), &labels, &w).unwrap();
        for i in 0..4 {
            let mut zp = logits;
            let mut zm = logits;
            zp[i] += 1e-6;
            zm[i] -= 1e-6;
            let n = (loss(&zp) - loss(&zm)) / 2e-6;
            assert!((n - g[i]).abs() < 1e-8, "{i}: {n} vs {}", g[i]);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0f64, 3.0], 2);
        let b = softmax(&[101.0f64, 103.0], 2);
        assert!((a[0] - b[0]).abs() < 1e-15);
        assert!((a[0] + a[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        assert!(weighted_ce_loss(&[0.5f64, 0.5], &[0, 1], &[1.0, 1.0]).is_err());
        assert!(weighted_ce_loss(&[0.5f64, 0.5], &[2], &[1.0, 1.0]).is_err());
    }
}
