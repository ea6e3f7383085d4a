use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::Architecture;
use super::forward::{backward, forward, forward_tracked, Mode};
use super::loss::weighted_ce_loss;
use super::model::ModelParams;
use crate::error::Result;

/// Floor of the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;
/// Inputs with any ReLU or max-pool kink closer than this are rejected.
pub const MIN_KINK_MARGIN: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Largest relative error and the index where it occurs.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) })
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + eps;
            let up = f(&p);
            p[i] = x[i] - eps;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    /// Weight tensor and flat index of the worst entry.
    pub worst: (&'static str, usize),
    pub kink_margin: f64,
}

impl GradCheck {
    /// Recomputes the error after replacing the analytic gradient.
    pub fn with_analytic(&self, analytic: Vec<f64>, model: &ModelParams<f64>) -> Self {
        let (e, i) = max_relative_error(&analytic, &self.numeric);
        Self {
            max_rel_error: e,
            worst: (model.weight_name(i).unwrap_or("?"), i),
            analytic,
            ..self.clone()
        }
    }
}

/// Compares backpropagation against central differences for every weight.
/// `mode` must be deterministic (`Infer` or `BatchStats`).
pub fn gradient_check(model: &ModelParams<f64>, x: &[f64], labels: &[usize], class_weights: [f64; 2], mode: Mode, eps: f64) -> Result<GradCheck> {
    assert!(!matches!(mode, Mode::Train { .. }), "gradient check needs a deterministic mode");
    let batch = labels.len();
    let trace = forward_tracked(model, x, batch, mode)?;
    let analytic = backward(model, &trace, labels, class_weights)?;
    let mut probe = model.clone();
    let numeric = numeric_gradient(
        |w| {
            probe.weights.copy_from_slice(w);
            let tr = forward(&probe, x, batch, mode).expect("perturbed forward");
            weighted_ce_loss(&tr.probs, labels, &class_weights).expect("loss")
        },
        &model.weights,
        eps,
    );
    let (e, i) = max_relative_error(&analytic, &numeric);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_error: e,
        worst: (model.weight_name(i).unwrap_or("?"), i),
        kink_margin: trace.kink_margin.unwrap_or(f64::INFINITY),
    })
}

/// Reduced model with randomised batch-norm state, plus a batch whose kink
/// margin is at least [`MIN_KINK_MARGIN`]. Input seeds are retried until
/// the margin holds.
pub fn gradcheck_fixture(seed: u64, batch: usize, mode: Mode) -> Result<(ModelParams<f64>, Vec<f64>, Vec<usize>)> {
    let arch = Architecture::reduced();
    let mut model = ModelParams::<f64>::init(arch.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c4e_c4ec);
    let idx = model.index().clone();
    for r in [&idx.bn1_gamma, &idx.bn2_gamma, &idx.bn3_gamma] {
        for v in &mut model.weights[r.clone()] {
            *v = rng.random_range(0.5..1.5);
        }
    }
    for r in [&idx.bn1_beta, &idx.bn2_beta, &idx.bn3_beta, &idx.conv1_b, &idx.conv2_b, &idx.conv2d_b, &idx.dense_b] {
        for v in &mut model.weights[r.clone()] {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    let bi = model.buffer_index().clone();
    for k in 0..3 {
        for v in &mut model.buffers[bi.bn_mean[k].clone()] {
            *v = rng.random_range(-0.2..0.2);
        }
        for v in &mut model.buffers[bi.bn_var[k].clone()] {
            *v = rng.random_range(0.5..2.0);
        }
    }
    let n = batch * arch.in_channels * arch.input_len;
    // Physical units: tens of g and thousands of rad/s^2.
    let scale: Vec<f64> = arch.input_scale.iter().map(|s| 1.0 / s).collect();
    for attempt in 0..1000u64 {
        let mut xr = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(attempt));
        let x: Vec<f64> = (0..n)
            .map(|i| xr.random_range(-1.0..1.0) * scale[(i / arch.input_len) % arch.in_channels])
            .collect();
        let labels: Vec<usize> = (0..batch).map(|b| (b + seed as usize) % 2).collect();
        if forward_tracked(&model, &x, batch, mode)?.kink_margin.is_some_and(|k| k >= MIN_KINK_MARGIN) {
            return Ok((model, x, labels));
        }
    }
    Err(crate::Error::InsufficientData("no kink-free gradient-check input found".into()))
}

/// Dense layer `y = W x + b` under `L = 0.5 |y - t|^2`; returns the max
/// relative error of the analytic gradient. The loss is quadratic so
/// central differences are exact up to rounding.
pub fn linear_layer_check(seed: u64, eps: f64) -> f64 {
    let (n_in, n_out) = (5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let params: Vec<f64> = (0..n_out * (n_in + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = |p: &[f64]| -> Vec<f64> {
        (0..n_out)
            .map(|o| p[n_out * n_in + o] + (0..n_in).map(|i| p[o * n_in + i] * x[i]).sum::<f64>())
            .collect()
    };
    let loss = |p: &[f64]| out(p).iter().zip(&t).map(|(y, t)| 0.5 * (y - t).powi(2)).sum::<f64>();
    let r: Vec<f64> = out(&params).iter().zip(&t).map(|(y, t)| y - t).collect();
    let mut analytic = vec![0.0; params.len()];
    for o in 0..n_out {
        for i in 0..n_in {
            analytic[o * n_in + i] = r[o] * x[i];
        }
        analytic[n_out * n_in + o] = r[o];
    }
    let numeric = numeric_gradient(loss, &params, eps);
    max_relative_error(&analytic, &numeric).0
}
