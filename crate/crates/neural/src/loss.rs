//! Training objectives. Each returns the scalar loss together with its
//! gradient(s) with respect to the inputs. Scalars are accumulated and
//! returned in f64; gradients are f32.

use crate::activation::{log_softmax, sigmoid};
use crate::error::{check_len, NeuralError, Result};
use crate::scalar::Scalar;

/// Predictions are clamped to `[BCE_FLOOR, 1 - BCE_FLOOR]` before the log.
pub const BCE_FLOOR: f32 = 1e-7;

fn log_softmax_f64<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let wide: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    log_softmax(&wide)
}

/// Mean binary cross-entropy over all cells.
pub fn bce<T: Scalar>(pred: &[T], target: &[T]) -> Result<(f64, Vec<T>)> {
    check_len("bce", pred.len(), target.len())?;
    if let Some(t) = target
        .iter()
        .find(|t| !(T::zero()..=T::one()).contains(*t))
    {
        return Err(NeuralError::Domain(format!(
            "bce target {t:?} outside [0, 1]"
        )));
    }
    let n = pred.len().max(1) as f64;
    let floor = T::lit(BCE_FLOOR as f64);
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let p = p.max(floor).min(T::one() - floor);
        let (p64, t64) = (p.as_f64(), t.as_f64());
        total -= t64 * p64.ln() + (1.0 - t64) * (1.0 - p64).ln();
        grad.push(T::lit((p64 - t64) / (p64 * (1.0 - p64)) / n));
    }
    Ok((total / n, grad))
}

/// Mean BCE on logits; gradient is `(sigmoid(x) - t) / n`.
pub fn bce_with_logits<T: Scalar>(logits: &[T], target: &[T]) -> Result<(f64, Vec<T>)> {
    check_len("bce_with_logits", logits.len(), target.len())?;
    let n = logits.len().max(1) as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &t) in logits.iter().zip(target) {
        // log(1 + e^{-|x|}) + max(x, 0) - x t
        let x64 = x.as_f64();
        total += x64.max(0.0) - x64 * t.as_f64() + (-x64.abs()).exp().ln_1p();
        grad.push(T::lit((sigmoid(x) - t).as_f64() / n));
    }
    Ok((total / n, grad))
}

/// KL(N(μ, σ²) ‖ N(0, I)) summed over dimensions, with `σ = exp(log_sigma)`.
///
/// Returns `(kl, d/dμ, d/dlog_sigma)`.
pub fn kl_gaussian<T: Scalar>(mu: &[T], log_sigma: &[T]) -> Result<(f64, Vec<T>, Vec<T>)> {
    check_len("kl", mu.len(), log_sigma.len())?;
    let mut total = 0.0f64;
    let mut d_mu = Vec::with_capacity(mu.len());
    let mut d_ls = Vec::with_capacity(mu.len());
    for (&m, &ls) in mu.iter().zip(log_sigma) {
        let ls64 = ls.as_f64();
        let var = (2.0 * ls64).exp();
        total += 0.5 * (m.as_f64().powi(2) + var - 1.0 - 2.0 * ls64);
        d_mu.push(m);
        d_ls.push(T::lit(var - 1.0));
    }
    Ok((total, d_mu, d_ls))
}

/// Negative log-likelihood of one token sequence, summed over steps.
/// Returns the loss and per-step gradients w.r.t. the logits.
pub fn nll_sequence<T: Scalar>(
    logits: &[Vec<T>],
    targets: &[usize],
) -> Result<(f64, Vec<Vec<T>>)> {
    check_len("nll steps", logits.len(), targets.len())?;
    let mut total = 0.0f64;
    let mut grads = Vec::with_capacity(logits.len());
    for (step, &t) in logits.iter().zip(targets) {
        if t >= step.len() {
            return Err(NeuralError::Domain(format!(
                "target token {t} outside vocabulary of {}",
                step.len()
            )));
        }
        total -= log_softmax_f64(step)[t];
        let lp = log_softmax(step);
        let mut g: Vec<T> = lp.iter().map(|v| v.exp()).collect();
        g[t] -= T::one();
        grads.push(g);
    }
    Ok((total, grads))
}

/// Batch mean of [`nll_sequence`]; gradients are scaled by `1 / batch`.
pub fn nll_batch<T: Scalar>(
    batch: &[(Vec<Vec<T>>, Vec<usize>)],
) -> Result<(f64, Vec<Vec<Vec<T>>>)> {
    let scale64 = 1.0 / batch.len().max(1) as f64;
    let scale = T::lit(scale64);
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (logits, targets) in batch {
        let (l, mut g) = nll_sequence(logits, targets)?;
        total += l;
        g.iter_mut().flatten().for_each(|v| *v *= scale);
        grads.push(g);
    }
    Ok((total * scale64, grads))
}

/// Mean squared error over elements.
pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<(f64, Vec<T>)> {
    check_len("mse", pred.len(), target.len())?;
    let n = pred.len().max(1) as f64;
    let scale = T::lit(2.0 / n);
    let mut total = 0.0f64;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            total += d.as_f64().powi(2);
            scale * d
        })
        .collect();
    Ok((total / n, grad))
}
