//! Loss functions and their analytic gradients.

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default per-class weights of the gesture network's softmax loss.
pub const HAND_WEIGHT: f64 = 5.0;
pub const BACKGROUND_WEIGHT: f64 = 0.6;

/// Two-class softmax cross-entropy, each pixel weighted by its class
/// (`w_hand` for target 1, `w_bg` for target 0), averaged over pixels.
///
/// Channel 0 holds the background logit, channel 1 the hand logit.
pub fn weighted_softmax_loss<T: Real>(
    logits: &Tensor<T>,
    target: &[f32],
    w_hand: f64,
    w_bg: f64,
) -> Result<(T, Tensor<T>)> {
    if logits.channels != 2 {
        return Err(Error::invalid(format!(
            "softmax loss needs 2 logit channels, got {}",
            logits.channels
        )));
    }
    let n = logits.plane_len();
    if target.len() != n {
        return Err(Error::invalid(format!("target has {} pixels, logits {n}", target.len())));
    }
    if let Some(bad) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::invalid(format!("target must be binary, found {bad}")));
    }
    let (bg, hand) = logits.data.split_at(n);
    let mut grad = Tensor::zeros(2, logits.height, logits.width);
    let (gbg, ghand) = grad.data.split_at_mut(n);
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0f64;
    for i in 0..n {
        let (l0, l1) = (bg[i].to_f64(), hand[i].to_f64());
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        let lse = m + (e0 + e1).ln();
        let (p0, p1) = (e0 / (e0 + e1), e1 / (e0 + e1));
        let is_hand = target[i] == 1.0;
        let w = if is_hand { w_hand } else { w_bg };
        total += w * (lse - if is_hand { l1 } else { l0 });
        let (y0, y1) = if is_hand { (0.0, 1.0) } else { (1.0, 0.0) };
        gbg[i] = T::from_f64(w * (p0 - y0) * inv_n);
        ghand[i] = T::from_f64(w * (p1 - y1) * inv_n);
    }
    Ok((T::from_f64(total * inv_n), grad))
}

/// Hand probability (softmax of channel 1) for a two-logit map.
pub fn softmax_hand_prob<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    let n = logits.plane_len();
    let (bg, hand) = logits.data.split_at(n);
    bg.iter()
        .zip(hand)
        .map(|(&a, &b)| {
            let d = a.to_f64() - b.to_f64();
            1.0 / (1.0 + d.exp())
        })
        .collect()
}

/// `1 / (1 + exp(-alpha * x))`, evaluated without overflow.
#[inline]
pub fn soft_sigmoid_scalar(x: f64, alpha: f64) -> f64 {
    let z = alpha * x;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn soft_sigmoid<T: Real>(x: &[T], alpha: f64) -> Vec<T> {
    x.iter()
        .map(|v| T::from_f64(soft_sigmoid_scalar(v.to_f64(), alpha)))
        .collect()
}

/// Precision-weighted squared error on soft-sigmoid outputs:
/// `L = sum_i p_i (s(x_i) - t_i)^2` with `s` the soft sigmoid.
///
/// Gradient: `dL/dx_i = 2 alpha s_i (1 - s_i) p_i (s_i - t_i)`.
pub fn precision_weighted_loss<T: Real>(
    x: &[T],
    t: &[T],
    precision: &[T],
    alpha: f64,
) -> Result<(T, Vec<T>)> {
    if x.len() != t.len() || x.len() != precision.len() {
        return Err(Error::invalid(format!(
            "length mismatch: x {}, t {}, precision {}",
            x.len(),
            t.len(),
            precision.len()
        )));
    }
    if let Some(p) = precision.iter().find(|p| !(p.to_f64() >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid(format!("precision must be finite and >= 0, found {p:?}")));
    }
    if let Some(v) = t.iter().find(|v| !(0.0..=1.0).contains(&v.to_f64())) {
        return Err(Error::invalid(format!("target must lie in [0, 1], found {v:?}")));
    }
    let mut total = 0.0f64;
    let grad = x
        .iter()
        .zip(t)
        .zip(precision)
        .map(|((&xi, &ti), &pi)| {
            let s = soft_sigmoid_scalar(xi.to_f64(), alpha);
            let r = s - ti.to_f64();
            let p = pi.to_f64();
            total += p * r * r;
            T::from_f64(2.0 * alpha * s * (1.0 - s) * p * r)
        })
        .collect();
    Ok((T::from_f64(total), grad))
}

/// `0.5 * sum (x - t)^2`.
pub fn squared_loss<T: Real>(x: &[T], t: &[T]) -> Result<(T, Vec<T>)> {
    if x.len() != t.len() {
        return Err(Error::invalid("length mismatch in squared loss"));
    }
    let mut total = T::ZERO;
    let grad = x
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let r = a - b;
            total += T::from_f64(0.5) * r * r;
            r
        })
        .collect();
    Ok((total, grad))
}
