use super::{Real, Tensor5};
use crate::error::{shape_err, Result};

pub const DICE_EPS: f64 = 1e-6;

/// Soft Dice loss `1 - (2 Σpg + ε) / (Σp + Σg + ε)` and its gradient in `pred`.
///
/// The sums run over every element of the tensors, batch included, so a
/// background-only patch still receives gradient through the shared
/// denominator.
pub fn dice_loss<T: Real>(pred: &Tensor5<T>, target: &Tensor5<T>) -> Result<(T, Tensor5<T>)> {
    if pred.shape() != target.shape() {
        return shape_err(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        ));
    }
    let (mut inter, mut sp, mut sg) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &g) in pred.data().iter().zip(target.data()) {
        let (p, g) = (p.to_f64().unwrap(), g.to_f64().unwrap());
        inter += p * g;
        sp += p;
        sg += g;
    }
    let num = 2.0 * inter + DICE_EPS;
    let den = sp + sg + DICE_EPS;
    let loss = 1.0 - num / den;
    let mut grad = Tensor5::zeros(pred.shape());
    for (d, &g) in grad.data_mut().iter_mut().zip(target.data()) {
        let g = g.to_f64().unwrap();
        *d = T::of(-(2.0 * g * den - num) / (den * den));
    }
    Ok((T::of(loss), grad))
}
