//! Per-sample loss terms over one row of logits. Each returns the loss value
//! and its gradient with respect to the logits (or the value output).

use crate::error::{Error, Result};

use super::tensor::Scalar;

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let lse = logits
        .iter()
        .fold(T::zero(), |a, &x| a + (x - max).exp())
        .ln()
        + max;
    logits.iter().map(|&x| x - lse).collect()
}

pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

fn check_label(label: usize, k: usize) -> Result<()> {
    if label >= k {
        return Err(Error::input(format!("label {label} out of range for {k} actions")));
    }
    Ok(())
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<LossTerm<T>> {
    check_label(label, logits.len())?;
    let logp = log_softmax(logits);
    let mut grad: Vec<T> = logp.iter().map(|&l| l.exp()).collect();
    grad[label] = grad[label] - T::one();
    Ok(LossTerm {
        loss: -logp[label],
        grad,
    })
}

/// Policy entropy `H = -sum p log p` and `dH/dlogits`.
pub fn entropy<T: Scalar>(logits: &[T]) -> LossTerm<T> {
    let logp = log_softmax(logits);
    let h = logp
        .iter()
        .fold(T::zero(), |acc, &l| acc - l.exp() * l);
    let grad = logp.iter().map(|&l| -(l.exp()) * (l + h)).collect();
    LossTerm { loss: h, grad }
}

/// `-log pi(action) * advantage`, with the advantage held constant.
pub fn policy_gradient<T: Scalar>(logits: &[T], action: usize, advantage: T) -> Result<LossTerm<T>> {
    let ce = cross_entropy(logits, action)?;
    Ok(LossTerm {
        loss: ce.loss * advantage,
        grad: ce.grad.into_iter().map(|g| g * advantage).collect(),
    })
}

/// `(target - value)^2` and its derivative with respect to `value`.
pub fn value_mse<T: Scalar>(value: T, target: T) -> LossTerm<T> {
    let diff = value - target;
    LossTerm {
        loss: diff * diff,
        grad: vec![diff + diff],
    }
}
