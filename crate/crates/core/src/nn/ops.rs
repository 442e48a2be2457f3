use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Floor applied to probabilities inside the cross-entropy logarithm.
pub const CE_FLOOR: f64 = 1e-12;

/// `softmax(logits / temperature)` with max subtraction.
pub fn softmax<T: Scalar>(logits: &[T], temperature: T) -> Result<Vec<T>> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::Numeric(format!(
            "softmax temperature must be positive and finite, got {temperature}"
        )));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    Ok(softmax_unchecked(logits, temperature))
}

pub(crate) fn softmax_unchecked<T: Scalar>(logits: &[T], temperature: T) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits
        .iter()
        .map(|&v| ((v - max) / temperature).exp())
        .collect();
    let sum: T = out.iter().copied().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Gradient w.r.t. the logits given `probs = softmax(logits / temperature)`
/// and the gradient w.r.t. `probs`.
pub fn softmax_backward<T: Scalar>(probs: &[T], grad_probs: &[T], temperature: T) -> Vec<T> {
    let inner = dot(probs, grad_probs);
    probs
        .iter()
        .zip(grad_probs)
        .map(|(&p, &g)| p * (g - inner) / temperature)
        .collect()
}

/// `-ln(max(pred[target], 1e-12))`
pub fn cross_entropy<T: Scalar>(pred: &[T], target: u8) -> T {
    cross_entropy_floor(pred[target as usize])
}

#[inline]
pub fn cross_entropy_floor<T: Scalar>(p: T) -> T {
    -p.max(T::lit(CE_FLOOR)).ln()
}

/// Squared error of a single prediction.
#[inline]
pub fn mse<T: Scalar>(pred: T, target: T) -> T {
    let d = pred - target;
    d * d
}

/// Probability-weighted table rows, one block per byte position, concatenated.
/// With one-hot rows this is an exact table lookup.
pub fn soft_argmax_embed<T: Scalar>(byte_probs: &[&[T]], tables: &[&Matrix<T>]) -> Vec<T> {
    assert_eq!(byte_probs.len(), tables.len());
    let width: usize = tables.iter().map(|t| t.cols).sum();
    let mut out = Vec::with_capacity(width);
    for (probs, table) in byte_probs.iter().zip(tables) {
        assert_eq!(probs.len(), table.rows);
        let mut block = vec![T::zero(); table.cols];
        for (c, &p) in probs.iter().enumerate() {
            if p != T::zero() {
                axpy(p, table.row(c), &mut block);
            }
        }
        out.extend(block);
    }
    out
}

/// Reverse pass of [`soft_argmax_embed`]: returns the gradient w.r.t. each
/// probability vector and accumulates table gradients when `table_grads` is
/// given.
pub fn soft_argmax_embed_backward<T: Scalar>(
    byte_probs: &[&[T]],
    tables: &[&Matrix<T>],
    grad_out: &[T],
    mut table_grads: Option<&mut [&mut Matrix<T>]>,
) -> Vec<Vec<T>> {
    let mut offset = 0;
    let mut grads = Vec::with_capacity(tables.len());
    for (j, (probs, table)) in byte_probs.iter().zip(tables).enumerate() {
        let g = &grad_out[offset..offset + table.cols];
        offset += table.cols;
        grads.push((0..table.rows).map(|c| dot(table.row(c), g)).collect());
        if let Some(tg) = table_grads.as_deref_mut() {
            for (c, &p) in probs.iter().enumerate() {
                if p != T::zero() {
                    axpy(p, g, tg[j].row_mut(c));
                }
            }
        }
    }
    grads
}
