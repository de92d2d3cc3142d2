//! Pointwise pieces of the recurrent cell and the classification head.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, RealMatrix, ZERO};

/// `(y/|y|)(|y| + b)` when `|y| + b ≥ 0`, else 0. Also 0 at `y = 0`.
pub fn modrelu(y: Complex64, b: f64) -> Complex64 {
    let r = y.norm();
    if r > 0.0 && r + b >= 0.0 {
        y * ((r + b) / r)
    } else {
        ZERO
    }
}

/// Returns `(∂L/∂y*, dL/db)` given `g = ∂L/∂h*` for `h = modrelu(y, b)`.
///
/// With `r = |y|`, `h = y + b·y/r` has `∂h/∂y = 1 + b/(2r)` and
/// `∂h/∂y* = −b·y²/(2r³)`. On the boundary `r + b = 0` the clipped branch
/// is used.
pub fn modrelu_backward(y: Complex64, b: f64, g: Complex64) -> (Complex64, f64) {
    let r = y.norm();
    if !(r > 0.0 && r + b > 0.0) {
        return (ZERO, 0.0);
    }
    let u = y / r;
    let gy = g.conj() * (u * u * (-b / (2.0 * r))) + g * (1.0 + b / (2.0 * r));
    let gb = 2.0 * (g * u.conj()).re;
    (gy, gb)
}

/// `P(z) = z ⊙ z*`.
pub fn power(z: &ComplexMatrix) -> RealMatrix {
    let data = z.as_slice().iter().map(|v| v.norm_sqr()).collect();
    RealMatrix::from_vec(z.rows(), z.cols(), data).expect("same shape")
}

/// `∂L/∂z* = g_p ⊙ z` for real `g_p = dL/dP`.
pub fn power_backward(z: &ComplexMatrix, g_p: &RealMatrix) -> Result<ComplexMatrix> {
    if z.shape() != g_p.shape() {
        return Err(Error::Shape(format!(
            "readout {:?} vs gradient {:?}",
            z.shape(),
            g_p.shape()
        )));
    }
    let data = z
        .as_slice()
        .iter()
        .zip(g_p.as_slice())
        .map(|(&v, &g)| v * g)
        .collect();
    ComplexMatrix::from_vec(z.rows(), z.cols(), data)
}

/// Mean softmax cross-entropy over the batch columns of `logits`
/// (`classes × batch`). Returns `(loss, correct, dL/dlogits)`.
pub fn softmax_cross_entropy(
    logits: &RealMatrix,
    labels: &[u8],
) -> Result<(f64, usize, RealMatrix)> {
    let (classes, batch) = logits.shape();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut grad = RealMatrix::zeros(classes, batch);
    let mut loss = 0.0;
    let mut correct = 0;
    let inv_b = 1.0 / batch as f64;
    let mut col = vec![0.0; classes];
    for (b, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        for (k, v) in col.iter_mut().enumerate() {
            *v = logits[(k, b)];
        }
        let (arg, max) = argmax(&col);
        if arg == label {
            correct += 1;
        }
        let sum: f64 = col.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - col[label];
        for (k, &v) in col.iter().enumerate() {
            let p = (v - lse).exp();
            grad[(k, b)] = (p - if k == label { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((loss * inv_b, correct, grad))
}

/// Index and value of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
}
