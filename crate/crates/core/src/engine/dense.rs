use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;

/// `W·x` for a complex weight matrix and a feature-major batch.
pub fn dense_forward(w: &ComplexMatrix, x: &ComplexMatrix) -> Result<ComplexMatrix> {
    if w.cols() != x.rows() {
        return Err(Error::Shape(format!(
            "weight is {:?}, input is {:?}",
            w.shape(),
            x.shape()
        )));
    }
    w.matmul(x)
}

/// Backward of `y = W·x` given `gy = ∂L/∂y*`.
///
/// Returns `(∂L/∂x*, ∂L/∂W*) = (W†·gy, gy·x†)`.
pub fn dense_complex_backward(
    w: &ComplexMatrix,
    x: &ComplexMatrix,
    gy: &ComplexMatrix,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if w.cols() != x.rows() || gy.shape() != (w.rows(), x.cols()) {
        return Err(Error::Shape(format!(
            "weight {:?}, input {:?}, cotangent {:?}",
            w.shape(),
            x.shape(),
            gy.shape()
        )));
    }
    let (out, inp, batch) = (w.rows(), w.cols(), x.cols());
    let mut gx = ComplexMatrix::zeros(inp, batch);
    for j in 0..out {
        let g_row = gy.row(j);
        let w_row = w.row(j);
        for (h, &wjh) in w_row.iter().enumerate() {
            let wc = wjh.conj();
            for (o, &g) in gx.row_mut(h).iter_mut().zip(g_row) {
                *o += wc * g;
            }
        }
    }
    let mut gw = ComplexMatrix::zeros(out, inp);
    for j in 0..out {
        let g_row = gy.row(j);
        for h in 0..inp {
            gw[(j, h)] = g_row
                .iter()
                .zip(x.row(h))
                .map(|(&g, &xv)| g * xv.conj())
                .sum();
        }
    }
    Ok((gx, gw))
}
