use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rayon::prelude::*;

use super::tape::{ElementaryTape, Var};
use super::PhaseGradients;
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, I};
use crate::mesh::{BasicUnit, RectangularMesh, COLUMN_BLOCK};

const INV_SQRT2: Complex64 = Complex64::new(FRAC_1_SQRT_2, 0.0);

/// Record one real leaf per mesh phase (sweep order) and its `e^{iφ}`.
pub fn record_phases(tape: &mut ElementaryTape, mesh: &RectangularMesh) -> (Vec<Var>, Vec<Var>) {
    let leaves: Vec<Var> = mesh
        .sweep_layers()
        .flat_map(|l| l.phases())
        .map(|p| tape.real_leaf(p.radians()))
        .collect();
    let phasors = leaves.iter().map(|&v| tape.exp_i(v)).collect();
    (leaves, phasors)
}

/// Record the mesh acting on one column `x` (length `n`), using phasor nodes
/// from [`record_phases`]. Returns the output column.
pub fn record_mesh(
    tape: &mut ElementaryTape,
    mesh: &RectangularMesh,
    phasors: &[Var],
    x: &[Var],
) -> Vec<Var> {
    debug_assert_eq!(x.len(), mesh.n());
    let mut state = x.to_vec();
    let mut k = 0;
    for layer in mesh.sweep_layers() {
        if layer.is_diag() {
            for s in state.iter_mut() {
                *s = tape.mul(phasors[k], *s);
                k += 1;
            }
            continue;
        }
        for &(p, q) in layer.pairs() {
            let e = phasors[k];
            k += 1;
            let (x1, x2) = (state[p], state[q]);
            let (y1, y2) = match layer.basic_unit() {
                BasicUnit::Psdc => {
                    let u = tape.mul(e, x1);
                    let ix2 = tape.scale(x2, I);
                    let iu = tape.scale(u, I);
                    let s1 = tape.add(u, ix2);
                    let s2 = tape.add(iu, x2);
                    (tape.scale(s1, INV_SQRT2), tape.scale(s2, INV_SQRT2))
                }
                BasicUnit::Dcps => {
                    let ix2 = tape.scale(x2, I);
                    let ix1 = tape.scale(x1, I);
                    let s1 = tape.add(x1, ix2);
                    let s2 = tape.add(ix1, x2);
                    let v1 = tape.scale(s1, INV_SQRT2);
                    (tape.mul(e, v1), tape.scale(s2, INV_SQRT2))
                }
            };
            state[p] = y1;
            state[q] = y2;
        }
    }
    state
}

/// Result of a forward and backward pass on the elementary tape.
#[derive(Clone, Debug)]
pub struct TapeRun {
    pub output: ComplexMatrix,
    /// `∂L/∂x*` for the mesh input.
    pub input_grad: ComplexMatrix,
    pub grads: PhaseGradients,
    /// Nodes recorded across all tapes.
    pub nodes: usize,
}

/// Reference path: record the whole mesh scalar by scalar, seed the outputs
/// with `g_out = ∂L/∂y*`, and replay the tape backwards. Columns are split
/// into the same blocks as the fused sweep, one tape per block, and phase
/// gradients are reduced in block order.
pub fn tape_forward_backward(
    mesh: &RectangularMesh,
    x: &ComplexMatrix,
    g_out: &ComplexMatrix,
) -> Result<TapeRun> {
    let n = mesh.n();
    if x.rows() != n || g_out.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "mesh has {n} ports; input {:?}, cotangent {:?}",
            x.shape(),
            g_out.shape()
        )));
    }
    let batch = x.cols();
    let starts: Vec<usize> = (0..batch).step_by(COLUMN_BLOCK).collect();
    let per_block: Vec<_> = starts
        .par_iter()
        .map(|&start| {
            let width = COLUMN_BLOCK.min(batch - start);
            let mut tape = ElementaryTape::new();
            let (leaves, phasors) = record_phases(&mut tape, mesh);
            let mut ins = Vec::with_capacity(width);
            let mut outs = Vec::with_capacity(width);
            for c in start..start + width {
                let col: Vec<Var> = (0..n).map(|r| tape.leaf(x[(r, c)])).collect();
                outs.push(record_mesh(&mut tape, mesh, &phasors, &col));
                ins.push(col);
            }
            let seeds: Vec<(Var, Complex64)> = outs
                .iter()
                .zip(start..)
                .flat_map(|(col, c)| {
                    col.iter()
                        .enumerate()
                        .map(move |(r, &v)| (v, g_out[(r, c)]))
                })
                .collect();
            tape.backward(&seeds);
            let y: Vec<Vec<Complex64>> = outs
                .iter()
                .map(|col| col.iter().map(|&v| tape.value(v)).collect())
                .collect();
            let gx: Vec<Vec<Complex64>> = ins
                .iter()
                .map(|col| col.iter().map(|&v| tape.adjoint(v)).collect())
                .collect();
            let dphi: Vec<f64> = leaves.iter().map(|&v| tape.real_grad(v)).collect();
            (start, y, gx, dphi, tape.len())
        })
        .collect();

    let mut output = ComplexMatrix::zeros(n, batch);
    let mut input_grad = ComplexMatrix::zeros(n, batch);
    let mut grads = PhaseGradients::zeros(mesh);
    let mut nodes = 0;
    for (start, y, gx, dphi, len) in per_block {
        for (j, (ycol, gcol)) in y.iter().zip(&gx).enumerate() {
            for r in 0..n {
                output[(r, start + j)] = ycol[r];
                input_grad[(r, start + j)] = gcol[r];
            }
        }
        for (acc, v) in grads.as_mut_slice().iter_mut().zip(&dphi) {
            *acc += v;
        }
        nodes += len;
    }
    Ok(TapeRun {
        output,
        input_grad,
        grads,
        nodes,
    })
}
