//! Whole-model backpropagation on the elementary tape.
//!
//! Every scalar operation of the recurrence, readout and loss is recorded,
//! including each basic unit of every mesh application. Columns are split
//! into the same blocks as the sweep, one tape per block, and block results
//! are combined in block order.

use num_complex::Complex64;
use rayon::prelude::*;

use super::model::{RnnGradients, RnnModel, StepStats};
use super::ops::argmax;
use crate::engine::{record_mesh, record_phases, ElementaryTape, Var};
use crate::error::{Error, Result};
use crate::linalg::{RealMatrix, ZERO};
use crate::mesh::COLUMN_BLOCK;

struct Leaves {
    w_in: Vec<Var>,
    b_in: Vec<Var>,
    phases: Vec<Var>,
    phasors: Vec<Var>,
    w_out: Vec<Var>,
    b_out: Vec<Var>,
    b_act: Vec<Var>,
}

fn record_leaves(tape: &mut ElementaryTape, model: &RnnModel) -> Leaves {
    let w_in = model.w_in().iter().map(|&v| tape.leaf(v)).collect();
    let b_in = model.b_in().iter().map(|&v| tape.leaf(v)).collect();
    let (phases, phasors) = record_phases(tape, model.mesh());
    let w_out = model
        .w_out()
        .as_slice()
        .iter()
        .map(|&v| tape.leaf(v))
        .collect();
    let b_out = model.b_out().iter().map(|&v| tape.leaf(v)).collect();
    let b_act = model.b_act().iter().map(|&v| tape.real_leaf(v)).collect();
    Leaves {
        w_in,
        b_in,
        phases,
        phasors,
        w_out,
        b_out,
        b_act,
    }
}

pub(crate) fn record_modrelu(tape: &mut ElementaryTape, y: Var, b: Var) -> Var {
    let r = tape.abs(y);
    let (rv, bv) = (tape.value(r).re, tape.value(b).re);
    if rv > 0.0 && rv + bv > 0.0 {
        let inv = tape.recip(r);
        let s = tape.mul(b, inv);
        let t = tape.mul(y, s);
        tape.add(y, t)
    } else {
        tape.leaf(ZERO)
    }
}

/// Records one column; returns its logits `|z|²`.
fn record_column(
    tape: &mut ElementaryTape,
    model: &RnnModel,
    leaves: &Leaves,
    x: &RealMatrix,
    col: usize,
) -> Vec<Var> {
    let hid = model.hidden();
    let mut h: Option<Vec<Var>> = None;
    for t in 0..x.rows() {
        let xv = Complex64::new(x[(t, col)], 0.0);
        let mixed = h
            .as_ref()
            .map(|prev| record_mesh(tape, model.mesh(), &leaves.phasors, prev));
        let next = (0..hid)
            .map(|k| {
                let wx = tape.scale(leaves.w_in[k], xv);
                let mut y = tape.add(wx, leaves.b_in[k]);
                if let Some(m) = &mixed {
                    y = tape.add(y, m[k]);
                }
                record_modrelu(tape, y, leaves.b_act[k])
            })
            .collect();
        h = Some(next);
    }
    let h = h.expect("at least one step");
    (0..model.output())
        .map(|j| {
            let terms: Vec<Var> = (0..hid)
                .map(|k| tape.mul(leaves.w_out[j * hid + k], h[k]))
                .collect();
            let s = tape.sum(&terms);
            let z = tape.add(s, leaves.b_out[j]);
            let zc = tape.conj(z);
            tape.mul(z, zc)
        })
        .collect()
}

/// Softmax cross-entropy of one column, already divided by `batch`.
fn record_loss(tape: &mut ElementaryTape, logits: &[Var], label: usize, batch: usize) -> Var {
    let values: Vec<f64> = logits.iter().map(|&v| tape.value(v).re).collect();
    let (_, max) = argmax(&values);
    let m = tape.real_leaf(max);
    let exps: Vec<Var> = logits
        .iter()
        .map(|&p| {
            let d = tape.sub(p, m);
            tape.exp(d)
        })
        .collect();
    let s = tape.sum(&exps);
    let ls = tape.ln(s);
    let lse = tape.add(ls, m);
    let l = tape.sub(lse, logits[label]);
    tape.scale(l, Complex64::new(1.0 / batch as f64, 0.0))
}

/// Loss, correct count and every parameter gradient from the tape.
pub fn tape_gradients(
    model: &RnnModel,
    x: &RealMatrix,
    labels: &[u8],
) -> Result<(StepStats, RnnGradients)> {
    let (steps, batch) = x.shape();
    if steps == 0 || batch == 0 || labels.len() != batch {
        return Err(Error::Shape(format!(
            "input {:?} with {} labels",
            x.shape(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= model.output()) {
        return Err(Error::InvalidParameter(format!(
            "label {bad} out of range for {} classes",
            model.output()
        )));
    }
    let starts: Vec<usize> = (0..batch).step_by(COLUMN_BLOCK).collect();
    let blocks: Vec<(f64, usize, RnnGradients)> = starts
        .par_iter()
        .map(|&start| {
            let width = COLUMN_BLOCK.min(batch - start);
            let mut tape = ElementaryTape::new();
            let leaves = record_leaves(&mut tape, model);
            let mut losses = Vec::with_capacity(width);
            let mut correct = 0;
            for c in start..start + width {
                let logits = record_column(&mut tape, model, &leaves, x, c);
                let values: Vec<f64> = logits.iter().map(|&v| tape.value(v).re).collect();
                let label = labels[c] as usize;
                if argmax(&values).0 == label {
                    correct += 1;
                }
                losses.push(record_loss(&mut tape, &logits, label, batch));
            }
            let total = tape.sum(&losses);
            let loss = tape.value(total).re;
            tape.backward(&[(total, Complex64::new(0.5, 0.0))]);

            let mut g = RnnGradients::zeros(model);
            let adj = |vs: &[Var]| vs.iter().map(|&v| tape.adjoint(v)).collect::<Vec<_>>();
            g.w_in = adj(&leaves.w_in);
            g.b_in = adj(&leaves.b_in);
            g.b_out = adj(&leaves.b_out);
            for (o, v) in g.w_out.as_mut_slice().iter_mut().zip(adj(&leaves.w_out)) {
                *o = v;
            }
            for (o, &v) in g.phases.as_mut_slice().iter_mut().zip(&leaves.phases) {
                *o = tape.real_grad(v);
            }
            g.b_act = leaves.b_act.iter().map(|&v| tape.real_grad(v)).collect();
            (loss, correct, g)
        })
        .collect();

    let mut loss = 0.0;
    let mut correct = 0;
    let mut grads = RnnGradients::zeros(model);
    for (l, c, g) in blocks {
        loss += l;
        correct += c;
        add_into(&mut grads, &g);
    }
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss became {loss}")));
    }
    Ok((
        StepStats {
            loss,
            correct,
            batch,
        },
        grads,
    ))
}

fn add_into(acc: &mut RnnGradients, g: &RnnGradients) {
    let add_c =
        |a: &mut [Complex64], b: &[Complex64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    add_c(&mut acc.w_in, &g.w_in);
    add_c(&mut acc.b_in, &g.b_in);
    add_c(acc.w_out.as_mut_slice(), g.w_out.as_slice());
    add_c(&mut acc.b_out, &g.b_out);
    for (x, y) in acc
        .phases
        .as_mut_slice()
        .iter_mut()
        .zip(g.phases.as_slice())
    {
        *x += y;
    }
    for (x, y) in acc.b_act.iter_mut().zip(&g.b_act) {
        *x += y;
    }
}
