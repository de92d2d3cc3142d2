//! Forward sweep through all layers of a mesh.
//!
//! The batch is cut into fixed-width column blocks. Each block owns one
//! contiguous buffer holding the input and every layer's output
//! (`slots × n × width`), so layer `j` writes straight into the slot that
//! layer `j + 1` reads. Blocks are independent and run in parallel on the
//! current rayon pool. Block boundaries depend only on the batch size, never
//! on the thread count, which keeps every reduction order fixed.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{FineLayer, RectangularMesh};
use crate::engine::units::{dcps_apply, psdc_apply};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ZERO};
use crate::mesh::BasicUnit;

/// Columns per block.
pub const COLUMN_BLOCK: usize = 4;

/// Wall-clock counters for the sweeps run on one workspace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepTimings {
    pub forward_ns: u64,
    pub forward_calls: u64,
    pub backward_ns: u64,
    pub backward_calls: u64,
}

#[derive(Debug)]
pub(crate) struct ColumnBlock {
    pub(crate) start: usize,
    pub(crate) width: usize,
    /// `slots × n × width`: slot 0 is the input, slot `j + 1` the output of
    /// layer `j`.
    pub(crate) acts: Vec<Complex64>,
    /// `n × width` cotangent, updated in place during backward.
    pub(crate) grad: Vec<Complex64>,
    /// Per-phase partial sums of this block.
    pub(crate) dphi: Vec<f64>,
}

/// Preallocated activation storage for one mesh and batch size.
#[derive(Debug)]
pub struct SweepWorkspace {
    pub(crate) n: usize,
    pub(crate) batch: usize,
    pub(crate) slots: usize,
    pub(crate) blocks: Vec<ColumnBlock>,
    /// `e^{iφ}` of every phase as of the last forward, sweep order.
    pub(crate) phasors: Vec<Complex64>,
    /// First phasor index of each layer.
    pub(crate) offsets: Vec<usize>,
    /// Mesh fingerprint at the last forward; `None` until then.
    pub(crate) stamp: Option<u64>,
    pub timings: SweepTimings,
}

impl SweepWorkspace {
    pub fn new(mesh: &RectangularMesh, batch: usize) -> Self {
        let n = mesh.n();
        let slots = mesh.num_sweep_layers() + 1;
        let num_phases = mesh.num_phases();
        let blocks = (0..batch)
            .step_by(COLUMN_BLOCK)
            .map(|start| {
                let width = COLUMN_BLOCK.min(batch - start);
                ColumnBlock {
                    start,
                    width,
                    acts: vec![ZERO; slots * n * width],
                    grad: vec![ZERO; n * width],
                    dphi: vec![0.0; num_phases],
                }
            })
            .collect();
        let mut offsets = Vec::with_capacity(slots - 1);
        let mut acc = 0;
        for layer in mesh.sweep_layers() {
            offsets.push(acc);
            acc += layer.phases().len();
        }
        Self {
            n,
            batch,
            slots,
            blocks,
            phasors: vec![ZERO; num_phases],
            offsets,
            stamp: None,
            timings: SweepTimings::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// True once a forward sweep has filled the activations.
    pub fn is_filled(&self) -> bool {
        self.stamp.is_some()
    }

    /// Drop the saved activations; a later backward will be rejected.
    pub fn invalidate(&mut self) {
        self.stamp = None;
    }

    pub(crate) fn check_mesh(&self, mesh: &RectangularMesh) -> Result<()> {
        if mesh.n() != self.n || mesh.num_sweep_layers() + 1 != self.slots {
            return Err(Error::Shape(format!(
                "workspace built for n={} with {} layers, mesh has n={} with {}",
                self.n,
                self.slots - 1,
                mesh.n(),
                mesh.num_sweep_layers()
            )));
        }
        Ok(())
    }

    /// Saved state `slot` (0 = input, `j + 1` = output of layer `j`) as an
    /// `n × batch` matrix.
    pub fn slot(&self, slot: usize) -> Result<ComplexMatrix> {
        if self.stamp.is_none() {
            return Err(Error::Contract("no forward sweep recorded".into()));
        }
        if slot >= self.slots {
            return Err(Error::Index(format!(
                "slot {slot} out of range 0..{}",
                self.slots
            )));
        }
        let mut out = ComplexMatrix::zeros(self.n, self.batch);
        for b in &self.blocks {
            let base = slot * self.n * b.width;
            for r in 0..self.n {
                let src = &b.acts[base + r * b.width..base + (r + 1) * b.width];
                out.row_mut(r)[b.start..b.start + b.width].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Output of every layer in sweep order.
    pub fn layer_outputs(&self) -> Result<Vec<ComplexMatrix>> {
        (1..self.slots).map(|s| self.slot(s)).collect()
    }
}

pub(crate) fn scatter(src: &ComplexMatrix, start: usize, width: usize, dst: &mut [Complex64]) {
    for r in 0..src.rows() {
        dst[r * width..(r + 1) * width].copy_from_slice(&src.row(r)[start..start + width]);
    }
}

pub(crate) fn gather(src: &[Complex64], start: usize, width: usize, dst: &mut ComplexMatrix) {
    for r in 0..dst.rows() {
        dst.row_mut(r)[start..start + width].copy_from_slice(&src[r * width..(r + 1) * width]);
    }
}

/// Apply one layer to a block: `input` and `output` are `n × width`.
fn layer_forward(
    layer: &FineLayer,
    phasors: &[Complex64],
    width: usize,
    input: &[Complex64],
    output: &mut [Complex64],
) {
    if layer.is_diag() {
        for (r, &e) in phasors.iter().enumerate() {
            let rows = r * width..(r + 1) * width;
            for (o, &x) in output[rows.clone()].iter_mut().zip(&input[rows]) {
                *o = e * x;
            }
        }
        return;
    }
    let n = input.len() / width;
    // ports outside every pair pass straight through
    let pairs = layer.pairs();
    let first = pairs.first().map_or(n, |p| p.0);
    let last = pairs.last().map_or(0, |p| p.1 + 1);
    for r in (0..first).chain(last..n) {
        output[r * width..(r + 1) * width].copy_from_slice(&input[r * width..(r + 1) * width]);
    }
    let apply = match layer.basic_unit() {
        BasicUnit::Psdc => psdc_apply,
        BasicUnit::Dcps => dcps_apply,
    };
    for (&(p, q), &e) in pairs.iter().zip(phasors) {
        debug_assert_eq!(q, p + 1);
        let (in_p, in_q) = input[p * width..(q + 1) * width].split_at(width);
        let (out_p, out_q) = output[p * width..(q + 1) * width].split_at_mut(width);
        for c in 0..width {
            let (y1, y2) = apply(e, in_p[c], in_q[c]);
            out_p[c] = y1;
            out_q[c] = y2;
        }
    }
}

/// Run `x` (`n × batch`) through every layer, saving all activations in
/// `ws`, and return the mesh output.
pub fn forward_sweep(
    mesh: &RectangularMesh,
    x: &ComplexMatrix,
    ws: &mut SweepWorkspace,
) -> Result<ComplexMatrix> {
    let mut out = ComplexMatrix::zeros(mesh.n(), x.cols());
    forward_sweep_into(mesh, x, ws, &mut out)?;
    Ok(out)
}

/// As [`forward_sweep`], writing the output into `out`.
pub fn forward_sweep_into(
    mesh: &RectangularMesh,
    x: &ComplexMatrix,
    ws: &mut SweepWorkspace,
    out: &mut ComplexMatrix,
) -> Result<()> {
    ws.check_mesh(mesh)?;
    if x.shape() != (ws.n, ws.batch) || out.shape() != (ws.n, ws.batch) {
        return Err(Error::Shape(format!(
            "sweep expects {}x{} input and output, got {:?} and {:?}",
            ws.n,
            ws.batch,
            x.shape(),
            out.shape()
        )));
    }
    let started = Instant::now();
    ws.stamp = None;
    for (k, phase) in mesh.sweep_layers().flat_map(|l| l.phases()).enumerate() {
        ws.phasors[k] = phase.phasor();
    }

    let n = ws.n;
    let slots = ws.slots;
    let phasors = &ws.phasors;
    let offsets = &ws.offsets;
    ws.blocks.par_iter_mut().for_each(|block| {
        let w = block.width;
        let stride = n * w;
        scatter(x, block.start, w, &mut block.acts[..stride]);
        for (j, layer) in mesh.sweep_layers().enumerate() {
            let (done, rest) = block.acts.split_at_mut((j + 1) * stride);
            let ph = &phasors[offsets[j]..offsets[j] + layer.phases().len()];
            layer_forward(layer, ph, w, &done[j * stride..], &mut rest[..stride]);
        }
        debug_assert_eq!(block.acts.len(), slots * stride);
    });
    for block in &ws.blocks {
        let stride = n * block.width;
        gather(
            &block.acts[(slots - 1) * stride..],
            block.start,
            block.width,
            out,
        );
    }

    ws.stamp = Some(mesh.fingerprint());
    ws.timings.forward_ns += started.elapsed().as_nanos() as u64;
    ws.timings.forward_calls += 1;
    Ok(())
}
