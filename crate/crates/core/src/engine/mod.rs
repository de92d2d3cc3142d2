//! Reverse-mode differentiation for meshes and dense complex layers.
//!
//! Two independent routes produce the same gradients:
//!
//! * the fused route ([`fused_backward_sweep`]) applies closed-form
//!   per-unit backward rules while walking the saved activations of a
//!   [`forward_sweep`](crate::mesh::forward_sweep) in reverse;
//! * the tape route ([`tape_forward_backward`]) records every scalar
//!   complex operation on an [`ElementaryTape`] and replays it.
//!
//! [`finite_difference_gradient`] is the numerical oracle for both.

mod dense;
mod fd;
mod fused;
mod mesh_tape;
pub mod tape;
pub mod units;

pub use dense::{dense_complex_backward, dense_forward};
pub use fd::finite_difference_gradient;
pub use fused::{fused_backward_into, fused_backward_sweep};
pub use mesh_tape::{record_mesh, record_phases, tape_forward_backward, TapeRun};
pub use tape::{ElementaryTape, Var};
pub use units::{dcps_backward, dcps_forward, diag_backward, psdc_backward, psdc_forward};

use crate::error::{Error, Result};
use crate::mesh::RectangularMesh;

/// Real `dL/dφ` for every phase of a mesh, grouped per layer in sweep order
/// (diagonal last).
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseGradients {
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl PhaseGradients {
    pub fn zeros(mesh: &RectangularMesh) -> Self {
        let mut offsets = Vec::with_capacity(mesh.num_sweep_layers() + 1);
        let mut acc = 0;
        offsets.push(0);
        for layer in mesh.sweep_layers() {
            acc += layer.phases().len();
            offsets.push(acc);
        }
        Self {
            offsets,
            values: vec![0.0; acc],
        }
    }

    pub fn from_flat(mesh: &RectangularMesh, values: Vec<f64>) -> Result<Self> {
        let mut g = Self::zeros(mesh);
        if values.len() != g.values.len() {
            return Err(Error::Shape(format!(
                "mesh has {} phases, got {} gradients",
                g.values.len(),
                values.len()
            )));
        }
        g.values = values;
        Ok(g)
    }

    pub fn num_layers(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn layer(&self, j: usize) -> &[f64] {
        &self.values[self.offsets[j]..self.offsets[j + 1]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn fill_zero(&mut self) {
        self.values.fill(0.0);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `‖a − b‖_∞ / ‖b‖_∞`, or the absolute difference when `b` is all zero.
pub fn normwise_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Elementwise check against an oracle: relative error where
/// `|oracle| > floor`, absolute error otherwise. Returns the worst ratio of
/// observed error to its tolerance (≤ 1 passes) and the worst relative
/// error seen.
pub fn oracle_agreement(value: &[f64], oracle: &[f64], rel_tol: f64, floor: f64) -> OracleReport {
    assert_eq!(value.len(), oracle.len());
    let mut report = OracleReport::default();
    for (&v, &o) in value.iter().zip(oracle) {
        let diff = (v - o).abs();
        if o.abs() > floor {
            let rel = diff / o.abs();
            report.max_rel = report.max_rel.max(rel);
            report.worst = report.worst.max(rel / rel_tol);
        } else {
            report.max_abs_small = report.max_abs_small.max(diff);
            report.worst = report.worst.max(diff / floor);
        }
    }
    report
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleReport {
    /// Largest relative error among entries above the floor.
    pub max_rel: f64,
    /// Largest absolute error among entries at or below the floor.
    pub max_abs_small: f64,
    /// Worst error as a fraction of its tolerance.
    pub worst: f64,
}

impl OracleReport {
    pub fn passes(&self) -> bool {
        self.worst <= 1.0
    }

    pub fn merge(self, other: OracleReport) -> OracleReport {
        OracleReport {
            max_rel: self.max_rel.max(other.max_rel),
            max_abs_small: self.max_abs_small.max(other.max_abs_small),
            worst: self.worst.max(other.worst),
        }
    }
}
