//! Fine-layered phase-shifter/coupler meshes and their gradients.
//!
//! * [`unitary`]: 2×2 primitives (phase shifter, coupler, MZI variants).
//! * [`mesh`]: rectangular meshes of basic units, forward sweeps, checkpoints.
//! * [`engine`]: fused backward sweep, elementary-tape reference, finite
//!   differences.
//! * [`rnn`]: complex recurrent classifier with a mesh as hidden matrix.
//! * [`harness`]: MNIST loading, training runs, benchmarks, unitary fitting.

pub mod engine;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod rnn;
pub mod textio;
pub mod unitary;

pub use error::{Error, LoadError, Result};
pub use linalg::ComplexMatrix;
pub use mesh::{build_mesh, BasicUnit, PhaseInit, RectangularMesh};
pub use unitary::Phase;
