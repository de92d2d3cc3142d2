//! Rectangular fine-layered meshes.
//!
//! A mesh on `n` ports is a sequence of basic-unit layers following the
//! pattern `A_PHI, A_THETA, B_PHI, B_THETA, ...`, optionally closed by a
//! diagonal phase layer `D` on the output side. Two consecutive layers on the
//! same pairs form one column of MZIs.

mod checkpoint;
pub(crate) mod sweep;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::unitary::{dc_matrix, embed_single_mzi, ps_matrix, Complex2x2, Phase};

pub(crate) use checkpoint::read_mesh_lines;
pub use checkpoint::{read_mesh, write_mesh};
pub use sweep::{forward_sweep, forward_sweep_into, SweepTimings, SweepWorkspace, COLUMN_BLOCK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasicUnit {
    /// Phase shifter, then coupler.
    Psdc,
    /// Coupler, then phase shifter.
    Dcps,
}

impl BasicUnit {
    pub fn tag(self) -> &'static str {
        match self {
            BasicUnit::Psdc => "psdc",
            BasicUnit::Dcps => "dcps",
        }
    }

    /// 2×2 block one unit applies to its pair.
    pub fn block(self, phi: Phase) -> Complex2x2 {
        match self {
            BasicUnit::Psdc => dc_matrix() * ps_matrix(phi),
            BasicUnit::Dcps => ps_matrix(phi) * dc_matrix(),
        }
    }
}

impl fmt::Display for BasicUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BasicUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psdc" => Ok(BasicUnit::Psdc),
            "dcps" => Ok(BasicUnit::Dcps),
            other => Err(Error::InvalidParameter(format!(
                "unknown basic unit '{other}' (expected psdc or dcps)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    APhi,
    ATheta,
    BPhi,
    BTheta,
    Diag,
}

impl LayerKind {
    /// Kind of the `index`-th (0-based) basic-unit layer.
    pub fn at(index: usize) -> LayerKind {
        match index % 4 {
            0 => LayerKind::APhi,
            1 => LayerKind::ATheta,
            2 => LayerKind::BPhi,
            _ => LayerKind::BTheta,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            LayerKind::APhi => "A_PHI",
            LayerKind::ATheta => "A_THETA",
            LayerKind::BPhi => "B_PHI",
            LayerKind::BTheta => "B_THETA",
            LayerKind::Diag => "DIAG",
        }
    }

    pub fn from_tag(tag: &str) -> Option<LayerKind> {
        Some(match tag {
            "A_PHI" => LayerKind::APhi,
            "A_THETA" => LayerKind::ATheta,
            "B_PHI" => LayerKind::BPhi,
            "B_THETA" => LayerKind::BTheta,
            "DIAG" => LayerKind::Diag,
            _ => return None,
        })
    }

    /// Disjoint port pairs (0-based) this kind couples on `n` ports.
    /// A layers: (0,1),(2,3),...; B layers: (1,2),(3,4),...
    pub fn pairs(self, n: usize) -> Vec<(usize, usize)> {
        let start = match self {
            LayerKind::APhi | LayerKind::ATheta => 0,
            LayerKind::BPhi | LayerKind::BTheta => 1,
            LayerKind::Diag => return Vec::new(),
        };
        (start..n.saturating_sub(1))
            .step_by(2)
            .map(|p| (p, p + 1))
            .collect()
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One column of basic units (or the output diagonal).
#[derive(Clone, Debug, PartialEq)]
pub struct FineLayer {
    kind: LayerKind,
    basic_unit: BasicUnit,
    /// 0-based port pairs; empty for `Diag`.
    pairs: Vec<(usize, usize)>,
    /// One phase per pair, or one per port for `Diag`.
    phases: Vec<Phase>,
}

impl FineLayer {
    fn new(kind: LayerKind, basic_unit: BasicUnit, n: usize, phases: Vec<Phase>) -> Result<Self> {
        let pairs = kind.pairs(n);
        let expected = if kind == LayerKind::Diag {
            n
        } else {
            pairs.len()
        };
        if phases.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "{kind} layer on {n} ports needs {expected} phases, got {}",
                phases.len()
            )));
        }
        Ok(Self {
            kind,
            basic_unit,
            pairs,
            phases,
        })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn basic_unit(&self) -> BasicUnit {
        self.basic_unit
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn is_diag(&self) -> bool {
        self.kind == LayerKind::Diag
    }
}

/// How to seed a new mesh's phases.
#[derive(Clone, Debug, PartialEq)]
pub enum PhaseInit {
    /// Uniform in `[-π, π)` from a ChaCha8 stream with this seed.
    Uniform {
        seed: u64,
    },
    Zero,
    /// Raw radians, one vector per layer in sweep order (diag last).
    Explicit(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RectangularMesh {
    n: usize,
    basic_unit: BasicUnit,
    layers: Vec<FineLayer>,
    diag: Option<FineLayer>,
}

/// Build a mesh of `num_layers` basic-unit layers on `n` ports.
pub fn build_mesh(
    n: usize,
    num_layers: usize,
    basic_unit: BasicUnit,
    with_diag: bool,
    init: PhaseInit,
) -> Result<RectangularMesh> {
    RectangularMesh::new(n, num_layers, basic_unit, with_diag, init)
}

impl RectangularMesh {
    pub fn new(
        n: usize,
        num_layers: usize,
        basic_unit: BasicUnit,
        with_diag: bool,
        init: PhaseInit,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "mesh needs at least 2 ports, got {n}"
            )));
        }
        if num_layers < 1 {
            return Err(Error::InvalidParameter(
                "mesh needs at least one fine layer".into(),
            ));
        }
        let kinds: Vec<LayerKind> = (0..num_layers)
            .map(LayerKind::at)
            .chain(with_diag.then_some(LayerKind::Diag))
            .collect();
        let width = |k: LayerKind| {
            if k == LayerKind::Diag {
                n
            } else {
                k.pairs(n).len()
            }
        };

        let raw: Vec<Vec<f64>> = match init {
            PhaseInit::Zero => kinds.iter().map(|&k| vec![0.0; width(k)]).collect(),
            PhaseInit::Uniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                kinds
                    .iter()
                    .map(|&k| {
                        (0..width(k))
                            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                            .collect()
                    })
                    .collect()
            }
            PhaseInit::Explicit(values) => {
                if values.len() != kinds.len() {
                    return Err(Error::InvalidParameter(format!(
                        "explicit init has {} layers, mesh has {}",
                        values.len(),
                        kinds.len()
                    )));
                }
                values
            }
        };

        let mut layers = Vec::with_capacity(num_layers);
        let mut diag = None;
        for (kind, values) in kinds.into_iter().zip(raw) {
            let phases = values
                .into_iter()
                .map(Phase::new)
                .collect::<Result<Vec<_>>>()?;
            let layer = FineLayer::new(kind, basic_unit, n, phases)?;
            if kind == LayerKind::Diag {
                diag = Some(layer);
            } else {
                layers.push(layer);
            }
        }
        Ok(Self {
            n,
            basic_unit,
            layers,
            diag,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basic_unit(&self) -> BasicUnit {
        self.basic_unit
    }

    /// Number of basic-unit layers (excluding the diagonal).
    pub fn num_fine_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn has_diag(&self) -> bool {
        self.diag.is_some()
    }

    pub fn fine_layers(&self) -> &[FineLayer] {
        &self.layers
    }

    pub fn diag(&self) -> Option<&FineLayer> {
        self.diag.as_ref()
    }

    /// All layers in the order light traverses them, diagonal last.
    pub fn sweep_layers(&self) -> impl DoubleEndedIterator<Item = &FineLayer> + Clone {
        self.layers.iter().chain(self.diag.iter())
    }

    pub fn num_sweep_layers(&self) -> usize {
        self.layers.len() + usize::from(self.diag.is_some())
    }

    pub fn num_phases(&self) -> usize {
        self.sweep_layers().map(|l| l.phases.len()).sum()
    }

    /// Flat phase vector in sweep order.
    pub fn phases_flat(&self) -> Vec<f64> {
        self.sweep_layers()
            .flat_map(|l| l.phases.iter().map(|p| p.radians()))
            .collect()
    }

    /// Per-layer phase vectors in sweep order.
    pub fn phases_by_layer(&self) -> Vec<Vec<f64>> {
        self.sweep_layers()
            .map(|l| l.phases.iter().map(|p| p.radians()).collect())
            .collect()
    }

    /// Overwrite every phase from a flat vector in sweep order.
    pub fn set_phases_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_phases() {
            return Err(Error::Shape(format!(
                "mesh has {} phases, got {}",
                self.num_phases(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for layer in self.layers.iter_mut().chain(self.diag.iter_mut()) {
            for p in &mut layer.phases {
                *p = Phase::new(*it.next().expect("length checked"))?;
            }
        }
        Ok(())
    }

    /// Apply `update(index, old) -> new` to every phase in sweep order.
    pub fn update_phases(&mut self, mut update: impl FnMut(usize, f64) -> f64) -> Result<()> {
        let mut k = 0;
        for layer in self.layers.iter_mut().chain(self.diag.iter_mut()) {
            for p in &mut layer.phases {
                let next = update(k, p.radians());
                *p = Phase::new(next)
                    .map_err(|_| Error::Divergence(format!("phase {k} became non-finite")))?;
                k += 1;
            }
        }
        Ok(())
    }

    /// Hash of the structure and every phase bit pattern.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        self.n.hash(&mut h);
        self.basic_unit.hash(&mut h);
        for layer in self.sweep_layers() {
            layer.kind.hash(&mut h);
            for p in &layer.phases {
                p.radians().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Dense `n×n` matrix of a single layer.
pub fn layer_to_matrix(layer: &FineLayer, n: usize) -> Result<ComplexMatrix> {
    if layer.is_diag() {
        let mut m = ComplexMatrix::zeros(n, n);
        for (k, p) in layer.phases.iter().enumerate() {
            m[(k, k)] = p.phasor();
        }
        return Ok(m);
    }
    let mut m = ComplexMatrix::identity(n);
    for (&(p, q), &phi) in layer.pairs.iter().zip(&layer.phases) {
        // disjoint pairs: each embedding only touches its own 2×2 block
        let e = embed_single_mzi(n, p + 1, q + 1, &layer.basic_unit.block(phi))?;
        for &r in &[p, q] {
            for &c in &[p, q] {
                m[(r, c)] = e[(r, c)];
            }
        }
    }
    Ok(m)
}

/// Dense transfer matrix `D·S_L···S_1` by explicit matrix products.
pub fn mesh_to_matrix(mesh: &RectangularMesh) -> ComplexMatrix {
    let mut acc = ComplexMatrix::identity(mesh.n);
    for layer in mesh.sweep_layers() {
        let s = layer_to_matrix(layer, mesh.n).expect("layer matches mesh");
        acc = s.matmul(&acc).expect("square");
    }
    acc
}
