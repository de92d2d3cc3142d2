//! Two-port building blocks: phase shifter (PS), 50:50 directional coupler
//! (DC), and the three MZI arrangements built from them.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, I, ONE, ZERO};

/// A phase in radians. Always finite.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct Phase(f64);

impl Phase {
    pub fn new(radians: f64) -> Result<Self> {
        if radians.is_finite() {
            Ok(Self(radians))
        } else {
            Err(Error::InvalidParameter(format!(
                "phase must be finite, got {radians}"
            )))
        }
    }

    pub const ZERO: Phase = Phase(0.0);

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Representative in `[-π, π)`. Used for serialization only.
    pub fn canonical(self) -> f64 {
        if (-PI..PI).contains(&self.0) {
            return self.0;
        }
        let wrapped = (self.0 + PI).rem_euclid(TAU) - PI;
        // rem_euclid can land on exactly TAU after rounding
        if wrapped >= PI {
            wrapped - TAU
        } else {
            wrapped
        }
    }

    /// `e^{iφ}`.
    pub fn phasor(self) -> Complex64 {
        Complex64::cis(self.0)
    }
}

impl TryFrom<f64> for Phase {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Phase::new(value)
    }
}

/// Which PS/DC arrangement realizes an MZI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MziKind {
    /// (PSDC)(PSDC)
    Psdc2,
    /// (DCPS)(DCPS)
    Dcps2,
    /// (DCPS)(PSDC)
    Mixed,
}

/// 2×2 complex matrix `[[w11, w12], [w21, w22]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complex2x2 {
    pub w11: Complex64,
    pub w12: Complex64,
    pub w21: Complex64,
    pub w22: Complex64,
}

impl Complex2x2 {
    pub const IDENTITY: Complex2x2 = Complex2x2::new(ONE, ZERO, ZERO, ONE);

    pub const fn new(w11: Complex64, w12: Complex64, w21: Complex64, w22: Complex64) -> Self {
        Self { w11, w12, w21, w22 }
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.w11, self.w21, self.w12, self.w22)
    }

    pub fn adjoint(&self) -> Self {
        Self::new(
            self.w11.conj(),
            self.w21.conj(),
            self.w12.conj(),
            self.w22.conj(),
        )
    }

    pub fn det(&self) -> Complex64 {
        self.w11 * self.w22 - self.w12 * self.w21
    }

    pub fn apply(&self, x1: Complex64, x2: Complex64) -> (Complex64, Complex64) {
        (self.w11 * x1 + self.w12 * x2, self.w21 * x1 + self.w22 * x2)
    }

    /// `‖W†W − I‖_F`.
    pub fn unitarity_residual(&self) -> f64 {
        let g = self.adjoint() * *self;
        ((g.w11 - ONE).norm_sqr() + g.w12.norm_sqr() + g.w21.norm_sqr() + (g.w22 - ONE).norm_sqr())
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Complex2x2) -> f64 {
        [
            self.w11 - other.w11,
            self.w12 - other.w12,
            self.w21 - other.w21,
            self.w22 - other.w22,
        ]
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_vec(2, 2, vec![self.w11, self.w12, self.w21, self.w22]).expect("2x2")
    }
}

impl Mul for Complex2x2 {
    type Output = Complex2x2;

    fn mul(self, rhs: Complex2x2) -> Complex2x2 {
        Complex2x2::new(
            self.w11 * rhs.w11 + self.w12 * rhs.w21,
            self.w11 * rhs.w12 + self.w12 * rhs.w22,
            self.w21 * rhs.w11 + self.w22 * rhs.w21,
            self.w21 * rhs.w12 + self.w22 * rhs.w22,
        )
    }
}

impl fmt::Display for Complex2x2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            self.w11, self.w12, self.w21, self.w22
        )
    }
}

/// `diag(e^{iφ}, 1)`: phase shifter on the upper arm.
pub fn ps_matrix(phi: Phase) -> Complex2x2 {
    Complex2x2::new(phi.phasor(), ZERO, ZERO, ONE)
}

/// `diag(1, e^{iφ})`: phase shifter on the lower arm.
fn ps_lower_matrix(phi: Phase) -> Complex2x2 {
    Complex2x2::new(ONE, ZERO, ZERO, phi.phasor())
}

/// `(1/√2)·[[1, i], [i, 1]]`.
pub fn dc_matrix() -> Complex2x2 {
    let a = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let b = I * FRAC_1_SQRT_2;
    Complex2x2::new(a, b, b, a)
}

/// MZI transfer matrix, assembled by multiplying the PS and DC factors in
/// the order light meets them (rightmost factor acts first).
///
/// * `Psdc2`: `DC·PS(θ)·DC·PS(φ)`
/// * `Dcps2`: `PS(φ)·DC·PS(θ)·DC`, the transpose of `Psdc2`
/// * `Mixed`: `DC·PS'(θ)·PS(φ)·DC` where `PS'` sits on the lower arm, so the
///   two shifters set the arms' phase difference.
pub fn mzi_matrix(kind: MziKind, phi: Phase, theta: Phase) -> Complex2x2 {
    let dc = dc_matrix();
    match kind {
        MziKind::Psdc2 => dc * ps_matrix(theta) * dc * ps_matrix(phi),
        MziKind::Dcps2 => ps_matrix(phi) * dc * ps_matrix(theta) * dc,
        MziKind::Mixed => dc * ps_lower_matrix(theta) * ps_matrix(phi) * dc,
    }
}

/// Embed a 2×2 block into an `n×n` identity on rows/columns `{p, q}`.
/// Indices are 1-based with `1 ≤ p < q ≤ n`.
pub fn embed_single_mzi(n: usize, p: usize, q: usize, m: &Complex2x2) -> Result<ComplexMatrix> {
    if p == 0 || p >= q || q > n {
        return Err(Error::Index(format!(
            "need 1 <= p < q <= n, got p={p}, q={q}, n={n}"
        )));
    }
    let (p, q) = (p - 1, q - 1);
    let mut out = ComplexMatrix::identity(n);
    out[(p, p)] = m.w11;
    out[(p, q)] = m.w12;
    out[(q, p)] = m.w21;
    out[(q, q)] = m.w22;
    Ok(out)
}
