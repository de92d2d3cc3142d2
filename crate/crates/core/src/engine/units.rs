//! Closed-form forward and backward rules for a single basic unit.
//!
//! Cotangents are `∂L/∂z*`. Phase derivatives are the real `dL/dφ`.
//! The `*_apply` / `*_adjoint` kernels take a precomputed phasor `e^{iφ}`
//! so sweeps evaluate `cis` once per phase, not once per column.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use crate::linalg::I;
use crate::unitary::Phase;

/// `i·z` without a full complex multiply.
#[inline(always)]
fn times_i(z: Complex64) -> Complex64 {
    Complex64::new(-z.im, z.re)
}

/// `-i·z`.
#[inline(always)]
fn times_neg_i(z: Complex64) -> Complex64 {
    Complex64::new(z.im, -z.re)
}

/// `2·Im(a*·b)`.
#[inline(always)]
pub(crate) fn phase_derivative(a: Complex64, b: Complex64) -> f64 {
    2.0 * (a.re * b.im - a.im * b.re)
}

/// `y = (1/√2)[[e, i], [ie, 1]]·x`.
#[inline(always)]
pub(crate) fn psdc_apply(e: Complex64, x1: Complex64, x2: Complex64) -> (Complex64, Complex64) {
    let a = e * x1;
    (
        (a + times_i(x2)) * FRAC_1_SQRT_2,
        (times_i(a) + x2) * FRAC_1_SQRT_2,
    )
}

/// `gx = (1/√2)[[e*, −ie*], [−i, 1]]·gy`.
#[inline(always)]
pub(crate) fn psdc_adjoint(e: Complex64, gy1: Complex64, gy2: Complex64) -> (Complex64, Complex64) {
    (
        e.conj() * (gy1 + times_neg_i(gy2)) * FRAC_1_SQRT_2,
        (times_neg_i(gy1) + gy2) * FRAC_1_SQRT_2,
    )
}

/// `y = (1/√2)[[e, ie], [i, 1]]·x`.
#[inline(always)]
pub(crate) fn dcps_apply(e: Complex64, x1: Complex64, x2: Complex64) -> (Complex64, Complex64) {
    (
        e * (x1 + times_i(x2)) * FRAC_1_SQRT_2,
        (times_i(x1) + x2) * FRAC_1_SQRT_2,
    )
}

/// `gx = (1/√2)[[e*, −i], [−ie*, 1]]·gy`.
#[inline(always)]
pub(crate) fn dcps_adjoint(e: Complex64, gy1: Complex64, gy2: Complex64) -> (Complex64, Complex64) {
    let a = e.conj() * gy1;
    (
        (a + times_neg_i(gy2)) * FRAC_1_SQRT_2,
        (times_neg_i(a) + gy2) * FRAC_1_SQRT_2,
    )
}

pub fn psdc_forward(phi: Phase, x1: Complex64, x2: Complex64) -> (Complex64, Complex64) {
    psdc_apply(phi.phasor(), x1, x2)
}

/// Returns `(∂L/∂x1*, ∂L/∂x2*, dL/dφ)`. `x1` is the unit's forward input on
/// the shifted arm; the phase derivative is read from the input-side
/// cotangent after it has been formed.
pub fn psdc_backward(
    phi: Phase,
    x1: Complex64,
    gy1: Complex64,
    gy2: Complex64,
) -> (Complex64, Complex64, f64) {
    let (gx1, gx2) = psdc_adjoint(phi.phasor(), gy1, gy2);
    (gx1, gx2, phase_derivative(x1, gx1))
}

pub fn dcps_forward(phi: Phase, x1: Complex64, x2: Complex64) -> (Complex64, Complex64) {
    dcps_apply(phi.phasor(), x1, x2)
}

/// Returns `(∂L/∂x1*, ∂L/∂x2*, dL/dφ)`. `y1` is the unit's forward output on
/// the shifted arm; the phase derivative is read from the incoming
/// cotangent before the matrix is applied.
pub fn dcps_backward(
    phi: Phase,
    y1: Complex64,
    gy1: Complex64,
    gy2: Complex64,
) -> (Complex64, Complex64, f64) {
    let dphi = phase_derivative(y1, gy1);
    let (gx1, gx2) = dcps_adjoint(phi.phasor(), gy1, gy2);
    (gx1, gx2, dphi)
}

/// Backward of `y_k = e^{iδ}·x_k`: returns `(∂L/∂x_k*, dL/dδ)`.
pub fn diag_backward(delta: Phase, yk: Complex64, gyk: Complex64) -> (Complex64, f64) {
    (delta.phasor().conj() * gyk, phase_derivative(yk, gyk))
}

/// Forward matrix of a PSDC unit, used by tests and the dense path.
pub fn psdc_matrix(phi: Phase) -> [[Complex64; 2]; 2] {
    let e = phi.phasor() * FRAC_1_SQRT_2;
    let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
    [[e, I * s], [I * e, s]]
}

pub fn dcps_matrix(phi: Phase) -> [[Complex64; 2]; 2] {
    let e = phi.phasor() * FRAC_1_SQRT_2;
    let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
    [[e, I * e], [I * s, s]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ONE, ZERO};
    use crate::mesh::BasicUnit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rc(rng: &mut ChaCha8Rng) -> Complex64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    /// Real loss `Re(w1*·y1 + w2*·y2) + |y1|²` on a unit's outputs; its
    /// cotangents are `(w1/2 + y1, w2/2)`.
    fn probe_loss(y: (Complex64, Complex64), w: (Complex64, Complex64)) -> f64 {
        (w.0.conj() * y.0 + w.1.conj() * y.1).re + y.0.norm_sqr()
    }

    fn probe_cotangent(
        y: (Complex64, Complex64),
        w: (Complex64, Complex64),
    ) -> (Complex64, Complex64) {
        (w.0 * 0.5 + y.0, w.1 * 0.5)
    }

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        if b.abs() > 1e-8 {
            (a - b).abs() / b.abs()
        } else {
            (a - b).abs()
        }
    }

    #[test]
    fn psdc_forward_examples() {
        let s = FRAC_1_SQRT_2;
        let (y1, y2) = psdc_forward(Phase::ZERO, ONE, ZERO);
        assert!(close(y1, c(s, 0.0), 1e-16) && close(y2, c(0.0, s), 1e-16));
        let (y1, y2) = psdc_forward(Phase::new(FRAC_PI_2).unwrap(), ONE, ZERO);
        assert!(close(y1, c(0.0, s), 1e-16) && close(y2, c(-s, 0.0), 1e-16));
    }

    #[test]
    fn dcps_forward_examples() {
        let s = FRAC_1_SQRT_2;
        let (y1, y2) = dcps_forward(Phase::ZERO, ONE, ZERO);
        assert!(close(y1, c(s, 0.0), 1e-16) && close(y2, c(0.0, s), 1e-16));
    }

    #[test]
    fn dcps_matrix_is_psdc_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let phi = Phase::new(rng.random_range(-3.2..3.2)).unwrap();
            let a = psdc_matrix(phi);
            let b = dcps_matrix(phi);
            for r in 0..2 {
                for k in 0..2 {
                    assert_eq!(a[r][k], b[k][r]);
                }
            }
        }
    }

    #[test]
    fn kernels_match_factor_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let phi = Phase::new(rng.random_range(-3.2..3.2)).unwrap();
            let (x1, x2) = (rc(&mut rng), rc(&mut rng));
            for (unit, fwd) in [
                (BasicUnit::Psdc, psdc_forward as fn(_, _, _) -> _),
                (BasicUnit::Dcps, dcps_forward),
            ] {
                let (a1, a2) = unit.block(phi).apply(x1, x2);
                let (b1, b2) = fwd(phi, x1, x2);
                assert!(close(a1, b1, 1e-15) && close(a2, b2, 1e-15));
            }
        }
    }

    #[test]
    fn norm_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let phi = Phase::new(rng.random_range(-3.2..3.2)).unwrap();
            let (x1, x2) = (rc(&mut rng), rc(&mut rng));
            let before = x1.norm_sqr() + x2.norm_sqr();
            let (y1, y2) = psdc_forward(phi, x1, x2);
            assert!((y1.norm_sqr() + y2.norm_sqr() - before).abs() < 1e-14);
            let (y1, y2) = dcps_forward(phi, x1, x2);
            assert!((y1.norm_sqr() + y2.norm_sqr() - before).abs() < 1e-14);
            let (g1, g2) = psdc_adjoint(phi.phasor(), x1, x2);
            assert!((g1.norm_sqr() + g2.norm_sqr() - before).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero() {
        let phi = Phase::new(0.7).unwrap();
        assert_eq!(
            psdc_backward(phi, c(0.3, 0.1), ZERO, ZERO),
            (ZERO, ZERO, 0.0)
        );
        assert_eq!(
            dcps_backward(phi, c(0.3, 0.1), ZERO, ZERO),
            (ZERO, ZERO, 0.0)
        );
    }

    #[test]
    fn phase_derivative_substitution() {
        // x1 = 1 with input-side cotangent i gives 2·Im(i) = 2
        assert_eq!(phase_derivative(ONE, I), 2.0);
        // choose gy so that the PSDC adjoint yields gx1 = i at φ = 0
        let phi = Phase::ZERO;
        let (gy1, gy2) = {
            let m = psdc_matrix(phi);
            // gy = M·gx because M is unitary
            (m[0][0] * I, m[1][0] * I)
        };
        let (gx1, _, dphi) = psdc_backward(phi, ONE, gy1, gy2);
        assert!(close(gx1, I, 1e-15));
        assert!((dphi - 2.0).abs() < 1e-15);

        let (_, _, dphi) = dcps_backward(phi, ONE, I, ZERO);
        assert_eq!(dphi, 2.0);
        assert_eq!(diag_backward(Phase::ZERO, ONE, I).1, 2.0);
        assert_eq!(
            diag_backward(Phase::ZERO, ONE, c(0.2, -0.4)).0,
            c(0.2, -0.4)
        );
    }

    #[test]
    fn unit_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..100 {
            let phi0 = rng.random_range(-3.0..3.0);
            let (x1, x2) = (rc(&mut rng), rc(&mut rng));
            let w = (rc(&mut rng), rc(&mut rng));

            // PSDC
            let loss = |p: f64| probe_loss(psdc_forward(Phase::new(p).unwrap(), x1, x2), w);
            let y = psdc_forward(Phase::new(phi0).unwrap(), x1, x2);
            let (gy1, gy2) = probe_cotangent(y, w);
            let (_, _, dphi) = psdc_backward(Phase::new(phi0).unwrap(), x1, gy1, gy2);
            assert!(rel_err(dphi, central(loss, phi0, h)) <= 1e-5);

            // DCPS
            let loss = |p: f64| probe_loss(dcps_forward(Phase::new(p).unwrap(), x1, x2), w);
            let y = dcps_forward(Phase::new(phi0).unwrap(), x1, x2);
            let (gy1, gy2) = probe_cotangent(y, w);
            let (_, _, dphi) = dcps_backward(Phase::new(phi0).unwrap(), y.0, gy1, gy2);
            assert!(rel_err(dphi, central(loss, phi0, h)) <= 1e-5);

            // diagonal entry with loss Re(w*·y) + |y|²... phase-invariant
            // term dropped: use Re(w*·y) alone
            let loss = |p: f64| (w.0.conj() * Complex64::cis(p) * x1).re;
            let yk = Complex64::cis(phi0) * x1;
            let (_, dd) = diag_backward(Phase::new(phi0).unwrap(), yk, w.0 * 0.5);
            assert!(rel_err(dd, central(loss, phi0, h)) <= 1e-5);
        }
    }

    /// Input cotangents agree with Wirtinger derivatives measured on the
    /// real and imaginary parts of the input, and the conjugate pair
    /// `(∂L/∂x)* = ∂L/∂x*` holds.
    #[test]
    fn input_cotangents_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-6;
        for _ in 0..50 {
            let phi = Phase::new(rng.random_range(-3.0..3.0)).unwrap();
            let (x1, x2) = (rc(&mut rng), rc(&mut rng));
            let w = (rc(&mut rng), rc(&mut rng));
            let loss = |a: Complex64| probe_loss(psdc_forward(phi, a, x2), w);
            let d_re = (loss(x1 + h) - loss(x1 - h)) / (2.0 * h);
            let d_im = (loss(x1 + c(0.0, h)) - loss(x1 - c(0.0, h))) / (2.0 * h);
            let wirt_conj = c(d_re, d_im) * 0.5; // ∂L/∂x*
            let wirt = c(d_re, -d_im) * 0.5; // ∂L/∂x
            let y = psdc_forward(phi, x1, x2);
            let (gy1, gy2) = probe_cotangent(y, w);
            let (gx1, _, _) = psdc_backward(phi, x1, gy1, gy2);
            assert!((gx1 - wirt_conj).norm() <= 1e-5 * gx1.norm().max(1e-3));
            assert!((wirt.conj() - wirt_conj).norm() <= 1e-12);
        }
    }
}
