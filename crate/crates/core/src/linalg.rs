//! Dense complex matrices in feature-major layout.
//!
//! A `[features × batch]` activation is stored row-major, so each feature row
//! is a contiguous run over the batch.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Column vector from a slice.
    pub fn column(values: &[Complex64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: Complex64) {
        self.data.fill(value);
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `‖M†M − I‖_F`.
    pub fn unitarity_residual(&self) -> f64 {
        let gram = self.adjoint().matmul(self).expect("square by construction");
        gram.distance(&ComplexMatrix::identity(self.cols))
    }

    pub fn column_norm(&self, c: usize) -> f64 {
        (0..self.rows)
            .map(|r| self[(r, c)].norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: Complex64) {
        for z in &mut self.data {
            *z *= factor;
        }
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Real `rows × cols` matrix, row-major. Holds pixel sequences
/// (`steps × batch`) and logits (`classes × batch`).
#[derive(Clone, Debug, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of columns `cols` (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> RealMatrix {
        let mut out = RealMatrix::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            let src = self.row(r);
            for (o, &c) in out.row_mut(r).iter_mut().zip(cols) {
                *o = src[c];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Haar-random unitary: QR of a complex Gaussian matrix with the phases of
/// R's diagonal folded back into Q.
pub fn random_unitary<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut a = ComplexMatrix::from_fn(n, n, |_, _| {
        Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    // Modified Gram-Schmidt over columns. The diagonal of R is real positive
    // here, which is exactly the unit-modulus correction.
    for j in 0..n {
        for k in 0..j {
            let mut dot = ZERO;
            for r in 0..n {
                dot += a[(r, k)].conj() * a[(r, j)];
            }
            for r in 0..n {
                let v = a[(r, k)];
                a[(r, j)] -= dot * v;
            }
        }
        let norm = a.column_norm(j);
        for r in 0..n {
            a[(r, j)] /= norm;
        }
    }
    a
}
