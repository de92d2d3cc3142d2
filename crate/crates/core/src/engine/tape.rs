//! Scalar reverse-mode tape over complex numbers.
//!
//! Every node stores its value and the operation that produced it. The
//! adjoint carried backwards is `∂L/∂z*` for a real loss `L`, so for a node
//! that only ever holds real values `dL/da = 2·Re(adjoint)`. Seeding a real
//! loss node with `½` yields exact gradients.

use num_complex::Complex64;

use crate::linalg::ZERO;

/// Handle to a node on an [`ElementaryTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Scale(u32, Complex64),
    Conj(u32),
    /// `e^{ia}` of a real-valued node.
    ExpI(u32),
    Abs(u32),
    Recip(u32),
    Exp(u32),
    Ln(u32),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    value: Complex64,
}

#[derive(Clone, Debug, Default)]
pub struct ElementaryTape {
    nodes: Vec<Node>,
    adjoints: Vec<Complex64>,
}

impl ElementaryTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            adjoints: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.adjoints.clear();
    }

    fn push(&mut self, op: Op, value: Complex64) -> Var {
        let id = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node { op, value });
        Var(id)
    }

    pub fn value(&self, v: Var) -> Complex64 {
        self.nodes[v.index()].value
    }

    pub fn leaf(&mut self, value: Complex64) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn real_leaf(&mut self, value: f64) -> Var {
        self.leaf(Complex64::new(value, 0.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn scale(&mut self, a: Var, c: Complex64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a.0, c), v)
    }

    pub fn conj(&mut self, a: Var) -> Var {
        let v = self.value(a).conj();
        self.push(Op::Conj(a.0), v)
    }

    pub fn exp_i(&mut self, a: Var) -> Var {
        let v = Complex64::cis(self.value(a).re);
        self.push(Op::ExpI(a.0), v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = Complex64::new(self.value(a).norm(), 0.0);
        self.push(Op::Abs(a.0), v)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).inv();
        self.push(Op::Recip(a.0), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(Op::Exp(a.0), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).ln();
        self.push(Op::Ln(a.0), v)
    }

    /// Sum of several nodes, left to right.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.leaf(ZERO),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Propagate adjoints from the given seeds (`∂L/∂z*` of each seeded
    /// node) back to every node.
    pub fn backward(&mut self, seeds: &[(Var, Complex64)]) {
        self.adjoints.clear();
        self.adjoints.resize(self.nodes.len(), ZERO);
        for &(v, g) in seeds {
            self.adjoints[v.index()] += g;
        }
        let adj = &mut self.adjoints;
        for k in (0..self.nodes.len()).rev() {
            let g = adj[k];
            if g == ZERO {
                continue;
            }
            let node = self.nodes[k];
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a as usize].value, self.nodes[b as usize].value);
                    adj[a as usize] += vb.conj() * g;
                    adj[b as usize] += va.conj() * g;
                }
                Op::Scale(a, c) => adj[a as usize] += c.conj() * g,
                Op::Conj(a) => adj[a as usize] += g.conj(),
                Op::ExpI(a) => {
                    let d = Complex64::new(0.0, 1.0) * node.value;
                    adj[a as usize] += Complex64::new((d.conj() * g).re, 0.0);
                }
                Op::Abs(a) => {
                    let va = self.nodes[a as usize].value;
                    let r = node.value.re;
                    if r > 0.0 {
                        adj[a as usize] += va * (g.re / r);
                    }
                }
                Op::Recip(a) => {
                    let d = -(node.value * node.value);
                    adj[a as usize] += d.conj() * g;
                }
                Op::Exp(a) => adj[a as usize] += node.value.conj() * g,
                Op::Ln(a) => {
                    let va = self.nodes[a as usize].value;
                    adj[a as usize] += va.inv().conj() * g;
                }
            }
        }
    }

    /// `∂L/∂v*` after [`backward`](Self::backward).
    pub fn adjoint(&self, v: Var) -> Complex64 {
        self.adjoints[v.index()]
    }

    /// `dL/dv` for a node holding a real variable.
    pub fn real_grad(&self, v: Var) -> f64 {
        2.0 * self.adjoints[v.index()].re
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Builds a real loss of one real and one complex input.
    fn record(t: &mut ElementaryTape, a: f64, w: Complex64) -> (Var, Var, Var) {
        let a = t.real_leaf(a);
        let w = t.leaf(w);
        let e = t.exp_i(a);
        let ew = t.mul(e, w);
        let lw = t.ln(w);
        let r = t.recip(w);
        let s = t.sum(&[ew, lw, r]);
        let s = t.scale(s, c(0.3, -0.7));
        let ex = t.exp(s);
        let m = t.abs(ex);
        let sc = t.conj(s);
        let d = t.sub(s, sc);
        let dc = t.conj(d);
        let p = t.mul(d, dc);
        let loss = t.add(m, p);
        (a, w, loss)
    }

    fn loss(a: f64, w: Complex64) -> f64 {
        let mut t = ElementaryTape::new();
        let (_, _, l) = record(&mut t, a, w);
        t.value(l).re
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (a0, w0) = (0.4, c(0.8, -0.5));
        let mut t = ElementaryTape::new();
        let (a, w, l) = record(&mut t, a0, w0);
        assert!(t.value(l).im.abs() < 1e-14);
        t.backward(&[(l, c(0.5, 0.0))]);
        let h = 1e-6;
        let fd_a = (loss(a0 + h, w0) - loss(a0 - h, w0)) / (2.0 * h);
        let fd_re = (loss(a0, w0 + h) - loss(a0, w0 - h)) / (2.0 * h);
        let fd_im = (loss(a0, w0 + c(0.0, h)) - loss(a0, w0 - c(0.0, h))) / (2.0 * h);
        assert!((t.real_grad(a) - fd_a).abs() < 1e-7 * fd_a.abs().max(1.0));
        // ∂L/∂w* = ½(∂L/∂Re w + i ∂L/∂Im w)
        let gw = t.adjoint(w);
        assert!((2.0 * gw.re - fd_re).abs() < 1e-7 * fd_re.abs().max(1.0));
        assert!((2.0 * gw.im - fd_im).abs() < 1e-7 * fd_im.abs().max(1.0));
    }

    #[test]
    fn abs_at_zero_has_no_gradient() {
        let mut t = ElementaryTape::new();
        let z = t.leaf(ZERO);
        let m = t.abs(z);
        t.backward(&[(m, c(0.5, 0.0))]);
        assert_eq!(t.adjoint(z), ZERO);
    }

    #[test]
    fn empty_sum_is_zero_and_clear_resets() {
        let mut t = ElementaryTape::new();
        let s = t.sum(&[]);
        assert_eq!(t.value(s), ZERO);
        assert_eq!(t.len(), 1);
        t.clear();
        assert!(t.is_empty());
    }
}
