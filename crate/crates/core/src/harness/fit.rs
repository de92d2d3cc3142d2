//! Gradient fitting of a mesh to a target unitary under the squared
//! Frobenius loss `‖M − U‖²_F`.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{fused_backward_into, PhaseGradients};
use crate::error::{Error, Result};
use crate::linalg::{random_unitary, ComplexMatrix};
use crate::mesh::{
    build_mesh, forward_sweep_into, mesh_to_matrix, BasicUnit, PhaseInit, RectangularMesh,
    SweepWorkspace,
};

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// Total iteration budget, shared across restarts.
    pub max_iters: usize,
    /// Stop as soon as the Frobenius error falls below this.
    pub target_error: f64,
    pub lr: f64,
    /// Halve the rate after this many iterations without a 1% improvement.
    pub patience: usize,
    /// Once the rate decays below this, polish with L-BFGS and restart from
    /// fresh phases if that also stalls.
    pub min_lr: f64,
    /// Loss evaluations allowed per polish.
    pub polish_evals: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            target_error: 1e-2,
            lr: 0.05,
            patience: 100,
            min_lr: 1e-4,
            polish_evals: 3000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub best_error: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Mesh at the best error seen.
    pub mesh: RectangularMesh,
}

/// Haar-random `n × n` unitary from a seeded stream.
pub fn random_target(n: usize, seed: u64) -> ComplexMatrix {
    random_unitary(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-12;

    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, mesh: &mut RectangularMesh, g: &[f64], lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((m, v), &gk) in self.m.iter_mut().zip(&mut self.v).zip(g) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * gk;
            *v = Self::B2 * *v + (1.0 - Self::B2) * gk * gk;
        }
        let (m, v) = (&self.m, &self.v);
        mesh.update_phases(|k, phi| phi - lr * (m[k] / c1) / ((v[k] / c2).sqrt() + Self::EPS))
    }
}

/// Loss and phase gradient at the mesh's current phases.
struct Objective<'a> {
    target: &'a ComplexMatrix,
    eye: ComplexMatrix,
    ws: SweepWorkspace,
    m: ComplexMatrix,
    g: ComplexMatrix,
    grads: PhaseGradients,
}

impl<'a> Objective<'a> {
    fn new(mesh: &RectangularMesh, target: &'a ComplexMatrix) -> Self {
        let n = mesh.n();
        Self {
            target,
            eye: ComplexMatrix::identity(n),
            ws: SweepWorkspace::new(mesh, n),
            m: ComplexMatrix::zeros(n, n),
            g: ComplexMatrix::zeros(n, n),
            grads: PhaseGradients::zeros(mesh),
        }
    }

    fn error(&mut self, mesh: &RectangularMesh) -> Result<f64> {
        forward_sweep_into(mesh, &self.eye, &mut self.ws, &mut self.m)?;
        let mut loss = 0.0;
        for ((gk, &mk), &uk) in self
            .g
            .as_mut_slice()
            .iter_mut()
            .zip(self.m.as_slice())
            .zip(self.target.as_slice())
        {
            *gk = mk - uk;
            loss += gk.norm_sqr();
        }
        Ok(loss.sqrt())
    }

    /// Must follow `error` on the same phases.
    fn gradient(&mut self, mesh: &RectangularMesh) -> Result<&[f64]> {
        self.grads.fill_zero();
        fused_backward_into(mesh, &mut self.ws, &mut self.g, &mut self.grads)?;
        Ok(self.grads.as_slice())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS with Armijo backtracking on the loss `err²`. Adam crawls along
/// narrow valleys that curvature information crosses in a few steps.
/// Returns the final error and the number of evaluations spent.
fn polish(
    mesh: &mut RectangularMesh,
    obj: &mut Objective,
    budget: usize,
    target_error: f64,
) -> Result<(f64, usize)> {
    const MEMORY: usize = 10;
    let mut x = mesh.phases_flat();
    let mut err = obj.error(mesh)?;
    let mut f = err * err;
    let mut grad = obj.gradient(mesh)?.to_vec();
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut evals = 1;
    'outer: while evals < budget && err >= target_error {
        let mut d = grad.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(dk, yk)| *dk -= a * yk);
            alphas.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1e-2 / dot(&grad, &grad).sqrt().max(f64::MIN_POSITIVE),
        };
        d.iter_mut().for_each(|dk| *dk *= -gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = -rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(dk, sk)| *dk -= sk * (a - b));
        }
        let mut slope = dot(&grad, &d);
        if slope >= 0.0 {
            hist.clear();
            d = grad.iter().map(|gk| -gk * 1e-2).collect();
            slope = dot(&grad, &d);
        }
        let mut step = 1.0;
        loop {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            mesh.set_phases_flat(&xn)?;
            let en = obj.error(mesh)?;
            evals += 1;
            let fnew = en * en;
            if fnew <= f + 1e-4 * step * slope {
                let gnew = obj.gradient(mesh)?.to_vec();
                let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gnew.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    hist.push_back((s, y, 1.0 / sy));
                    if hist.len() > MEMORY {
                        hist.pop_front();
                    }
                }
                (x, f, err, grad) = (xn, fnew, en, gnew);
                break;
            }
            step *= 0.5;
            if step < 1e-12 || evals >= budget {
                break 'outer;
            }
        }
    }
    mesh.set_phases_flat(&x)?;
    Ok((err, evals))
}

/// Fit `mesh`'s phases so that its matrix approaches `target`.
pub fn fit_mesh(
    mut mesh: RectangularMesh,
    target: &ComplexMatrix,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = mesh.n();
    if target.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "target is {:?}, mesh has {n} ports",
            target.shape()
        )));
    }
    if !(opts.lr > 0.0 && opts.min_lr > 0.0 && opts.target_error > 0.0) {
        return Err(Error::InvalidParameter(
            "fit rates and target must be positive".into(),
        ));
    }
    let mut obj = Objective::new(&mesh, target);
    let mut adam = Adam::new(mesh.num_phases());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut best = f64::INFINITY;
    let mut best_mesh = mesh.clone();
    let mut lr = opts.lr;
    let mut run_best = f64::INFINITY;
    let mut stale = 0;
    let mut restarts = 0;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let err = obj.error(&mesh)?;
        if err < best {
            best = err;
            best_mesh.clone_from(&mesh);
        }
        if err < opts.target_error {
            break;
        }
        if err < 0.99 * run_best {
            run_best = err;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= opts.patience {
            stale = 0;
            lr *= 0.5;
            if lr < opts.min_lr {
                let budget = opts.polish_evals.min(opts.max_iters - iterations);
                let (err, evals) = polish(&mut mesh, &mut obj, budget, opts.target_error)?;
                iterations += evals;
                if err < best {
                    best = err;
                    best_mesh.clone_from(&mesh);
                }
                if err < opts.target_error {
                    break;
                }
                let seed = rand::Rng::random(&mut rng);
                let init = PhaseInit::Uniform { seed };
                mesh = build_mesh(
                    n,
                    mesh.num_fine_layers(),
                    mesh.basic_unit(),
                    mesh.has_diag(),
                    init,
                )?;
                restarts += 1;
                adam = Adam::new(mesh.num_phases());
                run_best = f64::INFINITY;
                lr = opts.lr;
                obj = Objective::new(&mesh, target);
                continue;
            }
        }
        let g = obj.gradient(&mesh)?;
        adam.step(&mut mesh, g, lr)?;
        iterations += 1;
    }
    Ok(FitResult {
        best_error: best,
        iterations,
        restarts,
        mesh: best_mesh,
    })
}

/// Fit a fresh `(n, L)` mesh to a Haar-random target drawn from `target_seed`.
pub fn fit_unitary_task(
    n: usize,
    layers: usize,
    with_diag: bool,
    target_seed: u64,
    basic_unit: BasicUnit,
    opts: &FitOptions,
) -> Result<FitResult> {
    let target = random_target(n, target_seed);
    let init = PhaseInit::Uniform {
        seed: opts.seed ^ target_seed.rotate_left(17),
    };
    let mesh = build_mesh(n, layers, basic_unit, with_diag, init)?;
    fit_mesh(mesh, &target, opts)
}

/// Target realized by a random mesh of the same shape, so an exact fit exists.
pub fn realizable_target(
    n: usize,
    layers: usize,
    with_diag: bool,
    basic_unit: BasicUnit,
    seed: u64,
) -> Result<ComplexMatrix> {
    let mesh = build_mesh(
        n,
        layers,
        basic_unit,
        with_diag,
        PhaseInit::Uniform { seed },
    )?;
    Ok(mesh_to_matrix(&mesh))
}
