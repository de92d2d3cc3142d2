//! Seeded gradient oracle runs: fused path against the elementary tape and
//! against central finite differences.
//!
//! The strict suite uses quadratic losses. The whole-model check goes
//! through softmax cross-entropy, whose `logsumexp − logit` cancellation
//! leaves about `1e-15·|logit| / step` of noise in each difference
//! quotient, so it only resolves gradients well above that level.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bench::{tape_quadratic, FusedQuadratic};
use crate::engine::{
    dense_complex_backward, dense_forward, finite_difference_gradient, fused_backward_into,
    normwise_rel_error, oracle_agreement, record_mesh, record_phases, ElementaryTape, OracleReport,
    PhaseGradients, Var,
};
use crate::error::Result;
use crate::linalg::{ComplexMatrix, RealMatrix};
use crate::mesh::{
    build_mesh, forward_sweep, BasicUnit, PhaseInit, RectangularMesh, SweepWorkspace,
};
use crate::rnn::oracle::record_modrelu;
use crate::rnn::{
    modrelu, modrelu_backward, power, power_backward, tape_gradients, EpisodeTrace, RnnConfig,
    RnnGradients, RnnModel,
};

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Normwise relative error of fused against tape.
    pub fused_vs_tape: f64,
    pub fused_vs_fd: OracleReport,
    pub tape_vs_fd: OracleReport,
}

impl GradcheckReport {
    pub fn merge(self, other: GradcheckReport) -> GradcheckReport {
        GradcheckReport {
            fused_vs_tape: self.fused_vs_tape.max(other.fused_vs_tape),
            fused_vs_fd: self.fused_vs_fd.merge(other.fused_vs_fd),
            tape_vs_fd: self.tape_vs_fd.merge(other.tape_vs_fd),
        }
    }

    pub fn passes(&self, tape_tol: f64) -> bool {
        self.fused_vs_tape <= tape_tol && self.fused_vs_fd.passes() && self.tape_vs_fd.passes()
    }

    /// Largest relative error of either path against finite differences.
    pub fn max_fd_rel(&self) -> f64 {
        self.fused_vs_fd.max_rel.max(self.tape_vs_fd.max_rel)
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Phase gradients of `‖M·x − t‖²_F` on a random mesh.
pub fn mesh_gradcheck(
    n: usize,
    layers: usize,
    batch: usize,
    basic_unit: BasicUnit,
    with_diag: bool,
    seed: u64,
) -> Result<GradcheckReport> {
    let mesh = build_mesh(
        n,
        layers,
        basic_unit,
        with_diag,
        PhaseInit::Uniform { seed },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let x = random_matrix(n, batch, &mut rng);
    let target = random_matrix(n, batch, &mut rng);

    let mut fused = FusedQuadratic::new(&mesh, batch);
    let fused_grads = fused.gradients(&mesh, &x, &target)?.1.clone();
    let (_, tape_grads) = tape_quadratic(&mesh, &x, &target)?;
    let fd = finite_difference_gradient(
        |m| {
            let mut ws = SweepWorkspace::new(m, batch);
            Ok(forward_sweep(m, &x, &mut ws)?.distance(&target).powi(2))
        },
        &mesh,
        FD_STEP,
    )?;
    Ok(GradcheckReport {
        fused_vs_tape: normwise_rel_error(fused_grads.as_slice(), tape_grads.as_slice()),
        fused_vs_fd: oracle_agreement(fused_grads.as_slice(), &fd, FD_REL_TOL, FD_FLOOR),
        tape_vs_fd: oracle_agreement(tape_grads.as_slice(), &fd, FD_REL_TOL, FD_FLOOR),
    })
}

/// Parameters of the composite check: mesh, then modReLU, then a dense
/// layer with bias, then the power readout.
#[derive(Clone, Debug)]
struct Composite {
    mesh: RectangularMesh,
    b_act: Vec<f64>,
    w: ComplexMatrix,
    c: Vec<Complex64>,
}

impl Composite {
    const OUTPUTS: usize = 3;

    fn forward(
        &self,
        x: &ComplexMatrix,
        ws: &mut SweepWorkspace,
    ) -> Result<(ComplexMatrix, ComplexMatrix, ComplexMatrix)> {
        let y = forward_sweep(&self.mesh, x, ws)?;
        let h =
            ComplexMatrix::from_fn(y.rows(), y.cols(), |k, c| modrelu(y[(k, c)], self.b_act[k]));
        let mut z = dense_forward(&self.w, &h)?;
        for (j, &cj) in self.c.iter().enumerate() {
            z.row_mut(j).iter_mut().for_each(|v| *v += cj);
        }
        Ok((y, h, z))
    }

    fn loss(&self, x: &ComplexMatrix, t: &RealMatrix) -> Result<f64> {
        let mut ws = SweepWorkspace::new(&self.mesh, x.cols());
        let (_, _, z) = self.forward(x, &mut ws)?;
        Ok(power(&z)
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(p, t)| (p - t) * (p - t))
            .sum())
    }

    fn count(&self) -> usize {
        self.mesh.num_phases() + self.b_act.len() + 2 * self.w.as_slice().len() + 2 * self.c.len()
    }

    fn nudge(&mut self, k: usize, s: f64) {
        let part = |k: usize| {
            if k % 2 == 0 {
                Complex64::new(s, 0.0)
            } else {
                Complex64::new(0.0, s)
            }
        };
        let phases = self.mesh.num_phases();
        if k < phases {
            self.mesh
                .update_phases(|i, v| if i == k { v + s } else { v })
                .expect("finite phase");
            return;
        }
        let k = k - phases;
        if k < self.b_act.len() {
            self.b_act[k] += s;
            return;
        }
        let k = k - self.b_act.len();
        let nw = 2 * self.w.as_slice().len();
        if k < nw {
            self.w.as_mut_slice()[k / 2] += part(k);
        } else {
            self.c[(k - nw) / 2] += part(k - nw);
        }
    }

    /// Phases, modReLU biases, then `dL/dRe`, `dL/dIm` of `W` and `c`.
    fn flatten(dphi: &[f64], db: &[f64], gw: &[Complex64], gc: &[Complex64]) -> Vec<f64> {
        let mut out = dphi.to_vec();
        out.extend_from_slice(db);
        for z in gw.iter().chain(gc) {
            out.extend([2.0 * z.re, 2.0 * z.im]);
        }
        out
    }

    fn fused_gradient(&self, x: &ComplexMatrix, t: &RealMatrix) -> Result<Vec<f64>> {
        let mut ws = SweepWorkspace::new(&self.mesh, x.cols());
        let (y, h, z) = self.forward(x, &mut ws)?;
        let p = power(&z);
        let gp_data = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(p, t)| 2.0 * (p - t))
            .collect();
        let gp = RealMatrix::from_vec(p.rows(), p.cols(), gp_data)?;
        let gz = power_backward(&z, &gp)?;
        let gc: Vec<Complex64> = (0..gz.rows()).map(|j| gz.row(j).iter().sum()).collect();
        let (gh, gw) = dense_complex_backward(&self.w, &h, &gz)?;
        let mut db = vec![0.0; self.b_act.len()];
        let mut gy = ComplexMatrix::zeros(y.rows(), y.cols());
        for k in 0..y.rows() {
            for c in 0..y.cols() {
                let (g, b) = modrelu_backward(y[(k, c)], self.b_act[k], gh[(k, c)]);
                gy[(k, c)] = g;
                db[k] += b;
            }
        }
        let mut grads = PhaseGradients::zeros(&self.mesh);
        fused_backward_into(&self.mesh, &mut ws, &mut gy, &mut grads)?;
        Ok(Self::flatten(grads.as_slice(), &db, gw.as_slice(), &gc))
    }

    fn tape_gradient(&self, x: &ComplexMatrix, t: &RealMatrix) -> Vec<f64> {
        let mut tape = ElementaryTape::new();
        let (phases, phasors) = record_phases(&mut tape, &self.mesh);
        let b: Vec<Var> = self.b_act.iter().map(|&v| tape.real_leaf(v)).collect();
        let w: Vec<Var> = self.w.as_slice().iter().map(|&v| tape.leaf(v)).collect();
        let c: Vec<Var> = self.c.iter().map(|&v| tape.leaf(v)).collect();
        let n = self.mesh.n();
        let mut terms = Vec::new();
        for col in 0..x.cols() {
            let input: Vec<Var> = (0..n).map(|r| tape.leaf(x[(r, col)])).collect();
            let y = record_mesh(&mut tape, &self.mesh, &phasors, &input);
            let h: Vec<Var> = y
                .iter()
                .zip(&b)
                .map(|(&y, &b)| record_modrelu(&mut tape, y, b))
                .collect();
            for j in 0..Self::OUTPUTS {
                let prods: Vec<Var> = (0..n).map(|k| tape.mul(w[j * n + k], h[k])).collect();
                let s = tape.sum(&prods);
                let z = tape.add(s, c[j]);
                let zc = tape.conj(z);
                let p = tape.mul(z, zc);
                let target = tape.real_leaf(t[(j, col)]);
                let d = tape.sub(p, target);
                terms.push(tape.mul(d, d));
            }
        }
        let loss = tape.sum(&terms);
        tape.backward(&[(loss, Complex64::new(0.5, 0.0))]);
        let dphi: Vec<f64> = phases.iter().map(|&v| tape.real_grad(v)).collect();
        let db: Vec<f64> = b.iter().map(|&v| tape.real_grad(v)).collect();
        let gw: Vec<Complex64> = w.iter().map(|&v| tape.adjoint(v)).collect();
        let gc: Vec<Complex64> = c.iter().map(|&v| tape.adjoint(v)).collect();
        Self::flatten(&dphi, &db, &gw, &gc)
    }
}

/// Quadratic loss `‖P(W·modReLU(M·x) + c) − t‖²` on a random instance,
/// covering mesh, modReLU, dense and power gradients together.
pub fn composite_gradcheck(
    n: usize,
    layers: usize,
    batch: usize,
    basic_unit: BasicUnit,
    with_diag: bool,
    seed: u64,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(11));
    let mut model = Composite {
        mesh: build_mesh(
            n,
            layers,
            basic_unit,
            with_diag,
            PhaseInit::Uniform { seed },
        )?,
        b_act: (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
        w: random_matrix(Composite::OUTPUTS, n, &mut rng),
        c: (0..Composite::OUTPUTS)
            .map(|_| Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect(),
    };
    model.w.scale(Complex64::new(0.5, 0.0));
    let x = random_matrix(n, batch, &mut rng);
    let data = (0..Composite::OUTPUTS * batch)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let t = RealMatrix::from_vec(Composite::OUTPUTS, batch, data)?;

    let fused = model.fused_gradient(&x, &t)?;
    let tape = model.tape_gradient(&x, &t);
    let fd = (0..model.count())
        .map(|k| {
            let mut up = model.clone();
            up.nudge(k, FD_STEP);
            let mut down = model.clone();
            down.nudge(k, -FD_STEP);
            Ok((up.loss(&x, &t)? - down.loss(&x, &t)?) / (2.0 * FD_STEP))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GradcheckReport {
        fused_vs_tape: normwise_rel_error(&fused, &tape),
        fused_vs_fd: oracle_agreement(&fused, &fd, FD_REL_TOL, FD_FLOOR),
        tape_vs_fd: oracle_agreement(&tape, &fd, FD_REL_TOL, FD_FLOOR),
    })
}

/// Move every bias away from zero so each gradient path is exercised.
pub fn perturb_biases(model: &mut RnnModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in model.b_in_mut() {
        *b = Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    }
    for b in model.b_out_mut() {
        *b = Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    }
    for b in model.b_act_mut() {
        *b = rng.random_range(-0.2..0.2);
    }
}

/// Real-coordinate view of the gradient: `dL/dRe`, `dL/dIm` for complex
/// parameters (`2·Re`, `2·Im` of `∂L/∂w*`), in the order used by
/// [`model_fd_gradient`].
fn real_coordinates(model: &RnnModel, g: &RnnGradients) -> Vec<f64> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<f64>, z: &Complex64| out.extend([2.0 * z.re, 2.0 * z.im]);
    g.w_in.iter().for_each(|z| push(&mut out, z));
    g.b_in.iter().for_each(|z| push(&mut out, z));
    g.w_out.as_slice().iter().for_each(|z| push(&mut out, z));
    g.b_out.iter().for_each(|z| push(&mut out, z));
    out.extend_from_slice(&g.b_act);
    out.extend_from_slice(g.phases.as_slice());
    debug_assert_eq!(out.len(), parameter_count(model));
    out
}

fn parameter_count(model: &RnnModel) -> usize {
    let (h, o) = (model.hidden(), model.output());
    2 * h + 2 * h + 2 * o * h + 2 * o + h + model.mesh().num_phases()
}

fn nudge(model: &mut RnnModel, k: usize, s: f64) {
    let (h, o) = (model.hidden(), model.output());
    let part = |k: usize| {
        if k % 2 == 0 {
            Complex64::new(s, 0.0)
        } else {
            Complex64::new(0.0, s)
        }
    };
    let mut k = k;
    if k < 2 * h {
        model.w_in_mut()[k / 2] += part(k);
        return;
    }
    k -= 2 * h;
    if k < 2 * h {
        model.b_in_mut()[k / 2] += part(k);
        return;
    }
    k -= 2 * h;
    if k < 2 * o * h {
        model.w_out_mut().as_mut_slice()[k / 2] += part(k);
        return;
    }
    k -= 2 * o * h;
    if k < 2 * o {
        model.b_out_mut()[k / 2] += part(k);
        return;
    }
    k -= 2 * o;
    if k < h {
        model.b_act_mut()[k] += s;
        return;
    }
    k -= h;
    model
        .mesh_mut()
        .update_phases(|i, v| if i == k { v + s } else { v })
        .expect("finite phase");
}

/// Central differences of the batch loss over every real parameter coordinate.
pub fn model_fd_gradient(
    model: &RnnModel,
    x: &RealMatrix,
    labels: &[u8],
    step: f64,
) -> Result<Vec<f64>> {
    let loss = |m: &RnnModel| -> Result<f64> {
        let mut trace = EpisodeTrace::new(m, x.rows(), x.cols());
        Ok(m.fused_gradients(x, labels, &mut trace)?.0.loss)
    };
    (0..parameter_count(model))
        .map(|k| {
            let mut up = model.clone();
            nudge(&mut up, k, step);
            let mut down = model.clone();
            nudge(&mut down, k, -step);
            Ok((loss(&up)? - loss(&down)?) / (2.0 * step))
        })
        .collect()
}

/// Full-model check (input dense layer, modReLU, mesh, readout power,
/// output dense layer) on a short random sequence.
pub fn model_gradcheck(config: RnnConfig, steps: usize, seed: u64) -> Result<GradcheckReport> {
    let batch = config.batch;
    let output = config.output;
    let mut model = RnnModel::new(config)?;
    perturb_biases(&mut model, seed.wrapping_add(7));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let data = (0..steps * batch)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let x = RealMatrix::from_vec(steps, batch, data)?;
    let labels: Vec<u8> = (0..batch)
        .map(|_| rng.random_range(0..output) as u8)
        .collect();

    let mut trace = EpisodeTrace::new(&model, steps, batch);
    let (_, fused) = model.fused_gradients(&x, &labels, &mut trace)?;
    let (_, tape) = tape_gradients(&model, &x, &labels)?;
    let fused = real_coordinates(&model, &fused);
    let tape = real_coordinates(&model, &tape);
    let fd = model_fd_gradient(&model, &x, &labels, FD_STEP)?;
    Ok(GradcheckReport {
        fused_vs_tape: normwise_rel_error(&fused, &tape),
        fused_vs_fd: oracle_agreement(&fused, &fd, FD_REL_TOL, FD_FLOOR),
        tape_vs_fd: oracle_agreement(&tape, &fd, FD_REL_TOL, FD_FLOOR),
    })
}

/// Quadratic-loss checks for each seed: the bare mesh under both basic
/// units with and without the diagonal layer, and the composite network.
pub fn gradcheck_grid(
    n: usize,
    layers: usize,
    batch: usize,
    seeds: &[u64],
) -> Result<GradcheckReport> {
    let mut total: Option<GradcheckReport> = None;
    let mut add = |r: GradcheckReport| total = Some(total.map_or(r, |t| t.merge(r)));
    for &seed in seeds {
        for unit in [BasicUnit::Psdc, BasicUnit::Dcps] {
            for diag in [false, true] {
                add(mesh_gradcheck(n, layers, batch, unit, diag, seed)?);
                add(composite_gradcheck(n, layers, batch, unit, diag, seed)?);
            }
        }
    }
    total.ok_or_else(|| crate::error::Error::InvalidParameter("no seeds to check".into()))
}
