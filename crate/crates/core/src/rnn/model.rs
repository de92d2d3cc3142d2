use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{modrelu, modrelu_backward, power, power_backward, softmax_cross_entropy};
use super::optim::{RmsProp, RmsPropConfig};
use crate::engine::{fused_backward_into, PhaseGradients};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, RealMatrix, ZERO};
use crate::mesh::{forward_sweep_into, BasicUnit, PhaseInit, RectangularMesh, SweepWorkspace};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    /// `W_in`, `b_in`.
    pub input: f64,
    /// `W_out`, `b_out`.
    pub output: f64,
    /// Mesh phases, including the diagonal.
    pub hidden: f64,
    /// modReLU biases.
    pub act: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            input: 1e-4,
            output: 1e-2,
            hidden: 1e-4,
            act: 1e-5,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            input: 0.0,
            output: 0.0,
            hidden: 0.0,
            act: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnConfig {
    pub hidden: usize,
    pub output: usize,
    pub layers: usize,
    pub basic_unit: BasicUnit,
    pub with_diag: bool,
    pub rates: LearningRates,
    pub rmsprop: RmsPropConfig,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            output: 10,
            layers: 4,
            basic_unit: BasicUnit::Psdc,
            with_diag: true,
            rates: LearningRates::default(),
            rmsprop: RmsPropConfig::default(),
            batch: 100,
            epochs: 5,
            seed: 0,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.hidden < 2 {
            return bad(format!(
                "hidden size must be at least 2, got {}",
                self.hidden
            ));
        }
        if self.output < 2 {
            return bad(format!(
                "output size must be at least 2, got {}",
                self.output
            ));
        }
        if self.layers < 1 {
            return bad("at least one fine layer is required".into());
        }
        if self.batch < 1 {
            return bad("batch size must be positive".into());
        }
        let r = &self.rates;
        for (name, v) in [
            ("input", r.input),
            ("output", r.output),
            ("hidden", r.hidden),
            ("act", r.act),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!(
                    "learning rate '{name}' must be finite and non-negative, got {v}"
                ));
            }
        }
        let o = &self.rmsprop;
        if !(0.0..1.0).contains(&o.decay) || !(o.eps > 0.0) {
            return bad(format!(
                "invalid RMSProp settings decay={} eps={}",
                o.decay, o.eps
            ));
        }
        Ok(())
    }
}

/// Which backward implementation a training step uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradPath {
    Fused,
    Tape,
}

impl fmt::Display for GradPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradPath::Fused => "fused",
            GradPath::Tape => "tape",
        })
    }
}

impl FromStr for GradPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(GradPath::Fused),
            "tape" => Ok(GradPath::Tape),
            other => Err(Error::InvalidParameter(format!(
                "unknown path '{other}' (expected fused or tape)"
            ))),
        }
    }
}

/// Gradients of every parameter group. Complex groups hold `∂L/∂w*`; real
/// groups hold `dL/dp`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnGradients {
    pub w_in: Vec<Complex64>,
    pub b_in: Vec<Complex64>,
    pub phases: PhaseGradients,
    pub w_out: ComplexMatrix,
    pub b_out: Vec<Complex64>,
    pub b_act: Vec<f64>,
}

impl RnnGradients {
    pub fn zeros(model: &RnnModel) -> Self {
        let (h, o) = (model.hidden(), model.output());
        Self {
            w_in: vec![ZERO; h],
            b_in: vec![ZERO; h],
            phases: PhaseGradients::zeros(&model.mesh),
            w_out: ComplexMatrix::zeros(o, h),
            b_out: vec![ZERO; o],
            b_act: vec![0.0; h],
        }
    }

    /// Every gradient as real numbers, groups in a fixed order. Complex
    /// entries contribute their real and imaginary parts.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut push_c = |v: &[Complex64]| {
            for z in v {
                out.push(z.re);
                out.push(z.im);
            }
        };
        push_c(&self.w_in);
        push_c(&self.b_in);
        push_c(self.w_out.as_slice());
        push_c(&self.b_out);
        out.extend_from_slice(self.phases.as_slice());
        out.extend_from_slice(&self.b_act);
        out
    }

    /// Named groups, for per-group comparisons.
    pub fn groups(&self) -> Vec<(&'static str, Vec<f64>)> {
        let c = |v: &[Complex64]| v.iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>();
        vec![
            ("w_in", c(&self.w_in)),
            ("b_in", c(&self.b_in)),
            ("phases", self.phases.as_slice().to_vec()),
            ("w_out", c(self.w_out.as_slice())),
            ("b_out", c(&self.b_out)),
            ("b_act", self.b_act.clone()),
        ]
    }
}

/// Optimizer state, one cache per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub w_in: RmsProp,
    pub b_in: RmsProp,
    pub phases: RmsProp,
    pub w_out: RmsProp,
    pub b_out: RmsProp,
    pub b_act: RmsProp,
    pub steps: u64,
}

impl OptimizerState {
    fn new(h: usize, o: usize, phases: usize) -> Self {
        Self {
            w_in: RmsProp::new(2 * h),
            b_in: RmsProp::new(2 * h),
            phases: RmsProp::new(phases),
            w_out: RmsProp::new(2 * o * h),
            b_out: RmsProp::new(2 * o),
            b_act: RmsProp::new(h),
            steps: 0,
        }
    }
}

/// Activations saved by a forward pass for backpropagation through time.
#[derive(Debug)]
pub struct EpisodeTrace {
    steps: usize,
    batch: usize,
    /// `workspaces[t]` holds the sweep of `h(t−1)`; entry 0 is unused since
    /// `h(0) = 0`.
    workspaces: Vec<SweepWorkspace>,
    /// Pre-activations `y(t)`.
    pre: Vec<ComplexMatrix>,
    h_last: ComplexMatrix,
    z: ComplexMatrix,
}

impl EpisodeTrace {
    pub fn new(model: &RnnModel, steps: usize, batch: usize) -> Self {
        let h = model.hidden();
        Self {
            steps,
            batch,
            workspaces: (0..steps)
                .map(|_| SweepWorkspace::new(&model.mesh, batch))
                .collect(),
            pre: (0..steps).map(|_| ComplexMatrix::zeros(h, batch)).collect(),
            h_last: ComplexMatrix::zeros(h, batch),
            z: ComplexMatrix::zeros(model.output(), batch),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn pre_activation(&self, t: usize) -> &ComplexMatrix {
        &self.pre[t]
    }

    pub fn final_hidden(&self) -> &ComplexMatrix {
        &self.h_last
    }

    pub fn readout(&self) -> &ComplexMatrix {
        &self.z
    }

    pub fn workspace(&self, t: usize) -> &SweepWorkspace {
        &self.workspaces[t]
    }

    fn fits(&self, model: &RnnModel, steps: usize, batch: usize) -> bool {
        self.steps == steps
            && self.batch == batch
            && self.h_last.rows() == model.hidden()
            && self.z.rows() == model.output()
            && self
                .workspaces
                .first()
                .is_none_or(|w| w.n() == model.hidden())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub batch: usize,
}

impl StepStats {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.batch as f64
    }
}

/// Elman RNN with a mesh as hidden-to-hidden weight:
///
/// ```text
/// y(t) = W_in·x(t) + b_in + W_h·h(t−1),   h(0) = 0
/// h(t) = modReLU(y(t), b_act)
/// z    = W_out·h(T) + b_out,              logits = |z|²
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel {
    pub(crate) config: RnnConfig,
    /// `H × 1`, stored as a column.
    pub(crate) w_in: Vec<Complex64>,
    pub(crate) b_in: Vec<Complex64>,
    pub(crate) mesh: RectangularMesh,
    pub(crate) w_out: ComplexMatrix,
    pub(crate) b_out: Vec<Complex64>,
    pub(crate) b_act: Vec<f64>,
    pub(crate) opt: OptimizerState,
}

fn complex_gaussian(rng: &mut ChaCha8Rng, std: f64) -> Complex64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    Complex64::new(normal.sample(rng), normal.sample(rng))
}

impl RnnModel {
    /// Fresh model: dense weights complex Gaussian with per-component
    /// standard deviation `1/√fan_in`, biases zero, phases uniform.
    pub fn new(config: RnnConfig) -> Result<Self> {
        config.validate()?;
        let (h, o) = (config.hidden, config.output);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mesh_seed = rng.random::<u64>();
        let mesh = RectangularMesh::new(
            h,
            config.layers,
            config.basic_unit,
            config.with_diag,
            PhaseInit::Uniform { seed: mesh_seed },
        )?;
        let w_in = (0..h).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let out_std = 1.0 / (h as f64).sqrt();
        let w_out = ComplexMatrix::from_fn(o, h, |_, _| complex_gaussian(&mut rng, out_std));
        let opt = OptimizerState::new(h, o, mesh.num_phases());
        Ok(Self {
            config,
            w_in,
            b_in: vec![ZERO; h],
            mesh,
            w_out,
            b_out: vec![ZERO; o],
            b_act: vec![0.0; h],
            opt,
        })
    }

    pub fn config(&self) -> &RnnConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn output(&self) -> usize {
        self.config.output
    }

    pub fn mesh(&self) -> &RectangularMesh {
        &self.mesh
    }

    pub fn mesh_mut(&mut self) -> &mut RectangularMesh {
        &mut self.mesh
    }

    pub fn w_in(&self) -> &[Complex64] {
        &self.w_in
    }

    pub fn w_in_mut(&mut self) -> &mut [Complex64] {
        &mut self.w_in
    }

    pub fn b_in(&self) -> &[Complex64] {
        &self.b_in
    }

    pub fn b_in_mut(&mut self) -> &mut [Complex64] {
        &mut self.b_in
    }

    pub fn w_out(&self) -> &ComplexMatrix {
        &self.w_out
    }

    pub fn w_out_mut(&mut self) -> &mut ComplexMatrix {
        &mut self.w_out
    }

    pub fn b_out(&self) -> &[Complex64] {
        &self.b_out
    }

    pub fn b_out_mut(&mut self) -> &mut [Complex64] {
        &mut self.b_out
    }

    pub fn b_act(&self) -> &[f64] {
        &self.b_act
    }

    pub fn b_act_mut(&mut self) -> &mut [f64] {
        &mut self.b_act
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn set_rates(&mut self, rates: LearningRates) {
        self.config.rates = rates;
    }

    /// A trace sized for `steps × batch` input, reusing `trace` if it fits.
    pub fn ensure_trace(
        &self,
        trace: Option<EpisodeTrace>,
        steps: usize,
        batch: usize,
    ) -> EpisodeTrace {
        match trace {
            Some(t) if t.fits(self, steps, batch) => t,
            _ => EpisodeTrace::new(self, steps, batch),
        }
    }

    /// `y(t) ← y(t) + W_in·x(t) + b_in`, then `h(t) = modReLU(y(t))`.
    fn cell(&self, x_t: &[f64], y: &mut ComplexMatrix, h: &mut ComplexMatrix) {
        for k in 0..self.hidden() {
            let (w, b, act) = (self.w_in[k], self.b_in[k], self.b_act[k]);
            for ((yv, hv), &xv) in y
                .row_mut(k)
                .iter_mut()
                .zip(h.row_mut(k).iter_mut())
                .zip(x_t)
            {
                *yv += w * xv + b;
                *hv = modrelu(*yv, act);
            }
        }
    }

    fn readout(&self, h: &ComplexMatrix, z: &mut ComplexMatrix) {
        for (j, &b) in self.b_out.iter().enumerate() {
            let zr = z.row_mut(j);
            zr.fill(b);
            for k in 0..self.hidden() {
                let w = self.w_out[(j, k)];
                for (o, &hv) in zr.iter_mut().zip(h.row(k)) {
                    *o += w * hv;
                }
            }
        }
    }

    fn check_input(&self, x: &RealMatrix) -> Result<()> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::Shape(format!(
                "empty input sequence {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass over `x` (`steps × batch` real pixels), saving
    /// everything backward needs in `trace`. Returns logits `|z|²`.
    pub fn forward(&self, x: &RealMatrix, trace: &mut EpisodeTrace) -> Result<RealMatrix> {
        self.check_input(x)?;
        let (steps, batch) = x.shape();
        if !trace.fits(self, steps, batch) {
            return Err(Error::Shape(format!(
                "trace is for {}x{} input, got {steps}x{batch}",
                trace.steps, trace.batch
            )));
        }
        let hid = self.hidden();
        let mut h = ComplexMatrix::zeros(hid, batch);
        for t in 0..steps {
            if t == 0 {
                trace.pre[0].fill(ZERO);
            } else {
                forward_sweep_into(&self.mesh, &h, &mut trace.workspaces[t], &mut trace.pre[t])?;
            }
            self.cell(x.row(t), &mut trace.pre[t], &mut h);
        }
        self.readout(&h, &mut trace.z);
        trace.h_last = h;
        let logits = power(&trace.z);
        if logits.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite logits".into()));
        }
        Ok(logits)
    }

    /// Logits only, with a single reusable sweep workspace.
    pub fn predict(&self, x: &RealMatrix, ws: &mut SweepWorkspace) -> Result<RealMatrix> {
        self.check_input(x)?;
        let (steps, batch) = x.shape();
        if ws.batch() != batch || ws.n() != self.hidden() {
            *ws = SweepWorkspace::new(&self.mesh, batch);
        }
        let hid = self.hidden();
        let mut h = ComplexMatrix::zeros(hid, batch);
        let mut y = ComplexMatrix::zeros(hid, batch);
        for t in 0..steps {
            if t == 0 {
                y.fill(ZERO);
            } else {
                forward_sweep_into(&self.mesh, &h, ws, &mut y)?;
            }
            self.cell(x.row(t), &mut y, &mut h);
        }
        let mut z = ComplexMatrix::zeros(self.output(), batch);
        self.readout(&h, &mut z);
        Ok(power(&z))
    }

    /// Loss, correct count and all gradients by backpropagation through
    /// time, using the fused sweep for every mesh application.
    pub fn fused_gradients(
        &self,
        x: &RealMatrix,
        labels: &[u8],
        trace: &mut EpisodeTrace,
    ) -> Result<(StepStats, RnnGradients)> {
        let logits = self.forward(x, trace)?;
        let (loss, correct, g_logits) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("loss became {loss}")));
        }
        let (steps, batch) = x.shape();
        let hid = self.hidden();
        let mut grads = RnnGradients::zeros(self);

        let g_z = power_backward(&trace.z, &g_logits)?;
        for j in 0..self.output() {
            let gz = g_z.row(j);
            grads.b_out[j] = gz.iter().sum();
            for k in 0..hid {
                grads.w_out[(j, k)] = gz
                    .iter()
                    .zip(trace.h_last.row(k))
                    .map(|(&g, &hv)| g * hv.conj())
                    .sum();
            }
        }
        // ∂L/∂h(T)* = W_out†·g_z
        let mut g = ComplexMatrix::zeros(hid, batch);
        for j in 0..self.output() {
            for k in 0..hid {
                let w = self.w_out[(j, k)].conj();
                for (o, &gz) in g.row_mut(k).iter_mut().zip(g_z.row(j)) {
                    *o += w * gz;
                }
            }
        }

        for t in (0..steps).rev() {
            let x_t = x.row(t);
            let y = &trace.pre[t];
            for k in 0..hid {
                let act = self.b_act[k];
                let mut gb = 0.0;
                let mut gw = ZERO;
                let mut gbias = ZERO;
                for ((gv, &yv), &xv) in g.row_mut(k).iter_mut().zip(y.row(k)).zip(x_t) {
                    let (gy, db) = modrelu_backward(yv, act, *gv);
                    *gv = gy;
                    gb += db;
                    gw += gy * xv;
                    gbias += gy;
                }
                grads.b_act[k] += gb;
                grads.w_in[k] += gw;
                grads.b_in[k] += gbias;
            }
            if t > 0 {
                fused_backward_into(
                    &self.mesh,
                    &mut trace.workspaces[t],
                    &mut g,
                    &mut grads.phases,
                )?;
            }
        }
        Ok((
            StepStats {
                loss,
                correct,
                batch,
            },
            grads,
        ))
    }

    /// One RMSProp update with each group's own learning rate.
    pub fn apply_gradients(&mut self, grads: &RnnGradients) -> Result<()> {
        let cfg = self.config.rmsprop;
        let r = self.config.rates;
        let opt = &mut self.opt;
        opt.w_in
            .step_complex(&cfg, &mut self.w_in, &grads.w_in, r.input);
        opt.b_in
            .step_complex(&cfg, &mut self.b_in, &grads.b_in, r.input);
        opt.w_out.step_complex(
            &cfg,
            self.w_out.as_mut_slice(),
            grads.w_out.as_slice(),
            r.output,
        );
        opt.b_out
            .step_complex(&cfg, &mut self.b_out, &grads.b_out, r.output);
        opt.b_act
            .step_real(&cfg, &mut self.b_act, &grads.b_act, r.act);
        let phase_opt = &mut opt.phases;
        let g = grads.phases.as_slice();
        self.mesh
            .update_phases(|k, old| old - phase_opt.delta(&cfg, k, g[k], r.hidden))?;
        opt.steps += 1;
        let dense_ok = self
            .w_in
            .iter()
            .chain(&self.b_in)
            .chain(self.w_out.as_slice())
            .chain(&self.b_out)
            .all(|z| z.re.is_finite() && z.im.is_finite())
            && self.b_act.iter().all(|v| v.is_finite());
        if !dense_ok {
            return Err(Error::Divergence(format!(
                "non-finite dense parameter after step {}",
                opt.steps
            )));
        }
        Ok(())
    }

    /// Gradients by the selected path, then one optimizer update.
    pub fn train_step(
        &mut self,
        x: &RealMatrix,
        labels: &[u8],
        path: GradPath,
        trace: &mut EpisodeTrace,
    ) -> Result<StepStats> {
        let (stats, grads) = match path {
            GradPath::Fused => self.fused_gradients(x, labels, trace)?,
            GradPath::Tape => super::oracle::tape_gradients(self, x, labels)?,
        };
        self.apply_gradients(&grads)?;
        Ok(stats)
    }
}
