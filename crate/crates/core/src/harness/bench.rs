//! Wall-time comparison of the fused and tape paths on a mesh-only
//! training iteration: forward, quadratic loss, backward, phase update.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{
    fused_backward_into, record_mesh, record_phases, ElementaryTape, PhaseGradients,
};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::mesh::{
    build_mesh, forward_sweep_into, BasicUnit, PhaseInit, RectangularMesh, SweepWorkspace,
    COLUMN_BLOCK,
};
use crate::rnn::GradPath;

pub const BENCH_HEADER: &str = "path,n,L,batch,threads,iters,mean_sec,std_sec";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub layers: Vec<usize>,
    pub batch: usize,
    pub threads: usize,
    pub warmup: usize,
    pub iters: usize,
    pub paths: Vec<GradPath>,
    pub basic_unit: BasicUnit,
    pub with_diag: bool,
    pub seed: u64,
    /// Plain gradient-descent step applied to the phases each iteration.
    pub lr: f64,
    /// Sequence length and training-set size used to project one epoch.
    pub seq_len: usize,
    pub epoch_items: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ns: vec![128],
            layers: vec![4, 8, 12, 16, 20],
            batch: 100,
            threads: 8,
            warmup: 3,
            iters: 50,
            paths: vec![GradPath::Fused, GradPath::Tape],
            basic_unit: BasicUnit::Psdc,
            with_diag: false,
            seed: 0,
            lr: 1e-3,
            seq_len: 784,
            epoch_items: 60_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRecord {
    pub path: GradPath,
    pub n: usize,
    pub layers: usize,
    pub batch: usize,
    pub threads: usize,
    pub iters: usize,
    pub mean_sec: f64,
    pub std_sec: f64,
    /// `mean_sec` × mesh applications in one epoch.
    pub epoch_sec: f64,
}

impl BenchmarkRecord {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.9},{:.9}",
            self.path,
            self.n,
            self.layers,
            self.batch,
            self.threads,
            self.iters,
            self.mean_sec,
            self.std_sec
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub records: Vec<BenchmarkRecord>,
    /// Mean cost of one empty timed iteration.
    pub timer_overhead_sec: f64,
}

impl BenchReport {
    /// `tape / fused` mean-time ratio per `(n, L)`, in grid order.
    pub fn speedups(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for f in self.records.iter().filter(|r| r.path == GradPath::Fused) {
            if let Some(t) = self
                .records
                .iter()
                .find(|r| r.path == GradPath::Tape && r.n == f.n && r.layers == f.layers)
            {
                out.push((f.n, f.layers, t.mean_sec / f.mean_sec));
            }
        }
        out
    }

    /// Timer overhead as a fraction of the fastest measured iteration.
    pub fn timer_overhead_fraction(&self) -> f64 {
        let fastest = self
            .records
            .iter()
            .map(|r| r.mean_sec)
            .fold(f64::INFINITY, f64::min);
        self.timer_overhead_sec / fastest
    }
}

pub fn write_bench_csv<W: Write>(records: &[BenchmarkRecord], out: &mut W) -> Result<()> {
    writeln!(out, "{BENCH_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Reusable buffers for the fused iteration.
pub struct FusedQuadratic {
    ws: SweepWorkspace,
    y: ComplexMatrix,
    g: ComplexMatrix,
    grads: PhaseGradients,
}

impl FusedQuadratic {
    pub fn new(mesh: &RectangularMesh, batch: usize) -> Self {
        Self {
            ws: SweepWorkspace::new(mesh, batch),
            y: ComplexMatrix::zeros(mesh.n(), batch),
            g: ComplexMatrix::zeros(mesh.n(), batch),
            grads: PhaseGradients::zeros(mesh),
        }
    }

    /// `L = ‖M·x − target‖²_F` and `dL/dφ`.
    pub fn gradients(
        &mut self,
        mesh: &RectangularMesh,
        x: &ComplexMatrix,
        target: &ComplexMatrix,
    ) -> Result<(f64, &PhaseGradients)> {
        forward_sweep_into(mesh, x, &mut self.ws, &mut self.y)?;
        let mut loss = 0.0;
        for ((g, &y), &t) in self
            .g
            .as_mut_slice()
            .iter_mut()
            .zip(self.y.as_slice())
            .zip(target.as_slice())
        {
            *g = y - t;
            loss += g.norm_sqr();
        }
        self.grads.fill_zero();
        fused_backward_into(mesh, &mut self.ws, &mut self.g, &mut self.grads)?;
        Ok((loss, &self.grads))
    }
}

/// Same loss and gradient as [`FusedQuadratic`], recorded entirely on
/// elementary tapes (one per column block, reduced in block order).
pub fn tape_quadratic(
    mesh: &RectangularMesh,
    x: &ComplexMatrix,
    target: &ComplexMatrix,
) -> Result<(f64, PhaseGradients)> {
    let n = mesh.n();
    if x.rows() != n || target.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "mesh has {n} ports; input {:?}, target {:?}",
            x.shape(),
            target.shape()
        )));
    }
    let batch = x.cols();
    let starts: Vec<usize> = (0..batch).step_by(COLUMN_BLOCK).collect();
    let blocks: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&start| {
            let width = COLUMN_BLOCK.min(batch - start);
            let mut tape = ElementaryTape::new();
            let (leaves, phasors) = record_phases(&mut tape, mesh);
            let mut terms = Vec::with_capacity(n * width);
            for c in start..start + width {
                let col: Vec<_> = (0..n).map(|r| tape.leaf(x[(r, c)])).collect();
                let out = record_mesh(&mut tape, mesh, &phasors, &col);
                for (r, &y) in out.iter().enumerate() {
                    let t = tape.leaf(target[(r, c)]);
                    let d = tape.sub(y, t);
                    let dc = tape.conj(d);
                    terms.push(tape.mul(d, dc));
                }
            }
            let loss = tape.sum(&terms);
            tape.backward(&[(loss, Complex64::new(0.5, 0.0))]);
            let dphi = leaves.iter().map(|&v| tape.real_grad(v)).collect();
            (tape.value(loss).re, dphi)
        })
        .collect();
    let mut grads = PhaseGradients::zeros(mesh);
    let mut loss = 0.0;
    for (l, d) in blocks {
        loss += l;
        for (acc, v) in grads.as_mut_slice().iter_mut().zip(&d) {
            *acc += v;
        }
    }
    Ok((loss, grads))
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// One path's mesh and buffers, stepped by forward + backward + update.
struct Runner {
    path: GradPath,
    mesh: RectangularMesh,
    fused: FusedQuadratic,
}

impl Runner {
    fn new(path: GradPath, mesh: RectangularMesh, batch: usize) -> Self {
        let fused = FusedQuadratic::new(&mesh, batch);
        Self { path, mesh, fused }
    }

    fn step(&mut self, x: &ComplexMatrix, target: &ComplexMatrix, lr: f64) -> Result<f64> {
        let started = Instant::now();
        let grads = match self.path {
            GradPath::Fused => self.fused.gradients(&self.mesh, x, target)?.1.clone(),
            GradPath::Tape => tape_quadratic(&self.mesh, x, target)?.1,
        };
        let g = grads.as_slice();
        self.mesh.update_phases(|k, v| v - lr * g[k])?;
        Ok(started.elapsed().as_secs_f64())
    }
}

/// Paths take turns in chunks of timed iterations, so slow drift in machine
/// load hits every path alike. Each turn opens with an untimed step to
/// rewarm caches the other path evicted.
fn time_interleaved(
    runners: &mut [Runner],
    x: &ComplexMatrix,
    target: &ComplexMatrix,
    cfg: &BenchConfig,
) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 10;
    for r in runners.iter_mut() {
        for _ in 0..cfg.warmup {
            r.step(x, target, cfg.lr)?;
        }
    }
    let mut samples = vec![Vec::with_capacity(cfg.iters); runners.len()];
    let mut done = 0;
    while done < cfg.iters {
        let take = CHUNK.min(cfg.iters - done);
        for (r, s) in runners.iter_mut().zip(&mut samples) {
            r.step(x, target, cfg.lr)?;
            for _ in 0..take {
                s.push(r.step(x, target, cfg.lr)?);
            }
        }
        done += take;
    }
    Ok(samples)
}

/// Mean cost of timing an empty body.
fn timer_overhead(iters: usize) -> f64 {
    let mut total = 0.0;
    for _ in 0..iters {
        let started = Instant::now();
        std::hint::black_box(());
        total += started.elapsed().as_secs_f64();
    }
    total / iters as f64
}

/// Time every `(path, n, L)` combination on fixed synthetic data.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.ns.is_empty() || cfg.layers.is_empty() || cfg.paths.is_empty() {
        return Err(Error::InvalidParameter("benchmark grid is empty".into()));
    }
    if cfg.warmup < 3 || cfg.iters < 10 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 warmup and 10 timed iterations, got {} and {}",
            cfg.warmup, cfg.iters
        )));
    }
    if cfg.batch == 0 || cfg.threads == 0 {
        return Err(Error::InvalidParameter(
            "batch and threads must be positive".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut records = Vec::new();
        let steps_per_epoch = cfg.epoch_items.div_ceil(cfg.batch);
        for &n in &cfg.ns {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ n as u64);
            let x = random_matrix(n, cfg.batch, &mut rng);
            let target = random_matrix(n, cfg.batch, &mut rng);
            for &layers in &cfg.layers {
                let mut runners = cfg
                    .paths
                    .iter()
                    .map(|&path| {
                        let init = PhaseInit::Uniform { seed: cfg.seed };
                        let mesh = build_mesh(n, layers, cfg.basic_unit, cfg.with_diag, init)?;
                        Ok(Runner::new(path, mesh, cfg.batch))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let samples = time_interleaved(&mut runners, &x, &target, cfg)?;
                for (r, s) in runners.iter().zip(&samples) {
                    let (mean_sec, std_sec) = mean_std(s);
                    records.push(BenchmarkRecord {
                        path: r.path,
                        n,
                        layers,
                        batch: cfg.batch,
                        threads: cfg.threads,
                        iters: cfg.iters,
                        mean_sec,
                        std_sec,
                        epoch_sec: mean_sec * (steps_per_epoch * cfg.seq_len) as f64,
                    });
                }
            }
        }
        Ok(BenchReport {
            records,
            timer_overhead_sec: timer_overhead(cfg.iters.max(1000)),
        })
    })
}
