use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use finemesh::harness::{
    fit_unitary_task, gradcheck_grid, load_mnist_split, run_benchmark, run_training,
    write_bench_csv, BenchConfig, FitOptions, Split, TrainConfig, METRICS_HEADER,
};
use finemesh::mesh::{mesh_to_matrix, read_mesh, BasicUnit, RectangularMesh};
use finemesh::rnn::{read_model, write_model, LearningRates, RnnConfig};
use finemesh::{Error, LoadError};

mod config;

use config::Settings;

#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    msg: String,
    code: u8,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            msg: msg.into(),
            code: 2,
        }
    }

    fn runtime(kind: &'static str, msg: impl Into<String>) -> Self {
        Self {
            kind,
            msg: msg.into(),
            code: 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.msg.replace('\n', " ");
        write!(f, "error kind={} msg={msg}", self.kind)
    }
}

fn is_missing(e: &std::io::Error) -> bool {
    e.kind() == std::io::ErrorKind::NotFound
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match &e {
            Error::InvalidParameter(_) => CliError::usage(msg),
            Error::Load(LoadError::Open { source, .. }) if is_missing(source) => {
                CliError::usage(msg)
            }
            Error::Io(io) if is_missing(io) => CliError::usage(msg),
            Error::Index(_) => CliError::runtime("index", msg),
            Error::Shape(_) => CliError::runtime("shape", msg),
            Error::Contract(_) => CliError::runtime("contract", msg),
            Error::Divergence(_) => CliError::runtime("divergence", msg),
            Error::Load(_) => CliError::runtime("load", msg),
            Error::Checkpoint { .. } => CliError::runtime("checkpoint", msg),
            Error::Io(_) => CliError::runtime("io", msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

/// Photonic mesh unitary RNN: training, benchmarks and gradient checks.
#[derive(Parser, Debug)]
#[command(name = "finemesh", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on pixel-by-pixel MNIST; writes metrics.csv and model.ckpt into --out.
    Train(Flags),
    /// Time the fused and tape gradient paths over a grid of mesh sizes.
    Bench(Flags),
    /// Compare fused, tape and finite-difference gradients on seeded instances.
    Gradcheck(Flags),
    /// Fit a mesh to random target unitaries.
    FitUnitary(Flags),
    /// Print a checkpoint's structure and unitarity residual.
    Inspect { checkpoint: PathBuf },
    /// Strip the header comments from a metrics file, optionally keeping one split.
    ExportMetrics {
        metrics: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<String>,
    /// Fine layer count, or a comma list for `bench`.
    #[arg(long)]
    layers: Option<String>,
    /// psdc or dcps.
    #[arg(long)]
    basic_unit: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    with_diag: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Block-average factor: 1, 2 or 4.
    #[arg(long)]
    downsample: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// fused or tape (comma list for `bench`).
    #[arg(long)]
    path: Option<String>,
    /// MNIST directory; defaults to $MNIST_DIR, then data/mnist.
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Port count, or a comma list for `bench`.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    /// Number of consecutive seeds checked by `gradcheck`.
    #[arg(long)]
    instances: Option<String>,
    /// Number of consecutive target seeds fitted by `fit-unitary`.
    #[arg(long)]
    targets: Option<String>,
    /// Target error for `fit-unitary`, finite-difference tolerance for `gradcheck`.
    #[arg(long)]
    tol: Option<String>,
    /// Fused-vs-tape tolerance for `gradcheck`.
    #[arg(long)]
    tape_tol: Option<String>,
    #[arg(long)]
    train_limit: Option<String>,
    #[arg(long)]
    test_limit: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    evaluate_test: Option<String>,
    /// Record real elapsed time in the metrics (breaks bit-identical reruns).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    wall_clock: Option<String>,
    #[arg(long)]
    lr_in: Option<String>,
    #[arg(long)]
    lr_out: Option<String>,
    #[arg(long)]
    lr_hidden: Option<String>,
    #[arg(long)]
    lr_act: Option<String>,
}

impl Flags {
    fn settings(&self) -> CliResult<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let flags = [
            ("hidden", &self.hidden),
            ("layers", &self.layers),
            ("basic_unit", &self.basic_unit),
            ("with_diag", &self.with_diag),
            ("batch", &self.batch),
            ("epochs", &self.epochs),
            ("downsample", &self.downsample),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("path", &self.path),
            ("data_dir", &self.data_dir),
            ("out", &self.out),
            ("n", &self.n),
            ("iters", &self.iters),
            ("warmup", &self.warmup),
            ("instances", &self.instances),
            ("targets", &self.targets),
            ("tol", &self.tol),
            ("tape_tol", &self.tape_tol),
            ("train_limit", &self.train_limit),
            ("test_limit", &self.test_limit),
            ("evaluate_test", &self.evaluate_test),
            ("wall_clock", &self.wall_clock),
            ("lr_in", &self.lr_in),
            ("lr_out", &self.lr_out),
            ("lr_hidden", &self.lr_hidden),
            ("lr_act", &self.lr_act),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v.clone())?;
            }
        }
        Ok(s)
    }
}

fn unit(s: &Settings) -> CliResult<BasicUnit> {
    Ok(s.get("basic_unit", BasicUnit::Psdc)?)
}

fn model_config(s: &Settings) -> CliResult<RnnConfig> {
    let d = RnnConfig::default();
    let r = LearningRates::default();
    let config = RnnConfig {
        hidden: s.get("hidden", d.hidden)?,
        layers: s.get("layers", d.layers)?,
        basic_unit: unit(s)?,
        with_diag: s.get_bool("with_diag", d.with_diag)?,
        batch: s.get("batch", d.batch)?,
        epochs: s.get("epochs", d.epochs)?,
        seed: s.get("seed", d.seed)?,
        rates: LearningRates {
            input: s.get("lr_in", r.input)?,
            output: s.get("lr_out", r.output)?,
            hidden: s.get("lr_hidden", r.hidden)?,
            act: s.get("lr_act", r.act)?,
        },
        ..d
    };
    config.validate()?;
    Ok(config)
}

fn data_dir(s: &Settings) -> PathBuf {
    match s.raw("data_dir") {
        Some(dir) => PathBuf::from(dir),
        None => {
            std::env::var_os("MNIST_DIR").map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from)
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    let file = File::create(path)
        .map_err(|e| CliError::runtime("io", format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn out_dir(s: &Settings, default: &str) -> CliResult<PathBuf> {
    let dir = PathBuf::from(s.raw("out").unwrap_or(default));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::runtime("io", format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn train(s: &Settings) -> CliResult<()> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        model: model_config(s)?,
        downsample: s.get("downsample", d.downsample)?,
        path: s.get("path", d.path)?,
        threads: s.get("threads", d.threads)?,
        train_limit: s.get_opt("train_limit")?,
        test_limit: s.get_opt("test_limit")?,
        evaluate_test: s.get_bool("evaluate_test", d.evaluate_test)?,
        wall_clock: s.get_bool("wall_clock", d.wall_clock)?,
    };
    let dir = data_dir(s);
    let train = load_mnist_split(&dir, Split::Train)?;
    let test = load_mnist_split(&dir, Split::Test)?;
    let out = out_dir(s, "out")?;
    let summary = run_training(&config, &train, &test, create(&out.join("metrics.csv"))?)?;
    let mut ckpt = create(&out.join("model.ckpt"))?;
    write_model(&summary.model, &mut ckpt)?;
    ckpt.flush()?;
    let last = |split| summary.split(split).last().map(|r| r.accuracy);
    let show = |v: Option<f64>| v.map_or("none".to_string(), |a| format!("{a:.4}"));
    println!(
        "train_accuracy={} test_accuracy={} out={}",
        show(last("train")),
        show(last("test")),
        out.display()
    );
    Ok(())
}

fn bench(s: &Settings) -> CliResult<()> {
    let d = BenchConfig::default();
    let config = BenchConfig {
        ns: s.get_list("n", &d.ns)?,
        layers: s.get_list("layers", &d.layers)?,
        batch: s.get("batch", d.batch)?,
        threads: s.get("threads", d.threads)?,
        warmup: s.get("warmup", d.warmup)?,
        iters: s.get("iters", d.iters)?,
        paths: s.get_list("path", &d.paths)?,
        basic_unit: unit(s)?,
        with_diag: s.get_bool("with_diag", d.with_diag)?,
        seed: s.get("seed", d.seed)?,
        ..d
    };
    let report = run_benchmark(&config)?;
    match s.raw("out") {
        Some(_) => {
            let path = out_dir(s, ".")?.join("bench.csv");
            let mut out = create(&path)?;
            write_bench_csv(&report.records, &mut out)?;
            out.flush()?;
        }
        None => write_bench_csv(&report.records, &mut std::io::stdout().lock())?,
    }
    for (n, layers, ratio) in report.speedups() {
        eprintln!("speedup n={n} L={layers} tape/fused={ratio:.2}");
    }
    for r in &report.records {
        eprintln!(
            "projected_epoch path={} n={} L={} sec={:.1}",
            r.path, r.n, r.layers, r.epoch_sec
        );
    }
    eprintln!(
        "timer_overhead_fraction={:.2e}",
        report.timer_overhead_fraction()
    );
    Ok(())
}

fn gradcheck(s: &Settings) -> CliResult<()> {
    let n = s.get("n", 8usize)?;
    let layers = s.get("layers", 6usize)?;
    let batch = s.get("batch", 3usize)?;
    let seed = s.get("seed", 1u64)?;
    let instances = s.get("instances", 1u64)?;
    let tol = s.get("tol", 1e-5f64)?;
    let tape_tol = s.get("tape_tol", 1e-12f64)?;
    if instances == 0 {
        return Err(CliError::usage("instances must be positive"));
    }
    let threads = s.get("threads", 8usize)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("threads: {e}")))?;
    let seeds: Vec<u64> = (seed..seed + instances).collect();
    let r = pool.install(|| gradcheck_grid(n, layers, batch, &seeds))?;
    println!(
        "fused_vs_tape={:.3e} fused_vs_fd={:.3e} tape_vs_fd={:.3e} small_abs={:.3e}",
        r.fused_vs_tape,
        r.fused_vs_fd.max_rel,
        r.tape_vs_fd.max_rel,
        r.fused_vs_fd.max_abs_small.max(r.tape_vs_fd.max_abs_small)
    );
    let fd_ok = r.max_fd_rel() <= tol && r.fused_vs_fd.passes() && r.tape_vs_fd.passes();
    if fd_ok && r.fused_vs_tape <= tape_tol {
        Ok(())
    } else {
        Err(CliError::runtime(
            "gradcheck",
            format!(
                "tolerance exceeded: fd {:.3e} (tol {tol:e}), tape {:.3e} (tol {tape_tol:e})",
                r.max_fd_rel(),
                r.fused_vs_tape
            ),
        ))
    }
}

fn fit_unitary(s: &Settings) -> CliResult<()> {
    let d = FitOptions::default();
    let n = s.get("n", 4usize)?;
    let layers = s.get("layers", 8usize)?;
    let with_diag = s.get_bool("with_diag", true)?;
    let seed = s.get("seed", 0u64)?;
    let targets = s.get("targets", 1u64)?;
    let opts = FitOptions {
        max_iters: s.get("iters", d.max_iters)?,
        target_error: s.get("tol", d.target_error)?,
        seed,
        ..d
    };
    let basic_unit = unit(s)?;
    let mut reached = 0;
    for target_seed in seed..seed + targets {
        let r = fit_unitary_task(n, layers, with_diag, target_seed, basic_unit, &opts)?;
        if r.best_error < opts.target_error {
            reached += 1;
        }
        println!(
            "target_seed={target_seed} error={:.3e} iterations={} restarts={}",
            r.best_error, r.iterations, r.restarts
        );
    }
    println!("reached={reached}/{targets} tol={:e}", opts.target_error);
    Ok(())
}

fn describe_mesh(mesh: &RectangularMesh) {
    println!("n={}", mesh.n());
    println!("layers={}", mesh.num_fine_layers());
    println!("basic_unit={}", mesh.basic_unit());
    println!("with_diag={}", mesh.has_diag());
    println!("phases={}", mesh.num_phases());
    for (j, layer) in mesh.sweep_layers().enumerate() {
        println!("layer {j} {} units={}", layer.kind(), layer.phases().len());
    }
    println!(
        "unitarity_residual={:.3e}",
        mesh_to_matrix(mesh).unitarity_residual()
    );
}

fn inspect(path: &Path) -> CliResult<()> {
    let file = File::open(path)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let is_model = reader.fill_buf()?.starts_with(b"model ");
    if is_model {
        let model = read_model(reader)?;
        let c = model.config();
        println!("kind=model");
        println!(
            "hidden={} output={} batch={} epochs={} seed={}",
            c.hidden, c.output, c.batch, c.epochs, c.seed
        );
        println!("optimizer_steps={}", model.optimizer().steps);
        describe_mesh(model.mesh());
    } else {
        println!("kind=mesh");
        describe_mesh(&read_mesh(reader)?);
    }
    Ok(())
}

fn export_metrics(input: &Path, split: Option<&str>, out: Option<&Path>) -> CliResult<()> {
    if let Some(s) = split {
        if s != "train" && s != "test" {
            return Err(CliError::usage(format!(
                "unknown split '{s}' (expected train or test)"
            )));
        }
    }
    let file = File::open(input)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", input.display())))?;
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut seen_header = false;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line != METRICS_HEADER {
                return Err(CliError::runtime(
                    "load",
                    format!("{} is not a metrics file", input.display()),
                ));
            }
            seen_header = true;
            writeln!(sink, "{line}")?;
            continue;
        }
        let keep = split.is_none_or(|s| line.split(',').nth(2) == Some(s));
        if keep {
            writeln!(sink, "{line}")?;
        }
    }
    if !seen_header {
        return Err(CliError::runtime(
            "load",
            format!("{} has no metrics header", input.display()),
        ));
    }
    sink.flush()?;
    Ok(())
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(f) => train(&f.settings()?),
        Command::Bench(f) => bench(&f.settings()?),
        Command::Gradcheck(f) => gradcheck(&f.settings()?),
        Command::FitUnitary(f) => fit_unitary(&f.settings()?),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
        Command::ExportMetrics {
            metrics,
            split,
            out,
        } => export_metrics(&metrics, split.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
                | ErrorKind::MissingSubcommand => {
                    let _ = e.print();
                    return ExitCode::from(2);
                }
                _ => {
                    let first = e
                        .to_string()
                        .lines()
                        .next()
                        .unwrap_or("")
                        .trim_start_matches("error: ")
                        .to_string();
                    eprintln!("{}", CliError::usage(first));
                    return ExitCode::from(2);
                }
            }
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code)
        }
    }
}
