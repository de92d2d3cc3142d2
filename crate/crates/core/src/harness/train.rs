//! Training runs with an incremental metrics stream.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mnist::{flatten_sequence, MnistDataset};
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::mesh::SweepWorkspace;
use crate::rnn::{softmax_cross_entropy, EpisodeTrace, GradPath, RnnConfig, RnnModel};

pub const METRICS_HEADER: &str = "epoch,step,split,loss,accuracy,elapsed_sec";

/// Metrics rows per epoch for the `train` split.
pub const WINDOWS_PER_EPOCH: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: RnnConfig,
    pub downsample: usize,
    pub path: GradPath,
    pub threads: usize,
    /// Use only the first `n` training items.
    pub train_limit: Option<usize>,
    /// Use only the first `n` test items.
    pub test_limit: Option<usize>,
    /// Evaluate the test split before training and after every epoch.
    pub evaluate_test: bool,
    /// Write measured wall time. Off by default: `elapsed_sec` is then 0 and
    /// repeated runs produce identical files.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: RnnConfig::default(),
            downsample: 2,
            path: GradPath::Fused,
            threads: 8,
            train_limit: None,
            test_limit: None,
            evaluate_test: true,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    /// Effective settings, echoed into the metrics header.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let limit = |v: Option<usize>| v.map_or("all".to_string(), |n| n.to_string());
        vec![
            ("hidden", m.hidden.to_string()),
            ("output", m.output.to_string()),
            ("layers", m.layers.to_string()),
            ("basic_unit", m.basic_unit.to_string()),
            ("with_diag", m.with_diag.to_string()),
            ("batch", m.batch.to_string()),
            ("epochs", m.epochs.to_string()),
            ("seed", m.seed.to_string()),
            ("lr_in", m.rates.input.to_string()),
            ("lr_out", m.rates.output.to_string()),
            ("lr_hidden", m.rates.hidden.to_string()),
            ("lr_act", m.rates.act.to_string()),
            ("rmsprop_decay", m.rmsprop.decay.to_string()),
            ("rmsprop_eps", m.rmsprop.eps.to_string()),
            ("downsample", self.downsample.to_string()),
            ("downsample_mode", "block-average".to_string()),
            ("path", self.path.to_string()),
            ("threads", self.threads.to_string()),
            ("train_limit", limit(self.train_limit)),
            ("test_limit", limit(self.test_limit)),
            ("evaluate_test", self.evaluate_test.to_string()),
            ("wall_clock", self.wall_clock.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: f64,
    pub step: u64,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
    pub elapsed_sec: f64,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{:.4},{},{},{:.8},{:.6},{:.3}",
            self.epoch, self.step, self.split, self.loss, self.accuracy, self.elapsed_sec
        )
    }
}

/// Append-only CSV writer: `# key = value` lines, the column header, then
/// one flushed line per row so the file can be read mid-run.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, entries: &[(&str, String)]) -> Result<Self> {
        for (k, v) in entries {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn row(&mut self, row: &MetricRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Mean loss and accuracy of `model` over all columns of `seqs`.
pub fn evaluate(
    model: &RnnModel,
    seqs: &RealMatrix,
    labels: &[u8],
    batch: usize,
) -> Result<(f64, f64)> {
    let count = seqs.cols();
    if count == 0 {
        return Err(Error::Shape("nothing to evaluate".into()));
    }
    let mut ws = SweepWorkspace::new(model.mesh(), batch.min(count));
    let mut loss = 0.0;
    let mut correct = 0;
    for start in (0..count).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(count)).collect();
        let x = seqs.select_columns(&idx);
        let logits = model.predict(&x, &mut ws)?;
        let (l, c, _) = softmax_cross_entropy(&logits, &labels[start..start + idx.len()])?;
        loss += l * idx.len() as f64;
        correct += c;
    }
    Ok((loss / count as f64, correct as f64 / count as f64))
}

#[derive(Debug)]
pub struct RunSummary {
    pub model: RnnModel,
    pub rows: Vec<MetricRow>,
}

impl RunSummary {
    /// Rows of one split.
    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.split == split)
    }
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn elapsed(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

/// Train on `train`, evaluating on `test`, streaming rows into `metrics`.
///
/// Rows already written stay in `metrics` if the run aborts.
pub fn run_training<W: Write + Send>(
    config: &TrainConfig,
    train: &MnistDataset,
    test: &MnistDataset,
    metrics: W,
) -> Result<RunSummary> {
    if config.threads == 0 {
        return Err(Error::InvalidParameter("threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| train_in_pool(config, train, test, metrics))
}

fn train_in_pool<W: Write>(
    config: &TrainConfig,
    train: &MnistDataset,
    test: &MnistDataset,
    metrics: W,
) -> Result<RunSummary> {
    let mut model = RnnModel::new(config.model.clone())?;
    let mut writer = MetricsWriter::new(metrics, &config.entries())?;
    let clock = Clock {
        start: Instant::now(),
        enabled: config.wall_clock,
    };
    let train = match config.train_limit {
        Some(n) => train.truncated(n),
        None => train.clone(),
    };
    let test = match config.test_limit {
        Some(n) => test.truncated(n),
        None => test.clone(),
    };
    let batch = config.model.batch;
    if train.len() < batch {
        return Err(Error::InvalidParameter(format!(
            "{} training items cannot fill a batch of {batch}",
            train.len()
        )));
    }
    let train_seq = flatten_sequence(&train, config.downsample)?;
    let test_seq = if config.evaluate_test && !test.is_empty() {
        Some(flatten_sequence(&test, config.downsample)?)
    } else {
        None
    };
    let steps_per_epoch = train.len() / batch;
    let mut rows = Vec::new();
    let mut emit = |writer: &mut MetricsWriter<W>, row: MetricRow| -> Result<()> {
        writer.row(&row)?;
        rows.push(row);
        Ok(())
    };

    let eval_test = |model: &RnnModel, epoch: f64, step: u64| -> Result<Option<MetricRow>> {
        let Some(seq) = &test_seq else {
            return Ok(None);
        };
        let (loss, accuracy) = evaluate(model, seq, test.labels(), batch)?;
        Ok(Some(MetricRow {
            epoch,
            step,
            split: "test",
            loss,
            accuracy,
            elapsed_sec: clock.elapsed(),
        }))
    };
    if let Some(row) = eval_test(&model, 0.0, 0)? {
        emit(&mut writer, row)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.model.seed ^ 0x5eed_0f_da7a);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace: Option<EpisodeTrace> = None;
    let mut step: u64 = 0;
    for epoch in 0..config.model.epochs {
        order.shuffle(&mut rng);
        let boundaries: Vec<usize> = (1..=WINDOWS_PER_EPOCH)
            .map(|k| (k * steps_per_epoch).div_ceil(WINDOWS_PER_EPOCH))
            .collect();
        let (mut w_loss, mut w_correct, mut w_count, mut w_steps) = (0.0, 0usize, 0usize, 0usize);
        for s in 0..steps_per_epoch {
            let idx = &order[s * batch..(s + 1) * batch];
            let x = train_seq.select_columns(idx);
            let labels: Vec<u8> = idx.iter().map(|&i| train.labels()[i]).collect();
            let tr = model.ensure_trace(trace.take(), x.rows(), batch);
            let mut tr = tr;
            let stats = model.train_step(&x, &labels, config.path, &mut tr)?;
            trace = Some(tr);
            step += 1;
            w_loss += stats.loss;
            w_correct += stats.correct;
            w_count += stats.batch;
            w_steps += 1;
            if boundaries.contains(&(s + 1)) && w_steps > 0 {
                emit(
                    &mut writer,
                    MetricRow {
                        epoch: epoch as f64 + (s + 1) as f64 / steps_per_epoch as f64,
                        step,
                        split: "train",
                        loss: w_loss / w_steps as f64,
                        accuracy: w_correct as f64 / w_count as f64,
                        elapsed_sec: clock.elapsed(),
                    },
                )?;
                (w_loss, w_correct, w_count, w_steps) = (0.0, 0, 0, 0);
            }
        }
        if let Some(row) = eval_test(&model, (epoch + 1) as f64, step)? {
            emit(&mut writer, row)?;
        }
    }
    Ok(RunSummary { model, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two easily separable synthetic classes: bright top half vs bright
    /// bottom half.
    fn toy_dataset(count: usize) -> MnistDataset {
        let mut images = Vec::with_capacity(count * 784);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let label = (i % 2) as u8;
            for r in 0..28 {
                for c in 0..28 {
                    let top = r < 14;
                    let on = if label == 0 { top } else { !top };
                    let noise = ((i * 31 + r * 7 + c * 13) % 50) as u8;
                    images.push(if on { 200 + noise } else { noise });
                }
            }
            labels.push(label);
        }
        MnistDataset::new(28, 28, images, labels).unwrap()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            model: RnnConfig {
                hidden: 8,
                output: 10,
                layers: 4,
                batch: 10,
                epochs: 2,
                seed: 3,
                ..RnnConfig::default()
            },
            downsample: 4,
            threads: 2,
            wall_clock: false,
            ..TrainConfig::default()
        }
    }

    fn run(config: &TrainConfig) -> (RunSummary, String) {
        let data = toy_dataset(60);
        let mut out = Vec::new();
        let summary = run_training(config, &data, &data.truncated(20), &mut out).unwrap();
        (summary, String::from_utf8(out).unwrap())
    }

    #[test]
    fn stream_layout() {
        let (summary, text) = run(&toy_config());
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# hidden = 8"));
        let header = lines.iter().position(|l| *l == METRICS_HEADER).unwrap();
        assert!(lines[..header].iter().all(|l| l.starts_with("# ")));
        // 6 steps per epoch; windows at steps 1,2,2,3,3,4,5,5,6,6 collapse to 6
        let train_rows = summary.split("train").count();
        assert_eq!(train_rows, 12);
        assert_eq!(summary.split("test").count(), 3);
        assert_eq!(lines.len() - header - 1, summary.rows.len());
        for l in &lines[header + 1..] {
            assert_eq!(l.split(',').count(), 6);
        }
    }

    #[test]
    fn identical_runs_write_identical_files() {
        let config = toy_config();
        assert_eq!(run(&config).1, run(&config).1);
    }

    #[test]
    fn zero_epochs_only_evaluates() {
        let mut config = toy_config();
        config.model.epochs = 0;
        let (summary, _) = run(&config);
        assert_eq!(summary.rows.len(), 1);
        assert_eq!(summary.rows[0].split, "test");
    }

    #[test]
    fn learns_toy_task() {
        let mut config = toy_config();
        config.model.epochs = 6;
        let (summary, _) = run(&config);
        let last = summary.split("test").last().unwrap();
        assert!(last.accuracy >= 0.9, "{last:?}");
    }

    #[test]
    fn rejects_oversized_batch() {
        let mut config = toy_config();
        config.model.batch = 1000;
        let data = toy_dataset(10);
        assert!(run_training(&config, &data, &data, Vec::new()).is_err());
    }
}
