//! Data ingestion, training loop, benchmark and unitary fitting.

pub mod bench;
pub mod fit;
pub mod gradcheck;
pub mod mnist;
pub mod train;

pub use bench::{
    run_benchmark, tape_quadratic, write_bench_csv, BenchConfig, BenchReport, BenchmarkRecord,
    FusedQuadratic, BENCH_HEADER,
};
pub use fit::{
    fit_mesh, fit_unitary_task, random_target, realizable_target, FitOptions, FitResult,
};
pub use gradcheck::{
    composite_gradcheck, gradcheck_grid, mesh_gradcheck, model_fd_gradient, model_gradcheck,
    perturb_biases, GradcheckReport, FD_FLOOR, FD_REL_TOL, FD_STEP,
};
pub use mnist::{
    flatten_sequence, load_mnist_idx, load_mnist_split, parse_images, parse_labels, sequence_batch,
    MnistDataset, Split,
};
pub use train::{
    evaluate, run_training, MetricRow, MetricsWriter, RunSummary, TrainConfig, METRICS_HEADER,
};
