//! Experiment harness: config files, the experiment runner, report rows and
//! tables, chunk-size sweeps and the PolyNorm traffic benchmark.

mod bench;
mod config;
mod experiment;
mod report;

pub use bench::{bench_polynorm, default_grid, BenchCell, PolyNormBench, TrafficRatios, BLOCK_ROWS};
pub use config::{
    load_config, motif_2_12_7b, parse_config, preset, synthetic_model, ExperimentConfig, OptimizerKind, Precision,
    MOTIF_PRESET,
};
pub use experiment::{
    gate_tolerance, run_experiment, run_experiment_with_trace, run_matrix, sweep_chunk_size,
    comparison_configs, ChunkChoice, RunOutput,
};
pub use report::{render_table, Report, ReportRow, SweepEntry, SweepReport, SweepSummary, Verification};
