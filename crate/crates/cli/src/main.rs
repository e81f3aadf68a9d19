//! `pmuon`: run Parallel Muon simulations from the command line.
//!
//! Exit status is 0 on success, 1 on an error, 2 on a usage error, and 3
//! when a run completes but its oracle cross-check fails.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use parallel_muon::harness::{
    bench_polynorm, default_grid, load_config, motif_2_12_7b, run_experiment_with_trace, run_matrix,
    sweep_chunk_size, synthetic_model, comparison_configs, ChunkChoice, ExperimentConfig, OptimizerKind,
    Precision, Report,
};
use parallel_muon::optim::ExecMode;
use parallel_muon::polynorm::PolyNormParams;
use parallel_muon::sharding::Mesh;

#[derive(Parser)]
#[command(name = "pmuon", version, about = "Simulate sharded Muon optimizer steps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration, or the four-row comparison with --compare.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run Distributed, Parallel, pipelined and pipelined+sorted.
        #[arg(long)]
        compare: bool,
        /// Write the event trace (one JSON object per line).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep pipelined Parallel Muon over chunk sizes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated chunk sizes; `all` means one chunk.
        #[arg(long, value_delimiter = ',', default_value = "4,8,32,128,all")]
        sizes: Vec<String>,
    },
    /// Compare fused and naive PolyNorm traffic and outputs.
    BenchPolynorm {
        /// Comma-separated ROWSxFEATURES cells; defaults to 8K/16K features
        /// by 1K..8K rows.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check every stepper against the single-rank oracle.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Distributed,
    Parallel,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct Common {
    /// TOML config; without it the Motif-2-12.7B preset is used (or a
    /// small synthetic model for `verify`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// FSDP ranks (dp_shard); overrides the config mesh.
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long, action = ArgAction::Set)]
    pipeline: Option<bool>,
    #[arg(long, action = ArgAction::Set)]
    sort: Option<bool>,
    #[arg(long)]
    chunk_size: Option<NonZeroUsize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Run per-rank numerics on a thread pool.
    #[arg(long)]
    threaded: bool,
    /// Write the report as JSON here and as a table next to it (.txt).
    #[arg(long)]
    report: Option<PathBuf>,
}

impl Common {
    fn base(&self, fallback: impl FnOnce() -> ExperimentConfig) -> Result<ExperimentConfig, String> {
        let mut c = match &self.config {
            Some(path) => load_config(path).map_err(|e| e.to_string())?,
            None => fallback(),
        };
        if let Some(r) = self.ranks {
            c.mesh = Mesh { dp_shard: r, ..c.mesh };
        }
        if let Some(o) = self.optimizer {
            c.optimizer = match o {
                OptimizerArg::Distributed => OptimizerKind::Distributed,
                OptimizerArg::Parallel => OptimizerKind::Parallel,
            };
        }
        if let Some(p) = self.pipeline {
            c.pipeline = p;
        }
        if let Some(s) = self.sort {
            c.sort_by_flops = s;
        }
        if let Some(n) = self.chunk_size {
            c.chunk_size = n;
        }
        if let Some(p) = self.precision {
            c.precision = match p {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(s) = self.steps {
            c.steps = s;
        }
        if self.threaded {
            c.exec = ExecMode::Threaded;
        }
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

fn motif(ranks: usize) -> ExperimentConfig {
    ExperimentConfig::new(motif_2_12_7b(), Mesh::fsdp(ranks))
}

fn write_text(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn gate(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        eprintln!("correctness gate failed");
        ExitCode::from(3)
    }
}

fn run(cmd: Command) -> Result<ExitCode, String> {
    match cmd {
        Command::Run { common, compare, trace } => {
            let base = common.base(|| motif(8))?;
            let rows = if compare {
                run_matrix(&comparison_configs(&base))
                    .into_iter()
                    .map(|r| r.map(|o| o.row))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.to_string())?
            } else {
                let out = run_experiment_with_trace(&base, trace.as_deref()).map_err(|e| e.to_string())?;
                if let Some(path) = &trace {
                    write_text(path, &out.trace.to_jsonl())?;
                }
                vec![out.row]
            };
            let report = Report { rows };
            print!("{}", report.to_table());
            if let Some(path) = &common.report {
                report.write(path).map_err(|e| e.to_string())?;
            }
            Ok(gate(report.passed()))
        }
        Command::Sweep { common, sizes } => {
            let base = common.base(|| motif(8))?;
            let sizes = sizes
                .iter()
                .map(|s| s.parse::<ChunkChoice>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let sweep = sweep_chunk_size(&base, &sizes).map_err(|e| e.to_string())?;
            print!("{}", sweep.to_table());
            if let Some(path) = &common.report {
                sweep.write(path).map_err(|e| e.to_string())?;
            }
            Ok(gate(sweep.passed()))
        }
        Command::BenchPolynorm { grid, seed, report } => {
            let grid = if grid.is_empty() {
                default_grid()
            } else {
                grid.iter().map(|cell| parse_cell(cell)).collect::<Result<_, _>>()?
            };
            let bench = bench_polynorm(&grid, &PolyNormParams::default(), seed).map_err(|e| e.to_string())?;
            print!("{}", bench.to_table());
            if let Some(path) = &report {
                write_text(path, &(bench.to_json() + "\n"))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common } => {
            let mut base = common.base(|| {
                let mut c = ExperimentConfig::new(synthetic_model(12, 4, 96, 0), Mesh::fsdp(4));
                c.chunk_size = NonZeroUsize::new(3).expect("non-zero");
                c.steps = 2;
                c
            })?;
            base.verify_cap = usize::MAX;
            let variants = [
                (OptimizerKind::Distributed, false),
                (OptimizerKind::Parallel, false),
                (OptimizerKind::Parallel, true),
            ];
            let configs: Vec<ExperimentConfig> = variants
                .iter()
                .map(|&(optimizer, pipeline)| ExperimentConfig {
                    optimizer,
                    pipeline,
                    ..base.clone()
                })
                .collect();
            let rows = run_matrix(&configs)
                .into_iter()
                .map(|r| r.map(|o| o.row))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let report = Report { rows };
            print!("{}", report.to_table());
            if let Some(path) = &common.report {
                report.write(path).map_err(|e| e.to_string())?;
            }
            Ok(gate(report.passed()))
        }
    }
}

fn parse_cell(cell: &str) -> Result<(usize, usize), String> {
    let bad = || format!("grid cell `{cell}`: expected ROWSxFEATURES");
    let (r, f) = cell.split_once('x').ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, f.trim().parse().map_err(|_| bad())?))
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
