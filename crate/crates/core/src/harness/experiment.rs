use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OptimizerKind, Precision};
use super::report::{ReportRow, SweepReport, Verification};
use crate::error::{Error, Result};
use crate::fabric::{simulate, EventKind, EventTrace, Fabric};
use crate::optim::{DenseState, OptimizerOptions, OptimizerState, PipelineConfig, NS_TAG};
use crate::sharding::{ns_flops, ParamSpec};
use crate::tensor::{Block, Matrix, Scalar, ShapeOnly};

/// Divergence allowed before the correctness gate fails.
pub fn gate_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::F64 => 1e-12,
        Precision::F32 => 1e-5,
    }
}

/// A finished experiment: its report row and the full event trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub row: ReportRow,
    pub trace: EventTrace,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.row.verification.passed()
    }
}

/// Seeded synthetic inputs: initial parameters, then one gradient per
/// parameter per step, all drawn in id order from one stream.
struct Inputs<B> {
    initial: BTreeMap<usize, B>,
    grads: Vec<BTreeMap<usize, B>>,
}

fn normal_matrix<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        T::from_f64(v * scale)
    })
}

fn numeric_inputs<T: Scalar>(config: &ExperimentConfig) -> Inputs<Matrix<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut specs: Vec<&ParamSpec> = config.model.iter().collect();
    specs.sort_by_key(|p| p.id);
    let initial = specs
        .iter()
        .map(|p| (p.id, normal_matrix(&mut rng, p.rows, p.cols, 0.02)))
        .collect();
    let grads = (0..config.steps)
        .map(|_| {
            specs
                .iter()
                .map(|p| (p.id, normal_matrix(&mut rng, p.rows, p.cols, 1.0)))
                .collect()
        })
        .collect();
    Inputs { initial, grads }
}

fn shape_inputs(config: &ExperimentConfig) -> Inputs<ShapeOnly> {
    let full: BTreeMap<usize, ShapeOnly> = config
        .model
        .iter()
        .map(|p| (p.id, ShapeOnly::zeros(p.rows, p.cols)))
        .collect();
    Inputs {
        grads: vec![full.clone(); config.steps],
        initial: full,
    }
}

fn options(config: &ExperimentConfig) -> OptimizerOptions {
    OptimizerOptions {
        sort_by_flops: config.sort_by_flops,
        chunk_size: config.chunk_size,
        pipeline: PipelineConfig {
            enabled: config.pipeline,
            warmup_depth: config.warmup_depth,
        },
        exec: config.exec,
    }
}

fn flush(trace: &EventTrace, path: Option<&Path>) {
    if let Some(path) = path {
        if let Ok(file) = std::fs::File::create(path) {
            let _ = trace.write_jsonl(std::io::BufWriter::new(file));
        }
    }
}

/// Run every step of `config`; on error the partial trace is written to
/// `trace_path` (when given) before the error is returned.
fn drive<B: Block>(
    config: &ExperimentConfig,
    inputs: &Inputs<B>,
    trace_path: Option<&Path>,
) -> Result<(OptimizerState<B>, EventTrace)> {
    let mut state = OptimizerState::new(&config.model, config.mesh, config.hyper.clone(), options(config), &inputs.initial)?;
    let mut fabric = Fabric::new(config.mesh.world_size(), config.cost_model);
    for full in &inputs.grads {
        let result = state.shard_full(full).and_then(|grads| match config.optimizer {
            OptimizerKind::Distributed => state.distributed_muon_step(&grads, &mut fabric),
            OptimizerKind::Parallel if config.pipeline => state.parallel_muon_step_pipelined(&grads, &mut fabric),
            OptimizerKind::Parallel => state.parallel_muon_step(&grads, &mut fabric),
        });
        if let Err(e) = result {
            flush(fabric.trace(), trace_path);
            return Err(e);
        }
    }
    Ok((state, fabric.into_trace()))
}

fn max_divergence<T: Scalar>(a: &BTreeMap<usize, Matrix<T>>, b: &BTreeMap<usize, Matrix<T>>) -> Result<f64> {
    let mut worst = 0.0f64;
    for (id, m) in a {
        let other = b
            .get(id)
            .ok_or_else(|| Error::LayoutMismatch(format!("oracle has no parameter {id}")))?;
        let diff = m.sub(other)?.max_abs().to_f64().unwrap_or(f64::INFINITY);
        worst = worst.max(diff);
    }
    Ok(worst)
}

fn run_numeric<T: Scalar>(config: &ExperimentConfig, trace_path: Option<&Path>) -> Result<(EventTrace, Verification)> {
    let inputs = numeric_inputs::<T>(config);
    let (state, trace) = drive(config, &inputs, trace_path)?;

    let mut oracle = DenseState::new(inputs.initial.clone());
    for grads in &inputs.grads {
        oracle.oracle_step(&config.model, grads, &config.hyper)?;
    }
    let mut params = 0.0f64;
    let mut momenta = 0.0f64;
    for replica in 0..config.mesh.dp_replicate {
        params = params.max(max_divergence(&state.full_params(replica)?, &oracle.params)?);
        momenta = momenta.max(max_divergence(&state.full_momenta(replica)?, &oracle.momenta)?);
    }
    Ok((trace, Verification::checked(params, momenta, gate_tolerance(config.precision))))
}

/// Run one experiment and summarize it as a report row.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment_with_trace(config, None)
}

/// As [`run_experiment`], writing the partial trace to `trace_path` if a
/// stepper fails.
pub fn run_experiment_with_trace(config: &ExperimentConfig, trace_path: Option<&Path>) -> Result<RunOutput> {
    config.validate()?;
    let (trace, verification) = if config.model.len() <= config.verify_cap {
        match config.precision {
            Precision::F32 => run_numeric::<f32>(config, trace_path)?,
            Precision::F64 => run_numeric::<f64>(config, trace_path)?,
        }
    } else {
        let (_, trace) = drive(config, &shape_inputs(config), trace_path)?;
        (trace, Verification::Unverified)
    };
    trace.validate()?;
    let row = summarize(config, &trace, verification)?;
    Ok(RunOutput { row, trace })
}

/// Chunk count the parallel stepper will use; one chunk is the
/// non-pipelined schedule.
fn chunk_count(config: &ExperimentConfig) -> usize {
    config.model.len().div_ceil(config.chunk_size.get())
}

fn summarize(config: &ExperimentConfig, trace: &EventTrace, verification: Verification) -> Result<ReportRow> {
    let sim = simulate(trace)?;
    let ranks = config.mesh.world_size();
    let step_us = sim.makespan_us() / config.steps as f64;
    let useful_flops: u64 = config
        .model
        .iter()
        .map(|p| ns_flops(p, config.hyper.ns_iterations))
        .sum();
    let throughput = if step_us > 0.0 {
        // flops per microsecond per rank -> TFLOP/s per rank
        useful_flops as f64 / (ranks as f64 * step_us) * 1e-6
    } else {
        0.0
    };
    let (pipeline, sort, chunk) = match config.optimizer {
        OptimizerKind::Distributed => (false, None, None),
        OptimizerKind::Parallel if config.pipeline && chunk_count(config) > 1 => {
            (true, Some(config.sort_by_flops), Some(config.chunk_size.get()))
        }
        OptimizerKind::Parallel => (false, Some(config.sort_by_flops), None),
    };
    let imbalance = {
        let a = crate::sharding::assign_params(
            &config.model,
            config.mesh.group_size(),
            config.hyper.ns_iterations,
            config.sort_by_flops,
        )?;
        match config.optimizer {
            OptimizerKind::Distributed => 0.0,
            OptimizerKind::Parallel => a.imbalance(),
        }
    };
    const MB: f64 = 1e6;
    Ok(ReportRow {
        optimizer: config.optimizer,
        pipeline,
        sort_by_flops: sort,
        chunk_size: chunk,
        ranks,
        params: config.model.len(),
        steps: config.steps,
        step_time_ms: step_us / 1e3,
        peak_mem_mb: sim.max_peak_bytes() as f64 / MB,
        peak_mem_per_rank_mb: sim.peak_bytes.iter().map(|&b| b as f64 / MB).collect(),
        useful_flops_per_step: useful_flops,
        tflops_per_rank: throughput,
        collectives: trace.of_kind(EventKind::CollectiveEnd).filter(|e| e.rank == 0).count(),
        ns_compute_events: trace
            .of_kind(EventKind::Compute)
            .filter(|e| e.tag.starts_with(NS_TAG))
            .count(),
        rank_flops_imbalance: imbalance,
        verification,
    })
}

/// Run independent experiments concurrently; results keep input order.
pub fn run_matrix(configs: &[ExperimentConfig]) -> Vec<Result<RunOutput>> {
    configs.par_iter().map(run_experiment).collect()
}

/// Four variants of `base` (same model, mesh, cost model and seed):
/// Distributed Muon, Parallel Muon without pipelining, pipelined without
/// sorting, pipelined with sorting. Pipelined rows use `base.chunk_size`.
pub fn comparison_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let with = |optimizer, pipeline, sort| ExperimentConfig {
        optimizer,
        pipeline,
        sort_by_flops: sort,
        ..base.clone()
    };
    vec![
        with(OptimizerKind::Distributed, false, false),
        with(OptimizerKind::Parallel, false, false),
        with(OptimizerKind::Parallel, true, false),
        with(OptimizerKind::Parallel, true, true),
    ]
}

/// A sweep entry: a fixed chunk size, or one chunk holding every parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkChoice {
    Size(NonZeroUsize),
    All,
}

impl std::str::FromStr for ChunkChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ChunkChoice::All);
        }
        s.parse::<NonZeroUsize>()
            .map(ChunkChoice::Size)
            .map_err(|_| Error::Config(format!("chunk size `{s}`: expected a positive integer or `all`")))
    }
}

/// Pipelined Parallel Muon at each chunk size, plus which sizes minimize
/// step time and peak memory.
pub fn sweep_chunk_size(config: &ExperimentConfig, sizes: &[ChunkChoice]) -> Result<SweepReport> {
    if sizes.is_empty() {
        return Err(Error::Config("sweep: no chunk sizes given".into()));
    }
    let configs: Vec<ExperimentConfig> = sizes
        .iter()
        .map(|choice| ExperimentConfig {
            optimizer: OptimizerKind::Parallel,
            pipeline: true,
            chunk_size: match choice {
                ChunkChoice::Size(n) => *n,
                ChunkChoice::All => NonZeroUsize::new(config.model.len().max(1)).expect("non-empty model"),
            },
            ..config.clone()
        })
        .collect();
    let rows = run_matrix(&configs)
        .into_iter()
        .map(|r| r.map(|out| out.row))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport::new(sizes.to_vec(), rows))
}
