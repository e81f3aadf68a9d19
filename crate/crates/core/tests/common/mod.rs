//! Helpers shared by the integration tests: an SVD oracle built on nalgebra
//! and seeded matrix generators.
#![allow(dead_code)]

use nalgebra::DMatrix;
use parallel_muon::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

pub fn singular_values(m: &Matrix<f64>) -> Vec<f64> {
    to_na(m).svd(false, false).singular_values.iter().copied().collect()
}

/// `U Vᵀ` from the thin SVD.
pub fn polar_factor(m: &Matrix<f64>) -> DMatrix<f64> {
    let svd = to_na(m).svd(true, true);
    svd.u.expect("u requested") * svd.v_t.expect("v_t requested")
}

pub fn frobenius_distance(a: &Matrix<f64>, b: &DMatrix<f64>) -> f64 {
    (to_na(a) - b).norm()
}

/// Gaussian test matrix with min side in `2..=64` and aspect ratio between
/// 2 and 4, randomly tall or wide. Near-square Gaussian matrices have
/// singular values too close to zero for five quintic iterations to lift.
pub fn ns_case(rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let n = rng.random_range(2..=64usize);
    let m = (n as f64 * rng.random_range(2.0..=4.0)).round() as usize;
    if rng.random_bool(0.5) {
        gaussian(rng, n, m)
    } else {
        gaussian(rng, m, n)
    }
}

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use parallel_muon::fabric::{CostModel, EventTrace, Fabric};
use parallel_muon::optim::{DenseState, ExecMode, OptimizerOptions, OptimizerState, PipelineConfig};
use parallel_muon::sharding::{Mesh, ParamSpec};
use parallel_muon::tensor::MuonHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Distributed,
    Parallel,
    Pipelined,
}

pub const VARIANTS: [Variant; 3] = [Variant::Distributed, Variant::Parallel, Variant::Pipelined];

pub fn specs(dims: &[(usize, usize)]) -> Vec<ParamSpec> {
    dims.iter()
        .enumerate()
        .map(|(id, &(r, c))| ParamSpec::new(id, format!("p{id}"), r, c))
        .collect()
}

pub fn options(variant: Variant, chunk: usize, sort: bool, exec: ExecMode) -> OptimizerOptions {
    OptimizerOptions {
        sort_by_flops: sort,
        chunk_size: NonZeroUsize::new(chunk).expect("non-zero chunk"),
        pipeline: PipelineConfig {
            enabled: variant == Variant::Pipelined,
            warmup_depth: 2,
        },
        exec,
    }
}

pub type Params = BTreeMap<usize, Matrix<f64>>;

/// Seeded full parameters and `steps` rounds of full gradients.
pub fn inputs(specs: &[ParamSpec], steps: usize, seed: u64) -> (Params, Vec<Params>) {
    let mut r = rng(seed);
    let initial = specs.iter().map(|p| (p.id, gaussian(&mut r, p.rows, p.cols).scale(0.02))).collect();
    let grads = (0..steps)
        .map(|_| specs.iter().map(|p| (p.id, gaussian(&mut r, p.rows, p.cols))).collect())
        .collect();
    (initial, grads)
}

pub struct Run {
    pub state: OptimizerState<Matrix<f64>>,
    pub trace: EventTrace,
}

pub fn run_variant(
    specs: &[ParamSpec],
    mesh: Mesh,
    variant: Variant,
    opts: OptimizerOptions,
    cost: CostModel,
    initial: &BTreeMap<usize, Matrix<f64>>,
    grads: &[BTreeMap<usize, Matrix<f64>>],
) -> Run {
    let mut state = OptimizerState::new(specs, mesh, MuonHyper::default(), opts, initial).unwrap();
    let mut fabric = Fabric::new(mesh.world_size(), cost);
    for full in grads {
        let sharded = state.shard_full(full).unwrap();
        match variant {
            Variant::Distributed => state.distributed_muon_step(&sharded, &mut fabric),
            Variant::Parallel => state.parallel_muon_step(&sharded, &mut fabric),
            Variant::Pipelined => state.parallel_muon_step_pipelined(&sharded, &mut fabric),
        }
        .unwrap();
    }
    Run {
        state,
        trace: fabric.into_trace(),
    }
}

pub fn oracle(specs: &[ParamSpec], initial: &BTreeMap<usize, Matrix<f64>>, grads: &[BTreeMap<usize, Matrix<f64>>]) -> DenseState<Matrix<f64>> {
    let mut dense = DenseState::new(initial.clone());
    for g in grads {
        dense.oracle_step(specs, g, &MuonHyper::default()).unwrap();
    }
    dense
}
