use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::polynorm::{
    polynorm_backward, polynorm_backward_naive, polynorm_fused, polynorm_mul_backward,
    polynorm_mul_backward_naive, polynorm_mul_fused, polynorm_mul_naive, polynorm_naive,
    PolyNormParams, TrafficCounter,
};
use crate::tensor::Matrix;

/// Rows evaluated per batch; large shapes are streamed in blocks of this
/// many rows so memory stays bounded. Traffic is additive over rows.
pub const BLOCK_ROWS: usize = 64;

/// Hidden sizes 8K and 16K against 1K to 8K rows.
pub fn default_grid() -> Vec<(usize, usize)> {
    let mut grid = Vec::new();
    for features in [8192, 16384] {
        for rows in [1024, 2048, 4096, 8192] {
            grid.push((rows, features));
        }
    }
    grid
}

/// Fused-to-naive element reads for the four evaluated operations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficRatios {
    pub forward: f64,
    pub mul_forward: f64,
    pub backward: f64,
    pub mul_backward: f64,
}

impl TrafficRatios {
    fn values(&self) -> [f64; 4] {
        [self.forward, self.mul_forward, self.backward, self.mul_backward]
    }

    pub fn max(&self) -> f64 {
        self.values().into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub rows: usize,
    pub features: usize,
    /// Largest `|fused - naive|` over outputs (32-bit).
    pub forward_delta: f64,
    pub mul_forward_delta: f64,
    /// Largest `|fused - naive|` over `dx` (and `dgate` for the gated form).
    pub backward_delta: f64,
    pub mul_backward_delta: f64,
    pub read_ratio: TrafficRatios,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyNormBench {
    pub cells: Vec<BenchCell>,
    /// Geometric mean over cells of naive reads divided by fused reads.
    pub geomean_reduction: TrafficRatios,
}

impl PolyNormBench {
    pub fn max_forward_delta(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.forward_delta.max(c.mul_forward_delta))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>6} {:>8} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8}\n",
            "rows", "features", "fwd d", "mul d", "bwd d", "mulbwd d", "fwd r", "mul r", "bwd r", "mulbwd r"
        );
        for c in &self.cells {
            let r = c.read_ratio;
            out.push_str(&format!(
                "{:>6} {:>8} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
                c.rows,
                c.features,
                c.forward_delta,
                c.mul_forward_delta,
                c.backward_delta,
                c.mul_backward_delta,
                r.forward,
                r.mul_forward,
                r.backward,
                r.mul_backward
            ));
        }
        let g = self.geomean_reduction;
        out.push_str(&format!(
            "geomean read reduction (naive/fused): forward {:.2}x, mul forward {:.2}x, backward {:.2}x, mul backward {:.2}x\n",
            g.forward, g.mul_forward, g.backward, g.mul_backward
        ));
        out
    }
}

#[derive(Default)]
struct Counters {
    fused: [TrafficCounter; 4],
    naive: [TrafficCounter; 4],
}

fn delta(a: &Matrix<f32>, b: &Matrix<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() as f64))
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f32> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0f32..2.0))
}

fn bench_cell(rows: usize, features: usize, params: &PolyNormParams, seed: u64) -> Result<BenchCell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Counters::default();
    let mut cell = BenchCell {
        rows,
        features,
        forward_delta: 0.0,
        mul_forward_delta: 0.0,
        backward_delta: 0.0,
        mul_backward_delta: 0.0,
        read_ratio: TrafficRatios {
            forward: 0.0,
            mul_forward: 0.0,
            backward: 0.0,
            mul_backward: 0.0,
        },
    };
    let mut done = 0;
    while done < rows {
        let block = BLOCK_ROWS.min(rows - done);
        let x = uniform(&mut rng, block, features);
        let gate = uniform(&mut rng, block, features);
        let up = uniform(&mut rng, block, features);

        let a = polynorm_fused(&x, params, &mut c.fused[0])?;
        let b = polynorm_naive(&x, params, &mut c.naive[0])?;
        cell.forward_delta = cell.forward_delta.max(delta(&a, &b));

        let a = polynorm_mul_fused(&x, &gate, params, &mut c.fused[1])?;
        let b = polynorm_mul_naive(&x, &gate, params, &mut c.naive[1])?;
        cell.mul_forward_delta = cell.mul_forward_delta.max(delta(&a, &b));

        let a = polynorm_backward(&x, &up, params, &mut c.fused[2])?;
        let b = polynorm_backward_naive(&x, &up, params, &mut c.naive[2])?;
        cell.backward_delta = cell.backward_delta.max(delta(&a.dx, &b.dx));

        let a = polynorm_mul_backward(&x, &gate, &up, params, &mut c.fused[3])?;
        let b = polynorm_mul_backward_naive(&x, &gate, &up, params, &mut c.naive[3])?;
        cell.mul_backward_delta = cell
            .mul_backward_delta
            .max(delta(&a.dx, &b.dx))
            .max(delta(&a.dgate, &b.dgate));
        done += block;
    }
    let ratio = |i: usize| c.fused[i].elements_read as f64 / c.naive[i].elements_read as f64;
    cell.read_ratio = TrafficRatios {
        forward: ratio(0),
        mul_forward: ratio(1),
        backward: ratio(2),
        mul_backward: ratio(3),
    };
    Ok(cell)
}

/// Compare fused and naive PolyNorm over `grid` of `(rows, features)` in
/// 32-bit: output deltas and element-read ratios, forward and backward,
/// with and without the gate multiply.
pub fn bench_polynorm(grid: &[(usize, usize)], params: &PolyNormParams, seed: u64) -> Result<PolyNormBench> {
    params.validate()?;
    let cells = grid
        .iter()
        .enumerate()
        .map(|(i, &(rows, features))| bench_cell(rows, features, params, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let geo = |f: fn(&TrafficRatios) -> f64| {
        let n = cells.len().max(1) as f64;
        (cells.iter().map(|c| (1.0 / f(&c.read_ratio)).ln()).sum::<f64>() / n).exp()
    };
    let geomean_reduction = TrafficRatios {
        forward: geo(|r| r.forward),
        mul_forward: geo(|r| r.mul_forward),
        backward: geo(|r| r.backward),
        mul_backward: geo(|r| r.mul_backward),
    };
    Ok(PolyNormBench {
        cells,
        geomean_reduction,
    })
}
