//! PolyNorm activation.
//!
//! For each row `v` of a batch:
//!
//! ```text
//! out = w1 * rms(v) + w2 * rms(v^2) + w3 * rms(v^3) + bias
//! rms(u) = u / sqrt(mean(u^2) + eps)
//! ```
//!
//! Two evaluation strategies are provided. The naive one composes whole-batch
//! elementwise, reduction and normalization passes with materialized
//! temporaries. The fused one reads each row once to collect the three
//! power sums and once more to emit the output. A [`TrafficCounter`] records
//! how many elements each strategy reads and writes, which is the quantity
//! kernel fusion reduces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyNormParams {
    /// Weight of the normalized `x^1`, `x^2`, `x^3` terms.
    pub weights: [f64; 3],
    pub bias: f64,
    pub eps: f64,
}

impl Default for PolyNormParams {
    fn default() -> Self {
        PolyNormParams {
            weights: [1.0 / 3.0; 3],
            bias: 0.0,
            eps: 1e-6,
        }
    }
}

impl PolyNormParams {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("polynorm eps must be positive".into()));
        }
        Ok(())
    }
}

/// Element reads and writes performed by one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounter {
    pub elements_read: u64,
    pub elements_written: u64,
}

impl TrafficCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    fn read(&mut self, n: usize) {
        self.elements_read += n as u64;
    }

    #[inline]
    fn write(&mut self, n: usize) {
        self.elements_written += n as u64;
    }
}

/// Gradients of a PolyNorm evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyNormGrads<T: Scalar> {
    pub dx: Matrix<T>,
    pub dweights: [f64; 3],
    pub dbias: f64,
}

/// Gradients of the fused PolyNorm-times-gate evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyNormMulGrads<T: Scalar> {
    pub dx: Matrix<T>,
    pub dgate: Matrix<T>,
    pub dweights: [f64; 3],
    pub dbias: f64,
}

fn check_finite<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::NonFinite {
            context: format!("polynorm {what}"),
        });
    }
    Ok(())
}

fn check_features<T: Scalar>(x: &Matrix<T>) -> Result<()> {
    if x.cols() == 0 {
        return Err(Error::DegenerateShape {
            rows: x.rows(),
            cols: x.cols(),
        });
    }
    Ok(())
}

#[inline]
fn pow<T: Scalar>(v: T, i: usize) -> T {
    match i {
        1 => v,
        2 => v * v,
        _ => v * v * v,
    }
}

/// Multi-pass evaluation with a materialized temporary per sub-operation.
pub fn polynorm_naive<T: Scalar>(
    x: &Matrix<T>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<Matrix<T>> {
    check_features(x)?;
    check_finite(x, "input")?;
    let (rows, cols) = x.shape();
    let n = rows * cols;
    let eps = T::from_f64(params.eps);
    let inv_cols = T::one() / T::from_f64(cols as f64);

    let mut acc: Option<Matrix<T>> = None;
    for (k, &w) in params.weights.iter().enumerate() {
        let power = k + 1;
        let w = T::from_f64(w);

        // u = x^i
        let u = x.map(|v| pow(v, power));
        counter.read(n);
        counter.write(n);

        // per-row inverse rms
        let mut inv_rms = Vec::with_capacity(rows);
        for row in u.data().chunks_exact(cols) {
            let ss = row.iter().fold(T::zero(), |s, &v| s + v * v);
            inv_rms.push(T::one() / (ss * inv_cols + eps).sqrt());
        }
        counter.read(n);
        counter.write(rows);

        // normalize
        let mut normed = u;
        for (row, &r) in normed.data_mut().chunks_exact_mut(cols).zip(&inv_rms) {
            row.iter_mut().for_each(|v| *v = *v * r);
        }
        counter.read(n + rows);
        counter.write(n);

        // scale
        let scaled = normed.map(|v| w * v);
        counter.read(n);
        counter.write(n);

        // accumulate
        acc = Some(match acc {
            None => scaled,
            Some(a) => {
                counter.read(2 * n);
                counter.write(n);
                a.add(&scaled)?
            }
        });
    }

    let bias = T::from_f64(params.bias);
    let out = acc.expect("three terms").map(|v| v + bias);
    counter.read(n);
    counter.write(n);
    Ok(out)
}

/// Per-row statistics gathered by the first fused sweep.
struct RowStats<T> {
    inv_rms: [T; 3],
}

fn row_stats<T: Scalar>(row: &[T], eps: T, inv_cols: T) -> RowStats<T> {
    let (mut s2, mut s4, mut s6) = (T::zero(), T::zero(), T::zero());
    for &v in row {
        let v2 = v * v;
        let v3 = v2 * v;
        s2 = s2 + v * v;
        s4 = s4 + v2 * v2;
        s6 = s6 + v3 * v3;
    }
    let inv = |s: T| T::one() / (s * inv_cols + eps).sqrt();
    RowStats {
        inv_rms: [inv(s2), inv(s4), inv(s6)],
    }
}

#[inline]
fn combine<T: Scalar>(v: T, stats: &RowStats<T>, w: &[T; 3], bias: T) -> T {
    let v2 = v * v;
    let v3 = v2 * v;
    let t1 = w[0] * (v * stats.inv_rms[0]);
    let t2 = w[1] * (v2 * stats.inv_rms[1]);
    let t3 = w[2] * (v3 * stats.inv_rms[2]);
    t1 + t2 + t3 + bias
}

fn weights_as<T: Scalar>(params: &PolyNormParams) -> [T; 3] {
    params.weights.map(T::from_f64)
}

/// Two-sweep evaluation: power sums, then output.
pub fn polynorm_fused<T: Scalar>(
    x: &Matrix<T>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<Matrix<T>> {
    check_features(x)?;
    check_finite(x, "input")?;
    let (rows, cols) = x.shape();
    let eps = T::from_f64(params.eps);
    let inv_cols = T::one() / T::from_f64(cols as f64);
    let w = weights_as::<T>(params);
    let bias = T::from_f64(params.bias);

    let mut out = Matrix::zeros(rows, cols);
    for (src, dst) in x
        .data()
        .chunks_exact(cols)
        .zip(out.data_mut().chunks_exact_mut(cols))
    {
        let stats = row_stats(src, eps, inv_cols);
        counter.read(cols);
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = combine(v, &stats, &w, bias);
        }
        counter.read(cols);
        counter.write(cols);
    }
    Ok(out)
}

/// `polynorm(x) * gate` without materializing `polynorm(x)`.
pub fn polynorm_mul_fused<T: Scalar>(
    x: &Matrix<T>,
    gate: &Matrix<T>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<Matrix<T>> {
    x.check_same_shape(gate)?;
    check_features(x)?;
    check_finite(x, "input")?;
    check_finite(gate, "gate")?;
    let (rows, cols) = x.shape();
    let eps = T::from_f64(params.eps);
    let inv_cols = T::one() / T::from_f64(cols as f64);
    let w = weights_as::<T>(params);
    let bias = T::from_f64(params.bias);

    let mut out = Matrix::zeros(rows, cols);
    for ((src, g), dst) in x
        .data()
        .chunks_exact(cols)
        .zip(gate.data().chunks_exact(cols))
        .zip(out.data_mut().chunks_exact_mut(cols))
    {
        let stats = row_stats(src, eps, inv_cols);
        counter.read(cols);
        for ((o, &v), &gv) in dst.iter_mut().zip(src).zip(g) {
            *o = combine(v, &stats, &w, bias) * gv;
        }
        counter.read(2 * cols);
        counter.write(cols);
    }
    Ok(out)
}

/// Naive composition `polynorm_naive(x) * gate` as a separate multiply pass.
pub fn polynorm_mul_naive<T: Scalar>(
    x: &Matrix<T>,
    gate: &Matrix<T>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<Matrix<T>> {
    x.check_same_shape(gate)?;
    check_finite(gate, "gate")?;
    let y = polynorm_naive(x, params, counter)?;
    counter.read(2 * y.data().len());
    counter.write(y.data().len());
    y.zip_with(gate, |a, b| a * b)
}

/// Analytic gradients, fused: one sweep for the power sums and the
/// upstream-weighted sums, one sweep to emit `dx`.
pub fn polynorm_backward<T: Scalar>(
    x: &Matrix<T>,
    upstream: &Matrix<T>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<PolyNormGrads<T>> {
    x.check_same_shape(upstream)?;
    check_features(x)?;
    check_finite(x, "input")?;
    check_finite(upstream, "upstream gradient")?;
    let (dx, dweights, dbias) = backward_fused(x, upstream, None, params, counter)?;
    Ok(PolyNormGrads {
        dx,
        dweights,
        dbias,
    })
}

/// Gradients of `polynorm(x) * gate`, fused in the same two sweeps.
pub fn polynorm_mul_backward<T: Scalar>(
    x: &Matrix<T>,
    gate: &Matrix<T>,
    upstream: &Matrix<T>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<PolyNormMulGrads<T>> {
    x.check_same_shape(upstream)?;
    x.check_same_shape(gate)?;
    check_features(x)?;
    check_finite(x, "input")?;
    check_finite(gate, "gate")?;
    check_finite(upstream, "upstream gradient")?;
    let mut dgate = Matrix::zeros(x.rows(), x.cols());
    let (dx, dweights, dbias) = backward_fused(x, upstream, Some((gate, &mut dgate)), params, counter)?;
    Ok(PolyNormMulGrads {
        dx,
        dgate,
        dweights,
        dbias,
    })
}

fn backward_fused<T: Scalar>(
    x: &Matrix<T>,
    upstream: &Matrix<T>,
    mut gate: Option<(&Matrix<T>, &mut Matrix<T>)>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<(Matrix<T>, [f64; 3], f64)> {
    let (rows, cols) = x.shape();
    let n_t = T::from_f64(cols as f64);
    let eps = T::from_f64(params.eps);
    let w = weights_as::<T>(params);
    let bias = T::from_f64(params.bias);
    let two = T::from_f64(2.0);
    let three = T::from_f64(3.0);
    let inputs_per_elem = if gate.is_some() { 3 } else { 2 };

    let mut dx = Matrix::zeros(rows, cols);
    let mut dweights = [0.0f64; 3];
    let mut dbias = 0.0f64;

    for r in 0..rows {
        let xs = &x.data()[r * cols..(r + 1) * cols];
        let gs = &upstream.data()[r * cols..(r + 1) * cols];
        let gate_row = gate.as_ref().map(|(g, _)| &g.data()[r * cols..(r + 1) * cols]);
        // Upstream gradient seen by the activation itself.
        let eff = |j: usize| match gate_row {
            Some(gr) => gs[j] * gr[j],
            None => gs[j],
        };

        // Sweep 1: power sums and <g, x^i>.
        let (mut s2, mut s4, mut s6) = (T::zero(), T::zero(), T::zero());
        let (mut d1, mut d2, mut d3) = (T::zero(), T::zero(), T::zero());
        let mut gsum = T::zero();
        for (j, &v) in xs.iter().enumerate() {
            let v2 = v * v;
            let v3 = v2 * v;
            s2 = s2 + v * v;
            s4 = s4 + v2 * v2;
            s6 = s6 + v3 * v3;
            let g = eff(j);
            d1 = d1 + g * v;
            d2 = d2 + g * v2;
            d3 = d3 + g * v3;
            gsum = gsum + g;
        }
        counter.read(inputs_per_elem * cols);

        let rms = [
            (s2 / n_t + eps).sqrt(),
            (s4 / n_t + eps).sqrt(),
            (s6 / n_t + eps).sqrt(),
        ];
        let dots = [d1, d2, d3];
        for i in 0..3 {
            dweights[i] += (dots[i] / rms[i]).to_f64().unwrap_or(f64::NAN);
        }
        dbias += gsum.to_f64().unwrap_or(f64::NAN);

        // coefficient on u_i in d/du_i: w_i * <g,u_i> / (N r_i^3)
        let k: [T; 3] = std::array::from_fn(|i| w[i] * dots[i] / (n_t * rms[i] * rms[i] * rms[i]));
        let a: [T; 3] = std::array::from_fn(|i| w[i] / rms[i]);

        // Sweep 2: emit dx (and dgate).
        let dx_row = &mut dx.data_mut()[r * cols..(r + 1) * cols];
        for (j, &v) in xs.iter().enumerate() {
            let g = eff(j);
            let v2 = v * v;
            let v3 = v2 * v;
            let du1 = a[0] * g - k[0] * v;
            let du2 = a[1] * g - k[1] * v2;
            let du3 = a[2] * g - k[2] * v3;
            dx_row[j] = du1 + du2 * two * v + du3 * three * v2;
        }
        if let Some((_, dgate)) = gate.as_mut() {
            let dg_row = &mut dgate.data_mut()[r * cols..(r + 1) * cols];
            let stats = RowStats {
                inv_rms: [T::one() / rms[0], T::one() / rms[1], T::one() / rms[2]],
            };
            for (j, &v) in xs.iter().enumerate() {
                dg_row[j] = gs[j] * combine(v, &stats, &w, bias);
            }
            counter.write(cols);
        }
        counter.read(inputs_per_elem * cols);
        counter.write(cols);
    }
    Ok((dx, dweights, dbias))
}

/// Multi-pass backward that recomputes each forward intermediate as its own
/// tensor, the way an unfused autograd graph would.
pub fn polynorm_backward_naive<T: Scalar>(
    x: &Matrix<T>,
    upstream: &Matrix<T>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<PolyNormGrads<T>> {
    x.check_same_shape(upstream)?;
    check_features(x)?;
    check_finite(x, "input")?;
    check_finite(upstream, "upstream gradient")?;
    let (rows, cols) = x.shape();
    let n = rows * cols;
    let n_t = T::from_f64(cols as f64);
    let eps = T::from_f64(params.eps);

    let mut dx = Matrix::zeros(rows, cols);
    let mut dweights = [0.0; 3];

    for (k, &w) in params.weights.iter().enumerate() {
        let power = k + 1;
        let w = T::from_f64(w);

        let u = x.map(|v| pow(v, power));
        counter.read(n);
        counter.write(n);

        let mut rms = Vec::with_capacity(rows);
        for row in u.data().chunks_exact(cols) {
            let ss = row.iter().fold(T::zero(), |s, &v| s + v * v);
            rms.push((ss / n_t + eps).sqrt());
        }
        counter.read(n);
        counter.write(rows);

        // y = u / r, dw = sum(g * y)
        let mut y = u.clone();
        for (row, &r) in y.data_mut().chunks_exact_mut(cols).zip(&rms) {
            row.iter_mut().for_each(|v| *v = *v / r);
        }
        counter.read(n + rows);
        counter.write(n);
        dweights[k] = y
            .data()
            .iter()
            .zip(upstream.data())
            .fold(0.0, |s, (&a, &b)| s + (a * b).to_f64().unwrap_or(f64::NAN));
        counter.read(2 * n);

        // gy = w * g
        let gy = upstream.map(|g| w * g);
        counter.read(n);
        counter.write(n);

        // dots = <gy, u> per row
        let dots: Vec<T> = gy
            .data()
            .chunks_exact(cols)
            .zip(u.data().chunks_exact(cols))
            .map(|(a, b)| a.iter().zip(b).fold(T::zero(), |s, (&p, &q)| s + p * q))
            .collect();
        counter.read(2 * n);
        counter.write(rows);

        // du = gy / r - u * dot / (N r^3)
        let mut du = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let rr = rms[r];
            let coef = dots[r] / (n_t * rr * rr * rr);
            for j in 0..cols {
                let idx = r * cols + j;
                du.data_mut()[idx] = gy.data()[idx] / rr - u.data()[idx] * coef;
            }
        }
        counter.read(2 * n + 2 * rows);
        counter.write(n);

        // d/dx x^i = i x^(i-1)
        let dpow = du.zip_with(x, |d, v| match power {
            1 => d,
            2 => d * T::from_f64(2.0) * v,
            _ => d * T::from_f64(3.0) * (v * v),
        })?;
        counter.read(2 * n);
        counter.write(n);

        dx = dx.add(&dpow)?;
        counter.read(2 * n);
        counter.write(n);
    }

    let dbias = upstream
        .data()
        .iter()
        .fold(0.0, |s, &g| s + g.to_f64().unwrap_or(f64::NAN));
    counter.read(n);

    Ok(PolyNormGrads {
        dx,
        dweights,
        dbias,
    })
}

/// Unfused gradients of `polynorm(x) * gate`: recompute the forward output,
/// multiply it into `dgate`, scale the upstream by the gate, then run the
/// naive PolyNorm backward.
pub fn polynorm_mul_backward_naive<T: Scalar>(
    x: &Matrix<T>,
    gate: &Matrix<T>,
    upstream: &Matrix<T>,
    params: &PolyNormParams,
    counter: &mut TrafficCounter,
) -> Result<PolyNormMulGrads<T>> {
    x.check_same_shape(gate)?;
    x.check_same_shape(upstream)?;
    check_finite(gate, "gate")?;
    check_finite(upstream, "upstream gradient")?;
    let y = polynorm_naive(x, params, counter)?;
    let n = y.data().len();
    let dgate = upstream.zip_with(&y, |g, v| g * v)?;
    counter.read(2 * n);
    counter.write(n);
    let dy = upstream.zip_with(gate, |g, s| g * s)?;
    counter.read(2 * n);
    counter.write(n);
    let g = polynorm_backward_naive(x, &dy, params, counter)?;
    Ok(PolyNormMulGrads {
        dx: g.dx,
        dgate,
        dweights: g.dweights,
        dbias: g.dbias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    fn params() -> PolyNormParams {
        PolyNormParams {
            weights: [0.7, -0.4, 1.3],
            bias: 0.25,
            eps: 1e-6,
        }
    }

    /// Straightforward two-loop reference.
    fn reference(x: &Matrix<f64>, p: &PolyNormParams) -> Matrix<f64> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            for j in 0..x.cols() {
                let mut acc = p.bias;
                for i in 1..=3 {
                    let ms: f64 = (0..x.cols())
                        .map(|k| x.get(r, k).powi(i).powi(2))
                        .sum::<f64>()
                        / x.cols() as f64;
                    acc += p.weights[i as usize - 1] * x.get(r, j).powi(i) / (ms + p.eps).sqrt();
                }
                out.set(r, j, acc);
            }
        }
        out
    }

    #[test]
    fn naive_matches_reference() {
        let x = random(4, 8, 1);
        let mut c = TrafficCounter::new();
        let got = polynorm_naive(&x, &params(), &mut c).unwrap();
        let want = reference(&x, &params());
        assert!(got.sub(&want).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn constant_row_sums_weights() {
        let p = PolyNormParams { eps: 1e-12, ..params() };
        let x = Matrix::from_vec(1, 5, vec![1.7; 5]).unwrap();
        let mut c = TrafficCounter::new();
        let out = polynorm_naive(&x, &p, &mut c).unwrap();
        let want = p.weights.iter().sum::<f64>() + p.bias;
        assert!(out.data().iter().all(|v| (v - want).abs() < 1e-9));
    }

    #[test]
    fn zero_row_gives_bias() {
        let x = Matrix::<f64>::zeros(2, 6);
        let mut c = TrafficCounter::new();
        let naive = polynorm_naive(&x, &params(), &mut c).unwrap();
        let fused = polynorm_fused(&x, &params(), &mut c).unwrap();
        assert!(naive.data().iter().all(|&v| v == 0.25));
        assert_eq!(naive, fused);
    }

    #[test]
    fn fused_traffic_is_two_sweeps() {
        let x = random(1, 1024, 2);
        let mut naive = TrafficCounter::new();
        let mut fused = TrafficCounter::new();
        polynorm_naive(&x, &params(), &mut naive).unwrap();
        polynorm_fused(&x, &params(), &mut fused).unwrap();
        assert!(naive.elements_read >= 3 * 1024);
        assert_eq!(fused.elements_read, 2 * 1024);
    }

    #[test]
    fn gate_identities() {
        let x = random(3, 16, 3);
        let mut c = TrafficCounter::new();
        let ones = Matrix::from_vec(3, 16, vec![1.0; 48]).unwrap();
        let y = polynorm_fused(&x, &params(), &mut c).unwrap();
        assert_eq!(polynorm_mul_fused(&x, &ones, &params(), &mut c).unwrap(), y);
        let zeros = Matrix::zeros(3, 16);
        let z = polynorm_mul_fused(&x, &zeros, &params(), &mut c).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let gate = random(3, 16, 4);
        let composed = polynorm_mul_naive(&x, &gate, &params(), &mut c).unwrap();
        let fused = polynorm_mul_fused(&x, &gate, &params(), &mut c).unwrap();
        assert!(composed.sub(&fused).unwrap().max_abs() <= 1e-12);
        assert!(polynorm_mul_fused(&x, &random(2, 16, 5), &params(), &mut c).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let x = random(2, 8, 6);
        let g = Matrix::zeros(2, 8);
        let mut c = TrafficCounter::new();
        let grads = polynorm_backward(&x, &g, &params(), &mut c).unwrap();
        assert!(grads.dx.data().iter().all(|&v| v == 0.0));
        assert_eq!(grads.dweights, [0.0; 3]);
        assert_eq!(grads.dbias, 0.0);
    }

    #[test]
    fn fused_and_naive_backward_agree() {
        let x = random(3, 12, 7);
        let g = random(3, 12, 8);
        let mut c = TrafficCounter::new();
        let a = polynorm_backward(&x, &g, &params(), &mut c).unwrap();
        let b = polynorm_backward_naive(&x, &g, &params(), &mut c).unwrap();
        assert!(a.dx.sub(&b.dx).unwrap().max_abs() < 1e-12);
        for i in 0..3 {
            assert!((a.dweights[i] - b.dweights[i]).abs() < 1e-12);
        }
        assert!((a.dbias - g.data().iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn fused_and_naive_mul_backward_agree() {
        let x = random(3, 12, 10);
        let s = random(3, 12, 11);
        let g = random(3, 12, 12);
        let mut fused = TrafficCounter::new();
        let mut naive = TrafficCounter::new();
        let a = polynorm_mul_backward(&x, &s, &g, &params(), &mut fused).unwrap();
        let b = polynorm_mul_backward_naive(&x, &s, &g, &params(), &mut naive).unwrap();
        assert!(a.dx.sub(&b.dx).unwrap().max_abs() < 1e-12);
        assert!(a.dgate.sub(&b.dgate).unwrap().max_abs() < 1e-12);
        assert!(fused.elements_read * 3 < naive.elements_read);
    }

    #[test]
    fn non_finite_rejected() {
        let mut x = random(1, 4, 9);
        x.set(0, 2, f64::INFINITY);
        let mut c = TrafficCounter::new();
        assert!(polynorm_naive(&x, &params(), &mut c).is_err());
        assert!(polynorm_fused(&x, &params(), &mut c).is_err());
    }
}
