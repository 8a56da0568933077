//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod primitives;
pub mod train;
pub mod wave;

use pat_core::diff::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(rng, n, lo, hi)).unwrap()
}

/// Values bounded away from zero in magnitude (keeps relu/pool kinks out of
/// finite-difference stencils).
pub fn tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalar probe `Σ w ⊙ build(inputs)` with fixed random weights.
fn probe(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
    weights_seed: u64,
) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars);
    let n = g.value(out).len();
    let mut r = rng(weights_seed);
    let w = Tensor::new(g.shape(out).to_vec(), uniform(&mut r, n, -1.0, 1.0)).unwrap();
    let wv = g.constant(w);
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod);
    let value = g.value(loss)[0];
    let grads = g.backward(loss).unwrap();
    let gs = vars
        .iter()
        .map(|&v| grads.tensor(&g, v).into_data())
        .collect();
    (value, gs)
}

/// Largest normwise relative error between the tape gradient and central
/// differences over up to `samples` random coordinates per input.
///
/// Inputs whose gradient is (near) zero are measured against 1e-3 of the
/// largest gradient entry over all inputs.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
    step: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    gradcheck_per_input(inputs, build, step, samples, seed)
        .into_iter()
        .fold(0.0, f64::max)
}

/// [`gradcheck`] broken down by input.
pub fn gradcheck_per_input(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
    step: f64,
    samples: usize,
    seed: u64,
) -> Vec<f64> {
    let (_, analytic) = probe(inputs, build, seed);
    let mut r = rng(seed ^ 0x5eed);
    let floor = 1e-3 * analytic.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| r.random_range(0..n)).collect()
        };
        let mut num_max: f64 = 0.0;
        let mut diff_max: f64 = 0.0;
        for &c in &coords {
            let eval = |delta: f64| {
                let mut shifted = inputs.to_vec();
                shifted[k].data_mut()[c] += delta;
                probe(&shifted, build, seed).0
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            num_max = num_max.max(fd.abs()).max(analytic[k][c].abs());
            diff_max = diff_max.max((fd - analytic[k][c]).abs());
        }
        let scale = num_max.max(floor);
        errors.push(if scale > 0.0 { diff_max / scale } else { diff_max });
    }
    errors
}
