//! Finite-difference errors for every tape primitive in 64-bit arithmetic.

use pat_core::diff::{Graph, Tensor, Var};
use rand::seq::SliceRandom;

use super::{gradcheck, rng, tensor, tensor_off_zero};

pub const TOL: f64 = 1e-6;
const STEP: f64 = 1e-5;

type Build = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var;

fn err(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    gradcheck(inputs, build, STEP, 24, 7)
}

pub fn elementwise() -> Vec<(&'static str, f64)> {
    let mut r = rng(1);
    let a = tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b = tensor(&mut r, &[3, 4], -1.0, 1.0);
    let s = tensor(&mut r, &[1], -1.0, 1.0);
    let off = tensor_off_zero(&mut r, &[3, 4]);
    // keep values clear of the clamp and floor kinks
    let c = Tensor::new(vec![6], vec![-0.4, 0.2, 0.5, 0.8, 1.3, 2.0]).unwrap();
    let ab = [a.clone(), b.clone()];
    vec![
        ("add", err(&ab, &|g, v| g.add(v[0], v[1]).unwrap())),
        ("sub", err(&ab, &|g, v| g.sub(v[0], v[1]).unwrap())),
        ("mul", err(&ab, &|g, v| g.mul(v[0], v[1]).unwrap())),
        ("scale", err(&ab[..1], &|g, v| g.scale(v[0], -2.5))),
        ("offset", err(&ab[..1], &|g, v| g.offset(v[0], 0.3))),
        ("tanh", err(&ab[..1], &|g, v| g.tanh(v[0]))),
        ("sum", err(&ab[..1], &|g, v| g.sum(v[0]))),
        ("norm2", err(&ab[..1], &|g, v| g.norm2(v[0]))),
        ("relu", err(&[off], &|g, v| g.relu(v[0]))),
        ("broadcast", err(&[s], &|g, v| g.broadcast(v[0], 5).unwrap())),
        ("clamp01", err(&[c.clone()], &|g, v| g.clamp01(v[0]))),
        ("floor_at", err(&[c], &|g, v| g.floor_at(v[0], 0.35))),
        (
            "custom",
            err(&[a], &|g, v| {
                let x = g.value(v[0]).to_vec();
                let shape = g.shape(v[0]).to_vec();
                let y = x.iter().map(|t| t * t * t).collect();
                g.custom(&[v[0]], shape, y, move |cot| {
                    vec![cot.iter().zip(&x).map(|(c, t)| 3.0 * c * t * t).collect()]
                })
                .unwrap()
            }),
        ),
    ]
}

pub fn linear() -> Vec<(&'static str, f64)> {
    let mut r = rng(2);
    let w = tensor(&mut r, &[5, 7], -1.0, 1.0);
    let x = tensor(&mut r, &[7], -1.0, 1.0);
    let xb = tensor(&mut r, &[4, 3], -1.0, 1.0);
    let wd = tensor(&mut r, &[6, 3], -1.0, 1.0);
    let bd = tensor(&mut r, &[6], -1.0, 1.0);
    vec![
        ("matvec", err(&[w, x], &|g, v| g.matvec(v[0], v[1]).unwrap())),
        ("dense", err(&[xb, wd, bd], &|g, v| g.dense(v[0], v[1], Some(v[2])).unwrap())),
    ]
}

pub fn convolution() -> Vec<(&'static str, f64)> {
    let mut r = rng(3);
    let x = tensor(&mut r, &[2, 6, 5], -1.0, 1.0);
    let k = tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let b = tensor(&mut r, &[3], -1.0, 1.0);
    let k1 = tensor(&mut r, &[1, 2, 1, 1], -1.0, 1.0);
    let xu = tensor(&mut r, &[3, 2, 3], -1.0, 1.0);
    let ku = tensor(&mut r, &[3, 2, 2, 2], -1.0, 1.0);
    let bu = tensor(&mut r, &[2], -1.0, 1.0);
    // distinct values so the pooling argmax is stable under the stencil
    let mut vals: Vec<f64> = (0..2 * 4 * 6).map(|i| i as f64 * 0.01).collect();
    vals.shuffle(&mut rng(9));
    let xp = Tensor::new(vec![2, 4, 6], vals).unwrap();
    let xkb = [x.clone(), k, b];
    vec![
        ("conv2d same", err(&xkb, &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap())),
        ("conv2d strided", err(&xkb, &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap())),
        ("conv2d 1x1", err(&[x, k1], &|g, v| g.conv2d(v[0], v[1], None, 1, 0).unwrap())),
        ("upconv2", err(&[xu, ku, bu], &|g, v| g.upconv2(v[0], v[1], Some(v[2])).unwrap())),
        ("max_pool2", err(&[xp], &|g, v| g.max_pool2(v[0]).unwrap())),
    ]
}

pub fn structural() -> Vec<(&'static str, f64)> {
    let mut r = rng(4);
    let a = tensor(&mut r, &[2, 3, 3], -1.0, 1.0);
    let b = tensor(&mut r, &[1, 3, 3], -1.0, 1.0);
    let c = tensor(&mut r, &[5], -1.0, 1.0);
    let img = tensor(&mut r, &[4, 6], -1.0, 1.0);
    let subs = tensor(&mut r, &[4, 2, 3], -1.0, 1.0);
    vec![
        ("concat_channels", err(&[a.clone(), b.clone()], &|g, v| g.concat_channels(v[0], v[1]).unwrap())),
        ("concat", err(&[a.clone(), c], &|g, v| {
            let flat = g.reshape(v[0], vec![18]).unwrap();
            g.concat(&[flat, v[1]]).unwrap()
        })),
        ("reshape", err(&[a.clone()], &|g, v| g.reshape(v[0], vec![6, 3]).unwrap())),
        ("slice", err(&[a], &|g, v| g.slice(v[0], 4, 7).unwrap())),
        ("embed", err(&[img.clone()], &|g, v| g.embed(v[0], 8, 9, 2, 1, 0.7).unwrap())),
        ("pixel_unshuffle", err(&[img], &|g, v| g.pixel_unshuffle(v[0]).unwrap())),
        ("pixel_shuffle", err(&[subs], &|g, v| g.pixel_shuffle(v[0]).unwrap())),
    ]
}

pub fn spectral() -> Vec<(&'static str, f64)> {
    let mut r = rng(5);
    let z = tensor(&mut r, &[4, 6, 2], -1.0, 1.0);
    vec![
        ("fft2", err(&[z.clone()], &|g, v| g.fft2(v[0]).unwrap())),
        ("ifft2", err(&[z], &|g, v| g.ifft2(v[0]).unwrap())),
    ]
}

pub fn all() -> Vec<(&'static str, f64)> {
    [elementwise(), linear(), convolution(), structural(), spectral()].concat()
}
