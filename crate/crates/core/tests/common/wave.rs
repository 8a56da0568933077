//! Independent oracles for the k-space operator.

use std::f64::consts::TAU;

use pat_core::kspace::{first_step, step, BoundaryData, KSpaceSolver, SimConfig, SimGrid};
use rand::Rng;

use super::rng;

/// `cos(kx·x + ky·y)` on the padded grid for integer mode indices.
pub fn plane_mode(grid: &SimGrid, jx: i64, jy: i64) -> (Vec<f64>, f64) {
    let n = grid.n();
    let l = grid.length();
    let (kx, ky) = (TAU * jx as f64 / l, TAU * jy as f64 / l);
    let field = (0..n * n)
        .map(|i| kx * grid.coord(i % n) + ky * grid.coord(i / n))
        .map(f64::cos)
        .collect();
    (field, (kx * kx + ky * ky).sqrt())
}

/// Max deviation from `cos(|k| t)·p0` of `steps` leapfrog steps at constant
/// squared speed `c2`, for one plane mode.
pub fn mode_error(grid: &SimGrid, jx: i64, jy: i64, c2: f64, dt: f64, steps: usize) -> f64 {
    let n2 = grid.n() * grid.n();
    let (p0, k) = plane_mode(grid, jx, jy);
    let speed = vec![c2; n2];
    let omega = c2.sqrt() * k;
    let err = |p: &[f64], t: f64| {
        let a = (omega * t).cos();
        p.iter().zip(&p0).map(|(x, y)| (x - a * y).abs()).fold(0.0, f64::max)
    };
    let mut prev = p0.clone();
    let mut curr = first_step(grid, &p0, &speed, dt).unwrap();
    let mut worst = err(&curr, dt);
    for s in 2..=steps {
        let next = step(grid, &prev, &curr, &speed, dt).unwrap();
        prev = std::mem::replace(&mut curr, next);
        worst = worst.max(err(&curr, s as f64 * dt));
    }
    worst
}

/// Worst error over `count` random modes at unit speed.
pub fn unit_speed_exactness(m: usize, pad: usize, count: usize, steps: usize, seed: u64) -> f64 {
    let grid = SimGrid::new(m, pad).unwrap();
    let dt = SimConfig::for_grid(&grid, 1.0).unwrap().dt;
    let half = (grid.n() / 2) as i64;
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let jx = r.random_range(-half + 1..half);
            let jy = r.random_range(-half + 1..half);
            mode_error(&grid, jx, jy, 1.0, dt, steps)
        })
        .fold(0.0, f64::max)
}

/// Errors at the final time `t_end` for `dt` and `dt/2`, and their ratio.
pub fn convergence_ratio(c2: f64, dt: f64, t_end: f64) -> (f64, f64, f64) {
    let grid = SimGrid::new(16, 1).unwrap();
    let final_error = |dt: f64| {
        let steps = (t_end / dt).round() as usize;
        let (p0, k) = plane_mode(&grid, 1, 1);
        let speed = vec![c2; p0.len()];
        let mut prev = p0.clone();
        let mut curr = first_step(&grid, &p0, &speed, dt).unwrap();
        for _ in 2..=steps {
            let next = step(&grid, &prev, &curr, &speed, dt).unwrap();
            prev = std::mem::replace(&mut curr, next);
        }
        let a = (c2.sqrt() * k * steps as f64 * dt).cos();
        curr.iter().zip(&p0).map(|(x, y)| (x - a * y).abs()).fold(0.0, f64::max)
    };
    let (e1, e2) = (final_error(dt), final_error(dt / 2.0));
    (e1, e2, e1 / e2)
}

/// `F⁻¹[4 sin²(dt|k|/2) F p]` by direct summation.
pub fn naive_operator(grid: &SimGrid, p: &[f64], dt: f64) -> Vec<f64> {
    let n = grid.n();
    let kmag = grid.wavenumber_magnitudes();
    let nn = (n * n) as f64;
    let mut spec = vec![(0.0, 0.0); n * n];
    for u in 0..n {
        for v in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..n {
                for c in 0..n {
                    let ph = -TAU * ((u * r + v * c) % n) as f64 / n as f64;
                    re += p[r * n + c] * ph.cos();
                    im += p[r * n + c] * ph.sin();
                }
            }
            let s = (0.5 * dt * kmag[u * n + v]).sin();
            let w = 4.0 * s * s;
            spec[u * n + v] = (re * w, im * w);
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for u in 0..n {
                for v in 0..n {
                    let ph = TAU * ((u * r + v * c) % n) as f64 / n as f64;
                    let (a, b) = spec[u * n + v];
                    acc += a * ph.cos() - b * ph.sin();
                }
            }
            out[r * n + c] = acc / nn;
        }
    }
    out
}

/// One heterogeneous step (and a start-up step) on an 8 × 8 grid against
/// direct summation.
pub fn brute_force_step_error(seed: u64) -> f64 {
    let grid = SimGrid::new(4, 2).unwrap();
    let n2 = grid.n() * grid.n();
    let mut r = rng(seed);
    let prev: Vec<f64> = (0..n2).map(|_| r.random_range(-1.0..1.0)).collect();
    let curr: Vec<f64> = (0..n2).map(|_| r.random_range(-1.0..1.0)).collect();
    let speed: Vec<f64> = (0..n2).map(|_| r.random_range(0.5..1.5)).collect();
    let dt = 0.1;
    let a = naive_operator(&grid, &curr, dt);
    let want: Vec<f64> = (0..n2).map(|i| 2.0 * curr[i] - prev[i] - speed[i] * a[i]).collect();
    let got = step(&grid, &prev, &curr, &speed, dt).unwrap();
    let a0 = naive_operator(&grid, &prev, dt);
    let want0: Vec<f64> = (0..n2).map(|i| prev[i] - 0.5 * speed[i] * a0[i]).collect();
    let got0 = first_step(&grid, &prev, &speed, dt).unwrap();
    got.iter()
        .zip(&want)
        .chain(got0.iter().zip(&want0))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Tangent-linear model of the solver in direction `(df, dg)`.
pub fn tangent_linear(solver: &KSpaceSolver<f64>, f: &[f64], speed: &[f64], df: &[f64], dg: &[f64]) -> BoundaryData<f64> {
    let grid = *solver.grid();
    let cfg = *solver.config();
    let n2 = grid.n() * grid.n();
    let n_time = cfg.n_records();
    let last = (n_time - 1) * cfg.record_stride;
    let mut out = vec![0.0; cfg.n_det * n_time];
    let mut record = |j: usize, dp: &[f64]| {
        for (d, v) in solver.sample(dp).into_iter().enumerate() {
            out[d * n_time + j] = v;
        }
    };
    let mut p_prev = grid.embed(f, 0.0);
    let mut d_prev = grid.embed(df, 0.0);
    record(0, &d_prev);
    if last > 0 {
        let ap = solver.operator(&p_prev).unwrap();
        let ad = solver.operator(&d_prev).unwrap();
        let mut p_curr: Vec<f64> = (0..n2).map(|i| p_prev[i] - 0.5 * speed[i] * ap[i]).collect();
        let mut d_curr: Vec<f64> = (0..n2)
            .map(|i| d_prev[i] - 0.5 * (speed[i] * ad[i] + dg[i] * ap[i]))
            .collect();
        for s in 1..=last {
            if s % cfg.record_stride == 0 {
                record(s / cfg.record_stride, &d_curr);
            }
            if s == last {
                break;
            }
            let ap = solver.operator(&p_curr).unwrap();
            let ad = solver.operator(&d_curr).unwrap();
            let p_next: Vec<f64> = (0..n2).map(|i| 2.0 * p_curr[i] - p_prev[i] - speed[i] * ap[i]).collect();
            let d_next: Vec<f64> = (0..n2)
                .map(|i| 2.0 * d_curr[i] - d_prev[i] - speed[i] * ad[i] - dg[i] * ap[i])
                .collect();
            p_prev = std::mem::replace(&mut p_curr, p_next);
            d_prev = std::mem::replace(&mut d_curr, d_next);
        }
    }
    BoundaryData::new(cfg.n_det, n_time, out).unwrap()
}

/// Smooth radial bump of radius `radius` centred at the origin, on the
/// `m × m` interior grid.
pub fn smooth_disk(m: usize, radius: f64) -> Vec<f64> {
    let x = |k: usize| -1.0 + 2.0 * k as f64 / m as f64;
    (0..m * m)
        .map(|i| {
            let r = (x(i % m).powi(2) + x(i / m).powi(2)).sqrt() / radius;
            if r < 1.0 {
                (1.0 - 1.0 / (1.0 - r * r)).exp()
            } else {
                0.0
            }
        })
        .collect()
}

/// Centred Gaussian `exp(-r²/2σ²)` on the `m × m` interior grid.
pub fn gaussian(m: usize, sigma: f64) -> Vec<f64> {
    let x = |k: usize| -1.0 + 2.0 * k as f64 / m as f64;
    (0..m * m)
        .map(|i| (-(x(i % m).powi(2) + x(i / m).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Random smooth-ish interior field and heterogeneous squared speed.
pub fn random_inputs(grid: &SimGrid, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let m = grid.m();
    let bump = smooth_disk(m, 0.6);
    let f: Vec<f64> = bump.iter().map(|b| b * r.random_range(0.2..1.0)).collect();
    let interior: Vec<f64> = bump.iter().map(|b| 0.7 + 0.3 * b * r.random_range(0.0..1.0)).collect();
    (f, grid.embed(&interior, 0.7))
}

/// `|⟨J u, v⟩ − ⟨u, Jᵀ v⟩| / |⟨J u, v⟩|` for random `u = (δf, δΓ)`, `v`.
pub fn dot_product_test(m: usize, seed: u64) -> f64 {
    let grid = SimGrid::new(m, 2).unwrap();
    let cfg = SimConfig::for_grid(&grid, 1.0).unwrap();
    let solver = KSpaceSolver::<f64>::new(grid, cfg).unwrap();
    let (f, speed) = random_inputs(&grid, seed);
    let mut r = rng(seed + 1);
    let n2 = grid.n() * grid.n();
    let df: Vec<f64> = (0..m * m).map(|_| r.random_range(-1.0..1.0)).collect();
    let dg: Vec<f64> = (0..n2).map(|_| r.random_range(-0.1..0.1)).collect();
    let v: Vec<f64> = (0..cfg.n_det * cfg.n_records()).map(|_| r.random_range(-1.0..1.0)).collect();
    let v = BoundaryData::new(cfg.n_det, cfg.n_records(), v).unwrap();
    let ju = tangent_linear(&solver, &f, &speed, &df, &dg);
    let (_, state) = solver.simulate_retained(&f, &speed).unwrap();
    let (gf, gg) = solver.vjp(&state, &v).unwrap();
    let lhs: f64 = ju.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
    let rhs: f64 = df.iter().zip(&gf).map(|(a, b)| a * b).sum::<f64>()
        + dg.iter().zip(&gg).map(|(a, b)| a * b).sum::<f64>();
    (lhs - rhs).abs() / lhs.abs()
}
