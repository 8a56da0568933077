use rustfft::num_complex::Complex;

use super::{BoundaryData, SimConfig, SimGrid};
use crate::diff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::Fft2;

type C<T> = Complex<T>;

fn check_field<T: Real>(name: &'static str, values: &[T], len: usize) -> Result<()> {
    if values.len() != len {
        return Err(Error::shape(name, format!("expected {len} values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    Ok(())
}

/// `4 sin²(dt|k|/2)` scaled by the inverse-FFT normalisation.
fn symbol<T: Real>(grid: &SimGrid, dt: f64) -> Vec<T> {
    let norm = (grid.n() * grid.n()) as f64;
    grid.wavenumber_magnitudes()
        .into_iter()
        .map(|k| {
            let s = (0.5 * dt * k).sin();
            T::lit(4.0 * s * s / norm)
        })
        .collect()
}

/// Largest squared speed for which the leapfrog update stays bounded:
/// `Γ · 4 sin²(dt|k|/2) < 4` at every resolved wavenumber.
fn stability_bound(grid: &SimGrid, dt: f64) -> f64 {
    let peak = grid
        .wavenumber_magnitudes()
        .into_iter()
        .map(|k| (0.5 * dt * k).sin().powi(2))
        .fold(0.0, f64::max);
    1.0 / peak
}

fn apply_symbol<T: Real>(fft: &Fft2<T>, symbol: &[T], buf: &mut [C<T>], scratch: &mut Vec<C<T>>) {
    fft.forward_to_transposed(buf, scratch);
    for (z, &s) in buf.iter_mut().zip(symbol) {
        *z = *z * s;
    }
    fft.inverse_from_transposed(buf, scratch);
}

fn operator<T: Real>(grid: &SimGrid, p: &[T], dt: f64) -> Vec<T> {
    let n = grid.n();
    let fft = Fft2::new(n, n);
    let mut buf: Vec<C<T>> = p.iter().map(|&x| C::new(x, T::zero())).collect();
    apply_symbol(&fft, &symbol(grid, dt), &mut buf, &mut Vec::new());
    buf.into_iter().map(|z| z.re).collect()
}

/// One leapfrog step `2p − p_prev − Γ·A p` on the padded grid.
pub fn step<T: Real>(grid: &SimGrid, p_prev: &[T], p_curr: &[T], speed_sq: &[T], dt: f64) -> Result<Vec<T>> {
    let len = grid.n() * grid.n();
    check_field("p_prev", p_prev, len)?;
    check_field("p_curr", p_curr, len)?;
    check_field("speed_sq", speed_sq, len)?;
    let ap = operator(grid, p_curr, dt);
    let two = T::lit(2.0);
    Ok((0..len)
        .map(|i| two * p_curr[i] - p_prev[i] - speed_sq[i] * ap[i])
        .collect())
}

/// Start-up step from rest, `p(dt) = f − ½Γ·A f`.
pub fn first_step<T: Real>(grid: &SimGrid, f: &[T], speed_sq: &[T], dt: f64) -> Result<Vec<T>> {
    let len = grid.n() * grid.n();
    check_field("f", f, len)?;
    check_field("speed_sq", speed_sq, len)?;
    let ap = operator(grid, f, dt);
    let half = T::lit(0.5);
    Ok((0..len).map(|i| f[i] - half * speed_sq[i] * ap[i]).collect())
}

#[derive(Clone, Debug)]
struct Stencil<T> {
    idx: [usize; 4],
    w: [T; 4],
}

/// Saved forward quantities needed by [`KSpaceSolver::vjp`].
///
/// Up to two independent simulations share one complex field (real and
/// imaginary lanes), halving the FFT count for batched work.
#[derive(Clone, Debug)]
pub struct ForwardState<T: Real> {
    lanes: usize,
    speed: [Vec<T>; 2],
    applied: Vec<Vec<C<T>>>,
}

impl<T: Real> ForwardState<T> {
    pub fn lanes(&self) -> usize {
        self.lanes
    }

    /// Number of stored operator applications.
    pub fn len(&self) -> usize {
        self.applied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.applied.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.applied.iter().map(|a| a.len()).sum::<usize>() * std::mem::size_of::<C<T>>()
    }

    /// Drops the stored fields; a later `vjp` reports the missing buffer.
    pub fn release(&mut self) {
        self.applied = Vec::new();
    }
}

/// Forward operator `f, Γ ↦ W_Γ(f)` with a fixed grid and schedule.
#[derive(Clone)]
pub struct KSpaceSolver<T: Real> {
    grid: SimGrid,
    config: SimConfig,
    fft: Fft2<T>,
    symbol: Vec<T>,
    speed_bound: f64,
    stencils: Vec<Stencil<T>>,
}

impl<T: Real> std::fmt::Debug for KSpaceSolver<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KSpaceSolver")
            .field("grid", &self.grid)
            .field("config", &self.config)
            .finish()
    }
}

impl<T: Real> KSpaceSolver<T> {
    pub fn new(grid: SimGrid, config: SimConfig) -> Result<Self> {
        config.validate(&grid)?;
        let n = grid.n();
        let h = grid.spacing();
        let half = 0.5 * grid.length();
        let mut stencils = Vec::with_capacity(config.n_det);
        for d in 0..config.n_det {
            let theta = std::f64::consts::TAU * d as f64 / config.n_det as f64;
            let col = (theta.cos() + half) / h;
            let row = (theta.sin() + half) / h;
            let (c0, r0) = (col.floor(), row.floor());
            let (fx, fy) = (col - c0, row - r0);
            let (c0, r0) = (c0 as usize, r0 as usize);
            if c0 + 1 >= n || r0 + 1 >= n {
                return Err(Error::InvalidArgument("detector circle leaves the grid".into()));
            }
            stencils.push(Stencil {
                idx: [r0 * n + c0, r0 * n + c0 + 1, (r0 + 1) * n + c0, (r0 + 1) * n + c0 + 1],
                w: [
                    T::lit((1.0 - fx) * (1.0 - fy)),
                    T::lit(fx * (1.0 - fy)),
                    T::lit((1.0 - fx) * fy),
                    T::lit(fx * fy),
                ],
            });
        }
        Ok(Self {
            grid,
            config,
            fft: Fft2::new(n, n),
            symbol: symbol(&grid, config.dt),
            speed_bound: stability_bound(&grid, config.dt),
            stencils,
        })
    }

    pub fn grid(&self) -> &SimGrid {
        &self.grid
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Squared speeds at or above this value are rejected as unstable.
    pub fn speed_bound(&self) -> f64 {
        self.speed_bound
    }

    /// Position `(x, y)` of detector `d`.
    pub fn detector_position(&self, d: usize) -> (f64, f64) {
        let theta = std::f64::consts::TAU * d as f64 / self.config.n_det as f64;
        (theta.cos(), theta.sin())
    }

    /// `F⁻¹[4 sin²(dt|k|/2) F p]` for a real padded field.
    pub fn operator(&self, p: &[T]) -> Result<Vec<T>> {
        check_field("p", p, self.grid.n() * self.grid.n())?;
        let mut buf: Vec<C<T>> = p.iter().map(|&x| C::new(x, T::zero())).collect();
        apply_symbol(&self.fft, &self.symbol, &mut buf, &mut Vec::new());
        Ok(buf.into_iter().map(|z| z.re).collect())
    }

    /// Samples a padded real field at the detectors.
    pub fn sample(&self, p: &[T]) -> Vec<T> {
        self.stencils
            .iter()
            .map(|s| (0..4).map(|k| s.w[k] * p[s.idx[k]]).sum())
            .collect()
    }

    /// Boundary record of the interior initial pressure `f` (`m × m`)
    /// propagated through the squared-speed field `speed_sq` (`n × n`).
    pub fn simulate(&self, f: &[T], speed_sq: &[T]) -> Result<BoundaryData<T>> {
        let [a, _] = self.run([f, f], [speed_sq, speed_sq], 1, false)?.0;
        Ok(a)
    }

    /// Like [`KSpaceSolver::simulate`], also returning the state needed by
    /// [`KSpaceSolver::vjp`].
    pub fn simulate_retained(&self, f: &[T], speed_sq: &[T]) -> Result<(BoundaryData<T>, ForwardState<T>)> {
        let ([a, _], state) = self.run([f, f], [speed_sq, speed_sq], 1, true)?;
        Ok((a, state.expect("retained")))
    }

    /// Two independent simulations sharing each FFT.
    pub fn simulate_pair(&self, f: [&[T]; 2], speed_sq: [&[T]; 2]) -> Result<[BoundaryData<T>; 2]> {
        Ok(self.run(f, speed_sq, 2, false)?.0)
    }

    pub fn simulate_pair_retained(
        &self,
        f: [&[T]; 2],
        speed_sq: [&[T]; 2],
    ) -> Result<([BoundaryData<T>; 2], ForwardState<T>)> {
        let (data, state) = self.run(f, speed_sq, 2, true)?;
        Ok((data, state.expect("retained")))
    }

    /// Vector-Jacobian product of a retained single simulation: returns
    /// `(∂/∂f, ∂/∂Γ)` of `⟨W_Γ(f), cotangent⟩`.
    pub fn vjp(&self, state: &ForwardState<T>, cotangent: &BoundaryData<T>) -> Result<(Vec<T>, Vec<T>)> {
        if state.lanes != 1 {
            return Err(Error::InvalidArgument("paired state needs vjp_pair".into()));
        }
        let [a, _] = self.reverse(state, [cotangent, cotangent])?;
        Ok(a)
    }

    pub fn vjp_pair(
        &self,
        state: &ForwardState<T>,
        cotangent: [&BoundaryData<T>; 2],
    ) -> Result<[(Vec<T>, Vec<T>); 2]> {
        if state.lanes != 2 {
            return Err(Error::InvalidArgument("single state needs vjp".into()));
        }
        self.reverse(state, cotangent)
    }

    fn last_step(&self) -> usize {
        (self.config.n_records() - 1) * self.config.record_stride
    }

    fn check_inputs(&self, f: &[T], speed_sq: &[T]) -> Result<()> {
        let (m, n) = (self.grid.m(), self.grid.n());
        check_field("initial pressure", f, m * m)?;
        check_field("speed field", speed_sq, n * n)?;
        let peak = speed_sq.iter().copied().fold(T::zero(), T::max).as_f64();
        if peak >= self.speed_bound {
            return Err(Error::Unstable {
                peak,
                bound: self.speed_bound,
            });
        }
        Ok(())
    }

    fn run(
        &self,
        f: [&[T]; 2],
        speed: [&[T]; 2],
        lanes: usize,
        retain: bool,
    ) -> Result<([BoundaryData<T>; 2], Option<ForwardState<T>>)> {
        for lane in 0..2 {
            self.check_inputs(f[lane], speed[lane])?;
        }
        let n2 = self.grid.n() * self.grid.n();
        let n_time = self.config.n_records();
        let n_det = self.config.n_det;
        let stride = self.config.record_stride;
        let last = self.last_step();
        let mut out = [vec![T::zero(); n_det * n_time], vec![T::zero(); n_det * n_time]];
        let record = |out: &mut [Vec<T>; 2], j: usize, p: &[C<T>]| {
            for (d, s) in self.stencils.iter().enumerate() {
                let mut z = C::new(T::zero(), T::zero());
                for k in 0..4 {
                    z = z + p[s.idx[k]] * s.w[k];
                }
                out[0][d * n_time + j] = z.re;
                out[1][d * n_time + j] = z.im;
            }
        };
        let (ea, eb) = (self.grid.embed(f[0], T::zero()), self.grid.embed(f[1], T::zero()));
        let mut prev: Vec<C<T>> = ea.into_iter().zip(eb).map(|(a, b)| C::new(a, b)).collect();
        let mut curr = vec![C::new(T::zero(), T::zero()); n2];
        let mut ap = vec![C::new(T::zero(), T::zero()); n2];
        let mut scratch = Vec::with_capacity(n2);
        let mut applied = Vec::new();
        let (ga, gb) = (speed[0], speed[1]);
        let (half, two) = (T::lit(0.5), T::lit(2.0));

        record(&mut out, 0, &prev);
        if last > 0 {
            ap.copy_from_slice(&prev);
            apply_symbol(&self.fft, &self.symbol, &mut ap, &mut scratch);
            for i in 0..n2 {
                let z = ap[i];
                curr[i] = prev[i] - C::new(ga[i] * z.re, gb[i] * z.im) * half;
            }
            if retain {
                applied.push(ap.clone());
            }
            for step in 1..=last {
                if step % stride == 0 {
                    record(&mut out, step / stride, &curr);
                }
                if step == last {
                    break;
                }
                ap.copy_from_slice(&curr);
                apply_symbol(&self.fft, &self.symbol, &mut ap, &mut scratch);
                for i in 0..n2 {
                    let z = ap[i];
                    prev[i] = curr[i] * two - prev[i] - C::new(ga[i] * z.re, gb[i] * z.im);
                }
                std::mem::swap(&mut prev, &mut curr);
                if retain {
                    applied.push(ap.clone());
                }
            }
        }
        let [oa, ob] = out;
        let data = [
            BoundaryData::new(n_det, n_time, oa)?,
            BoundaryData::new(n_det, n_time, ob)?,
        ];
        let state = retain.then(|| ForwardState {
            lanes,
            speed: [ga.to_vec(), gb.to_vec()],
            applied,
        });
        Ok((data, state))
    }

    fn reverse(&self, state: &ForwardState<T>, cot: [&BoundaryData<T>; 2]) -> Result<[(Vec<T>, Vec<T>); 2]> {
        let n2 = self.grid.n() * self.grid.n();
        let last = self.last_step();
        if state.applied.len() != last || state.applied.iter().any(|a| a.len() != n2) {
            return Err(Error::MissingState(format!(
                "expected {last} retained steps of {n2} values, found {}",
                state.applied.len()
            )));
        }
        let n_det = self.config.n_det;
        let n_time = self.config.n_records();
        for c in cot {
            if c.n_det() != n_det || c.n_time() != n_time {
                return Err(Error::shape(
                    "cotangent",
                    format!("{} × {} vs {n_det} × {n_time}", c.n_det(), c.n_time()),
                ));
            }
        }
        let stride = self.config.record_stride;
        let inject = |buf: &mut [C<T>], step: usize| {
            if step % stride != 0 {
                return;
            }
            let j = step / stride;
            for (d, s) in self.stencils.iter().enumerate() {
                let v = C::new(cot[0].get(d, j), cot[1].get(d, j));
                for k in 0..4 {
                    buf[s.idx[k]] = buf[s.idx[k]] + v * s.w[k];
                }
            }
        };
        let [ga, gb] = &state.speed;
        let zero = C::new(T::zero(), T::zero());
        let mut hi = vec![zero; n2];
        let mut hi2 = vec![zero; n2];
        let mut tmp = vec![zero; n2];
        let mut scratch = Vec::with_capacity(n2);
        let mut grad_a = vec![T::zero(); n2];
        let mut grad_b = vec![T::zero(); n2];
        let (half, two) = (T::lit(0.5), T::lit(2.0));
        inject(&mut hi, last);
        for step in (0..last).rev() {
            let (coef, carry) = if step == 0 { (half, T::one()) } else { (T::one(), two) };
            let ap = &state.applied[step];
            for i in 0..n2 {
                let (a, z) = (hi[i], ap[i]);
                grad_a[i] = grad_a[i] - coef * a.re * z.re;
                grad_b[i] = grad_b[i] - coef * a.im * z.im;
                tmp[i] = C::new(ga[i] * a.re, gb[i] * a.im);
            }
            apply_symbol(&self.fft, &self.symbol, &mut tmp, &mut scratch);
            for i in 0..n2 {
                hi2[i] = hi[i] * carry - tmp[i] * coef - hi2[i];
            }
            inject(&mut hi2, step);
            std::mem::swap(&mut hi, &mut hi2);
        }
        let re: Vec<T> = hi.iter().map(|z| z.re).collect();
        let im: Vec<T> = hi.iter().map(|z| z.im).collect();
        Ok([
            (self.grid.crop(&re), grad_a),
            (self.grid.crop(&im), grad_b),
        ])
    }

    /// Records `W_Γ(f)` on a tape: `f` is `[m, m]`, `speed_sq` is `[n, n]`,
    /// the result is `[n_det, n_time]`.
    pub fn simulate_on<'a>(&'a self, g: &mut Graph<'a, T>, f: Var, speed_sq: Var) -> Result<Var> {
        let (data, state) = self.simulate_retained(g.value(f), g.value(speed_sq))?;
        let shape = vec![data.n_det(), data.n_time()];
        let (n_det, n_time) = (data.n_det(), data.n_time());
        g.custom(&[f, speed_sq], shape, data.into_values(), move |cot| {
            let cot = BoundaryData::new(n_det, n_time, cot.to_vec()).expect("cotangent shape");
            let (gf, gs) = self.vjp(&state, &cot).expect("retained state");
            vec![gf, gs]
        })
    }

    /// Two simulations on a tape sharing each FFT.
    pub fn simulate_pair_on<'a>(&'a self, g: &mut Graph<'a, T>, f: [Var; 2], speed_sq: [Var; 2]) -> Result<[Var; 2]> {
        let (data, state) = self.simulate_pair_retained(
            [g.value(f[0]), g.value(f[1])],
            [g.value(speed_sq[0]), g.value(speed_sq[1])],
        )?;
        let (n_det, n_time) = (data[0].n_det(), data[0].n_time());
        let len = n_det * n_time;
        let [a, b] = data;
        let mut values = a.into_values();
        values.extend(b.into_values());
        let both = g.custom(&[f[0], f[1], speed_sq[0], speed_sq[1]], vec![2 * len], values, move |cot| {
            let ca = BoundaryData::new(n_det, n_time, cot[..len].to_vec()).expect("cotangent shape");
            let cb = BoundaryData::new(n_det, n_time, cot[len..].to_vec()).expect("cotangent shape");
            let [(fa, sa), (fb, sb)] = self.vjp_pair(&state, [&ca, &cb]).expect("retained state");
            vec![fa, fb, sa, sb]
        })?;
        let a = g.slice(both, 0, len)?;
        let b = g.slice(both, len, len)?;
        Ok([g.reshape(a, vec![n_det, n_time])?, g.reshape(b, vec![n_det, n_time])?])
    }
}
