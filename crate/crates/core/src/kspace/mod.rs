//! k-space pseudospectral forward operator for
//! `∂²p/∂t² = Γ(f(x)) Δp` with `p(x, 0) = f`, `∂p/∂t(x, 0) = 0`.
//!
//! The field is advanced with
//!
//! ```text
//! p(t + Δt) = 2p(t) − p(t − Δt) − Γ · F⁻¹[ 4 sin²(Δt|k|/2) · F[p(t)] ]
//! ```
//!
//! on a periodic grid padded around `[-1, 1]²`, and sampled on the unit
//! circle by bilinear interpolation. [`KSpaceSolver::vjp`] differentiates the
//! whole record with respect to the initial pressure and the squared-speed
//! field by walking the stored steps backwards.

mod io;
mod solver;

pub use io::{read_boundary, write_boundary, BoundaryHeader, BOUNDARY_MAGIC, BOUNDARY_VERSION};
pub use solver::{first_step, step, ForwardState, KSpaceSolver};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default CFL number relative to the largest wave speed.
pub const DEFAULT_CFL: f64 = 0.3;
/// Default padding factor (computational domain `[-2, 2]²`).
pub const DEFAULT_PAD: usize = 2;
/// Shortest record length: the unit-disk diameter crossed at the slowest
/// reference speed √0.7 takes ≈ 2.39.
pub const MIN_RECORD_TIME: f64 = 2.5;

/// Computational grid: `m × m` interior nodes on `[-1, 1)²` embedded
/// centrally in an `n × n` periodic grid, `n = pad · m`, spacing `h = 2/m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimGrid {
    m: usize,
    pad: usize,
}

impl SimGrid {
    pub fn new(m: usize, pad: usize) -> Result<Self> {
        if m < 2 || pad == 0 {
            return Err(Error::InvalidArgument(format!("invalid grid m = {m}, pad = {pad}")));
        }
        if (pad * m) % 2 != 0 || ((pad - 1) * m) % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "pad · m = {} must be even and the interior must sit on whole nodes",
                pad * m
            )));
        }
        Ok(Self { m, pad })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Computational resolution `pad · m`.
    pub fn n(&self) -> usize {
        self.pad * self.m
    }

    pub fn spacing(&self) -> f64 {
        2.0 / self.m as f64
    }

    /// Side length of the periodic domain.
    pub fn length(&self) -> f64 {
        2.0 * self.pad as f64
    }

    /// Index of interior node 0 inside the padded grid (both axes).
    pub fn offset(&self) -> usize {
        (self.n() - self.m) / 2
    }

    /// Coordinate of padded-grid node `k`.
    pub fn coord(&self, k: usize) -> f64 {
        -0.5 * self.length() + k as f64 * self.spacing()
    }

    /// Wavenumbers `2πj/L` in FFT order, `j = 0..n/2-1, -n/2..-1`.
    pub fn axis_wavenumbers(&self) -> Vec<f64> {
        let n = self.n() as isize;
        let l = self.length();
        (0..n)
            .map(|i| {
                let j = if i < n / 2 { i } else { i - n };
                std::f64::consts::TAU * j as f64 / l
            })
            .collect()
    }

    /// `|k|` on the `n × n` spectral grid (FFT order, row-major).
    pub fn wavenumber_magnitudes(&self) -> Vec<f64> {
        let k = self.axis_wavenumbers();
        k.iter()
            .flat_map(|&ky| k.iter().map(move |&kx| (kx * kx + ky * ky).sqrt()))
            .collect()
    }

    /// Places an `m × m` interior field into an `n × n` field filled with
    /// `fill`.
    pub fn embed<T: Real>(&self, interior: &[T], fill: T) -> Vec<T> {
        let (m, n, o) = (self.m, self.n(), self.offset());
        let mut out = vec![fill; n * n];
        for (r, row) in interior.chunks(m).enumerate() {
            out[(r + o) * n + o..(r + o) * n + o + m].copy_from_slice(row);
        }
        out
    }

    /// Inverse of [`SimGrid::embed`].
    pub fn crop<T: Real>(&self, field: &[T]) -> Vec<T> {
        let (m, n, o) = (self.m, self.n(), self.offset());
        (0..m)
            .flat_map(|r| field[(r + o) * n + o..(r + o) * n + o + m].iter().copied())
            .collect()
    }
}

/// Time stepping and detector layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub record_stride: usize,
    pub n_det: usize,
    pub cfl: f64,
    /// Speed (not squared) the time step was sized for.
    pub c_max: f64,
}

impl SimConfig {
    /// Default schedule: `dt = cfl · h / c_max`, `n_det = m`, and the
    /// smallest stride whose `m` records (the first at `t = 0`) reach
    /// [`MIN_RECORD_TIME`].
    pub fn for_grid(grid: &SimGrid, c_max: f64) -> Result<Self> {
        Self::with_cfl(grid, c_max, DEFAULT_CFL)
    }

    pub fn with_cfl(grid: &SimGrid, c_max: f64, cfl: f64) -> Result<Self> {
        if !(c_max > 0.0 && cfl > 0.0) {
            return Err(Error::InvalidArgument(format!("c_max = {c_max}, cfl = {cfl}")));
        }
        let m = grid.m();
        let dt = cfl * grid.spacing() / c_max;
        let stride = (MIN_RECORD_TIME / ((m - 1) as f64 * dt)).ceil().max(1.0) as usize;
        let cfg = Self {
            dt,
            n_steps: m * stride,
            record_stride: stride,
            n_det: m,
            cfl,
            c_max,
        };
        cfg.validate(grid)?;
        Ok(cfg)
    }

    /// Checks the stability bound and the record layout.
    pub fn validate(&self, grid: &SimGrid) -> Result<()> {
        let limit = self.cfl * grid.spacing() / self.c_max;
        if !(self.dt > 0.0 && self.dt <= limit * (1.0 + 1e-12)) {
            return Err(Error::Cfl {
                dt: self.dt,
                limit,
                cfl: self.cfl,
                c_max: self.c_max,
            });
        }
        if self.record_stride == 0 || self.n_steps == 0 || self.n_steps % self.record_stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} steps cannot be split into records of {}",
                self.n_steps, self.record_stride
            )));
        }
        if self.n_det == 0 {
            return Err(Error::InvalidArgument("no detectors".into()));
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.n_steps / self.record_stride
    }

    /// Time of the last record.
    pub fn final_time(&self) -> f64 {
        self.record_time(self.n_records() - 1)
    }

    /// Time of record `j`: `j · record_stride · dt`.
    pub fn record_time(&self, j: usize) -> f64 {
        (j * self.record_stride) as f64 * self.dt
    }
}

/// Squared sound speed `Γ(f(x))` over the padded grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedField<T> {
    values: Vec<T>,
}

impl<T: Real> SpeedField<T> {
    pub fn uniform(grid: &SimGrid, value: T) -> Self {
        Self {
            values: vec![value; grid.n() * grid.n()],
        }
    }

    /// Interior values placed in an ambient background.
    pub fn from_interior(grid: &SimGrid, interior: &[T], ambient: T) -> Self {
        Self {
            values: grid.embed(interior, ambient),
        }
    }

    pub fn from_values(grid: &SimGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n() * grid.n() {
            return Err(Error::shape("speed field", format!("{} values", values.len())));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Detector-by-time pressure record, row-major `[n_det][n_time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData<T> {
    n_det: usize,
    n_time: usize,
    values: Vec<T>,
}

impl<T: Real> BoundaryData<T> {
    pub fn new(n_det: usize, n_time: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n_det * n_time {
            return Err(Error::shape(
                "boundary data",
                format!("{} values for {n_det} × {n_time}", values.len()),
            ));
        }
        Ok(Self {
            n_det,
            n_time,
            values,
        })
    }

    pub fn zeros(n_det: usize, n_time: usize) -> Self {
        Self {
            n_det,
            n_time,
            values: vec![T::zero(); n_det * n_time],
        }
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, det: usize, time: usize) -> T {
        self.values[det * self.n_time + time]
    }

    pub fn row(&self, det: usize) -> &[T] {
        &self.values[det * self.n_time..(det + 1) * self.n_time]
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn cast<U: Real>(&self) -> BoundaryData<U> {
        BoundaryData {
            n_det: self.n_det,
            n_time: self.n_time,
            values: crate::scalar::cast_slice(&self.values),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn axis_wavenumbers_small_grid() {
        let g = SimGrid::new(4, 1).unwrap();
        let k = g.axis_wavenumbers();
        let expected = [0.0, PI, -2.0 * PI, -PI];
        for (a, b) in k.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn magnitudes_zero_at_origin_and_symmetric() {
        let g = SimGrid::new(8, 2).unwrap();
        let n = g.n();
        let k = g.wavenumber_magnitudes();
        assert_eq!(k[0], 0.0);
        for r in 0..n {
            for c in 0..n {
                let (nr, nc) = ((n - r) % n, (n - c) % n);
                assert_eq!(k[r * n + c], k[nr * n + nc]);
                assert_eq!(k[r * n + c], k[c * n + r]);
            }
        }
    }

    #[test]
    fn interior_nodes_line_up_with_phantom_grid() {
        let g = SimGrid::new(16, 2).unwrap();
        for i in 0..16 {
            let x = g.coord(i + g.offset());
            assert!((x - crate::phantom::grid_coord(i, 16)).abs() < 1e-14);
        }
        let interior: Vec<f64> = (0..256).map(|i| i as f64).collect();
        assert_eq!(g.crop(&g.embed(&interior, -1.0)), interior);
    }

    #[test]
    fn default_schedule() {
        let g = SimGrid::new(32, 2).unwrap();
        let cfg = SimConfig::for_grid(&g, 1.0).unwrap();
        assert!((cfg.dt - 0.3 * 0.0625).abs() < 1e-15);
        assert_eq!(cfg.n_records(), 32);
        assert_eq!(cfg.n_steps, 32 * cfg.record_stride);
        assert!(cfg.final_time() >= MIN_RECORD_TIME);
        assert!(((cfg.record_stride - 1) * 31) as f64 * cfg.dt < MIN_RECORD_TIME);
        assert_eq!(cfg.n_det, 32);
    }

    #[test]
    fn rejects_unstable_time_step() {
        let g = SimGrid::new(16, 2).unwrap();
        let mut cfg = SimConfig::for_grid(&g, 1.0).unwrap();
        cfg.dt *= 1.5;
        assert!(matches!(cfg.validate(&g), Err(Error::Cfl { .. })));
        assert!(SimGrid::new(5, 2).is_err());
    }
}
