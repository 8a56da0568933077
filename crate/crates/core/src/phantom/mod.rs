//! Shepp-Logan-family phantoms on the square `[-1, 1]²`.
//!
//! Grids are node-centred: sample `(row j, column i)` sits at
//! `x_i = -1 + 2i/m`, `y_j = -1 + 2j/m`, stored row-major (`j * m + i`).

mod dataset;
mod io;

pub use dataset::{build_dataset, value_histogram, Dataset, DatasetSizes, Split};
pub use io::{read_split, write_split, SplitHeader, PHANTOM_MAGIC, PHANTOM_VERSION};

use rand::Rng;

use crate::error::{Error, Result};

/// Semi-axes of the ellipse every phantom must be supported in.
pub const SUPPORT_SEMI_X: f64 = 0.69;
pub const SUPPORT_SEMI_Y: f64 = 0.92;

/// Default relative perturbation of the six ellipse parameters.
pub const DEFAULT_JITTER: f64 = 0.05;

const CONTAINMENT_TOL: f64 = 1e-12;
const MAX_RESAMPLE: usize = 1000;

/// Position of node `k` on an `m`-point axis over `[-1, 1)`.
pub fn grid_coord(k: usize, m: usize) -> f64 {
    -1.0 + 2.0 * k as f64 / m as f64
}

/// `x²/0.69² + y²/0.92²`; at most one inside the support ellipse.
pub fn support_level(x: f64, y: f64) -> f64 {
    (x / SUPPORT_SEMI_X).powi(2) + (y / SUPPORT_SEMI_Y).powi(2)
}

pub fn in_support(x: f64, y: f64) -> bool {
    support_level(x, y) <= 1.0 + CONTAINMENT_TOL
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    /// Semi-axis along the ellipse's own x direction (before rotation).
    pub semi_x: f64,
    /// Semi-axis along the ellipse's own y direction.
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Counter-clockwise rotation in radians.
    pub angle: f64,
    /// Additive intensity contributed to every covered grid point.
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center_x, y - self.center_y);
        let u = (dx * c + dy * s) / self.semi_x;
        let v = (-dx * s + dy * c) / self.semi_y;
        u * u + v * v <= 1.0
    }

    /// Point on the boundary at parameter `t`.
    pub fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (self.semi_x * t.cos(), self.semi_y * t.sin());
        (self.center_x + a * c - b * s, self.center_y + a * s + b * c)
    }

    /// Largest support level reached on the boundary.
    ///
    /// Dense sampling followed by golden-section refinement around the best
    /// sample.
    pub fn max_support_level(&self) -> f64 {
        const SAMPLES: usize = 2048;
        let level = |t: f64| {
            let (x, y) = self.boundary_point(t);
            support_level(x, y)
        };
        let dt = std::f64::consts::TAU / SAMPLES as f64;
        let (best_t, mut best) = (0..SAMPLES)
            .map(|k| {
                let t = k as f64 * dt;
                (t, level(t))
            })
            .fold((0.0, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
        let (mut lo, mut hi) = (best_t - dt, best_t + dt);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let t1 = hi - phi * (hi - lo);
            let t2 = lo + phi * (hi - lo);
            if level(t1) > level(t2) {
                hi = t2;
            } else {
                lo = t1;
            }
        }
        best = best.max(level(0.5 * (lo + hi)));
        best
    }

    pub fn fits_support(&self) -> bool {
        self.semi_x > 0.0 && self.semi_y > 0.0 && self.max_support_level() <= 1.0 + CONTAINMENT_TOL
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !(self.semi_x > 0.0 && self.semi_y > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ellipse {index} has non-positive semi-axes ({}, {})",
                self.semi_x, self.semi_y
            )));
        }
        if !self.fits_support() {
            return Err(Error::SupportViolation { index });
        }
        Ok(())
    }

    /// The same ellipse rotated by `theta` about the origin.
    pub fn rotated(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            center_x: self.center_x * c - self.center_y * s,
            center_y: self.center_x * s + self.center_y * c,
            angle: self.angle + theta,
            ..*self
        }
    }
}

/// The modified (high-contrast) Shepp-Logan table, whose values fall in
/// `[0, 1]`.
pub fn shepp_logan() -> [Ellipse; 10] {
    const TABLE: [[f64; 6]; 10] = [
        // semi_x, semi_y, cx, cy, angle (deg), intensity
        [0.69, 0.92, 0.0, 0.0, 0.0, 1.0],
        [0.6624, 0.8740, 0.0, -0.0184, 0.0, -0.8],
        [0.1100, 0.3100, 0.22, 0.0, -18.0, -0.2],
        [0.1600, 0.4100, -0.22, 0.0, 18.0, -0.2],
        [0.2100, 0.2500, 0.0, 0.35, 0.0, 0.1],
        [0.0460, 0.0460, 0.0, 0.1, 0.0, 0.1],
        [0.0460, 0.0460, 0.0, -0.1, 0.0, 0.1],
        [0.0460, 0.0230, -0.08, -0.605, 0.0, 0.1],
        [0.0230, 0.0230, 0.0, -0.606, 0.0, 0.1],
        [0.0230, 0.0460, 0.06, -0.605, 0.0, 0.1],
    ];
    TABLE.map(|[a, b, x, y, deg, v]| Ellipse {
        semi_x: a,
        semi_y: b,
        center_x: x,
        center_y: y,
        angle: deg.to_radians(),
        intensity: v,
    })
}

/// Initial-pressure image on the node grid of `[-1, 1]²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    m: usize,
    values: Vec<f32>,
}

impl Phantom {
    pub fn new(m: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != m * m {
            return Err(Error::shape("phantom", format!("{} values for m = {m}", values.len())));
        }
        Ok(Self { m, values })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            values: vec![0.0; m * m],
        }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.m + col]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn to_vec<T: crate::Real>(&self) -> Vec<T> {
        self.values.iter().map(|&v| T::lit(v as f64)).collect()
    }

    /// Checks the range and support invariants.
    pub fn satisfies_invariants(&self) -> bool {
        (0..self.m).all(|j| {
            (0..self.m).all(|i| {
                let v = self.get(j, i);
                (0.0..=1.0).contains(&v)
                    && (v == 0.0 || in_support(grid_coord(i, self.m), grid_coord(j, self.m)))
            })
        })
    }
}

fn validate_grid(m: usize) -> Result<()> {
    if m < 8 {
        return Err(Error::InvalidArgument(format!("grid size {m} is below the minimum of 8")));
    }
    Ok(())
}

/// Unclamped sum of intensities of all ellipses covering each node.
pub fn rasterize_raw(ellipses: &[Ellipse], m: usize) -> Result<Vec<f64>> {
    validate_grid(m)?;
    for (i, e) in ellipses.iter().enumerate() {
        e.validate(i)?;
    }
    let mut out = vec![0.0; m * m];
    for e in ellipses {
        // bounding box of the rotated ellipse
        let (s, c) = e.angle.sin_cos();
        let hx = ((e.semi_x * c).powi(2) + (e.semi_y * s).powi(2)).sqrt();
        let hy = ((e.semi_x * s).powi(2) + (e.semi_y * c).powi(2)).sqrt();
        let to_index = |v: f64| ((v + 1.0) * m as f64 / 2.0).floor();
        let i0 = to_index(e.center_x - hx).max(0.0) as usize;
        let i1 = (to_index(e.center_x + hx) as usize + 1).min(m - 1);
        let j0 = to_index(e.center_y - hy).max(0.0) as usize;
        let j1 = (to_index(e.center_y + hy) as usize + 1).min(m - 1);
        for j in j0..=j1 {
            let y = grid_coord(j, m);
            for i in i0..=i1 {
                if e.contains(grid_coord(i, m), y) {
                    out[j * m + i] += e.intensity;
                }
            }
        }
    }
    Ok(out)
}

/// Rasterises an ellipse list: intensities add, then clamp to `[0, 1]`.
pub fn rasterize(ellipses: &[Ellipse], m: usize) -> Result<Phantom> {
    let raw = rasterize_raw(ellipses, m)?;
    Ok(Phantom {
        m,
        values: raw.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    })
}

fn perturb(rng: &mut impl Rng, value: f64, jitter: f64) -> f64 {
    if jitter == 0.0 {
        value
    } else {
        value * (1.0 + rng.random_range(-jitter..=jitter))
    }
}

/// Draws a phantom by scaling each of the six parameters of every
/// Shepp-Logan ellipse by `1 + u`, `u ~ U[-jitter, jitter]`; an ellipse is
/// redrawn until it lies inside the support ellipse.
pub fn sample_phantom(rng: &mut impl Rng, jitter: f64) -> Result<Vec<Ellipse>> {
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::InvalidArgument(format!("jitter must be ≥ 0, got {jitter}")));
    }
    shepp_logan()
        .iter()
        .map(|base| {
            for _ in 0..MAX_RESAMPLE {
                let e = Ellipse {
                    semi_x: perturb(rng, base.semi_x, jitter),
                    semi_y: perturb(rng, base.semi_y, jitter),
                    center_x: perturb(rng, base.center_x, jitter),
                    center_y: perturb(rng, base.center_y, jitter),
                    angle: perturb(rng, base.angle, jitter),
                    intensity: perturb(rng, base.intensity, jitter),
                };
                if e.fits_support() {
                    return Ok(e);
                }
            }
            Err(Error::SamplingExhausted {
                attempts: MAX_RESAMPLE,
            })
        })
        .collect()
}
