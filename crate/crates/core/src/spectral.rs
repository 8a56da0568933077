//! Planned 2-D complex FFTs over row-major buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

/// Unnormalised forward/inverse 2-D DFT for a fixed `rows × cols` shape.
///
/// The forward transform uses `exp(-2πi·(jk/N))`; `inverse` applies the
/// conjugate kernel without the `1/(rows·cols)` factor.
#[derive(Clone)]
pub struct Fft2<T: Real> {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn forward(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>) {
        self.run(buf, scratch, false);
    }

    pub fn inverse(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>) {
        self.run(buf, scratch, true);
    }

    /// Forward transform that leaves the spectrum transposed (`cols × rows`).
    ///
    /// Paired with [`Fft2::inverse_from_transposed`] this skips two
    /// transposes when the spectral multiplier is symmetric in its axes.
    pub fn forward_to_transposed(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>) {
        self.row_fwd.process(buf);
        transpose_into(buf, scratch, self.rows, self.cols);
        self.col_fwd.process(scratch);
        buf.copy_from_slice(scratch);
    }

    pub fn inverse_from_transposed(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>) {
        self.col_inv.process(buf);
        transpose_into(buf, scratch, self.cols, self.rows);
        self.row_inv.process(scratch);
        buf.copy_from_slice(scratch);
    }

    fn run(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>, inverse: bool) {
        assert_eq!(buf.len(), self.rows * self.cols, "fft2 buffer size");
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        transpose_into(buf, scratch, self.rows, self.cols);
        col.process(scratch);
        transpose_to_slice(scratch, buf, self.cols, self.rows);
    }
}

fn transpose_into<T: Copy + Default>(src: &[T], dst: &mut Vec<T>, rows: usize, cols: usize) {
    dst.clear();
    dst.resize(src.len(), T::default());
    transpose_to_slice(src, dst, rows, cols);
}

/// Writes the transpose of the `rows × cols` matrix `src` into `dst`.
fn transpose_to_slice<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
