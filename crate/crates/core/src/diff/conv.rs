//! Image kernels behind the convolution-family tape primitives.
//!
//! Feature maps are `[channels, height, width]`, row-major.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// Unrolls receptive fields into a `(c_in·kh·kw) × (out_h·out_w)` matrix.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut cols = vec![T::zero(); g.patch() * oh * ow];
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut x = vec![T::zero(); g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            x[base + ix as usize] = x[base + ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Convolution forward; returns `(output, unrolled input)`.
pub fn conv2d_forward<T: Real>(
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    g: &ConvGeometry,
) -> (Vec<T>, Vec<T>) {
    let spatial = g.out_h() * g.out_w();
    let cols = im2col(x, g);
    let mut out = vec![T::zero(); g.c_out * spatial];
    if let Some(b) = bias {
        for (o, chunk) in out.chunks_mut(spatial).enumerate() {
            chunk.fill(b[o]);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        g.c_out,
        g.patch(),
        spatial,
        T::one(),
        kernel,
        false,
        &cols,
        false,
        beta,
        &mut out,
    );
    (out, cols)
}

/// Returns `(d_input, d_kernel, d_bias)` given the upstream gradient.
pub fn conv2d_backward<T: Real>(
    grad_out: &[T],
    kernel: &[T],
    cols: &[T],
    g: &ConvGeometry,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let spatial = g.out_h() * g.out_w();
    let mut d_kernel = vec![T::zero(); g.c_out * g.patch()];
    T::gemm(
        g.c_out,
        spatial,
        g.patch(),
        T::one(),
        grad_out,
        false,
        cols,
        true,
        T::zero(),
        &mut d_kernel,
    );
    let d_bias = grad_out
        .chunks(spatial)
        .map(|c| c.iter().copied().sum())
        .collect();
    let d_input = need_input.then(|| {
        let mut d_cols = vec![T::zero(); g.patch() * spatial];
        T::gemm(
            g.patch(),
            g.c_out,
            spatial,
            T::one(),
            kernel,
            true,
            grad_out,
            false,
            T::zero(),
            &mut d_cols,
        );
        col2im(&d_cols, g)
    });
    (d_input, d_kernel, d_bias)
}

/// 2×2 stride-2 transposed convolution. `kernel` is `[c_in, c_out, 2, 2]`.
pub fn upconv2_forward<T: Real>(
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let hw = h * w;
    let mut taps = vec![T::zero(); c_out * 4 * hw];
    T::gemm(c_out * 4, c_in, hw, T::one(), kernel, true, x, false, T::zero(), &mut taps);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c_out * oh * ow];
    for o in 0..c_out {
        let b = bias.map_or(T::zero(), |b| b[o]);
        for a in 0..2 {
            for bb in 0..2 {
                let tap = &taps[(o * 4 + a * 2 + bb) * hw..][..hw];
                for i in 0..h {
                    for j in 0..w {
                        out[(o * oh + 2 * i + a) * ow + 2 * j + bb] = tap[i * w + j] + b;
                    }
                }
            }
        }
    }
    out
}

pub fn upconv2_backward<T: Real>(
    grad_out: &[T],
    x: &[T],
    kernel: &[T],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut d_taps = vec![T::zero(); c_out * 4 * hw];
    let mut d_bias = vec![T::zero(); c_out];
    for o in 0..c_out {
        for a in 0..2 {
            for bb in 0..2 {
                let tap = &mut d_taps[(o * 4 + a * 2 + bb) * hw..][..hw];
                for i in 0..h {
                    for j in 0..w {
                        let gval = grad_out[(o * oh + 2 * i + a) * ow + 2 * j + bb];
                        tap[i * w + j] = gval;
                        d_bias[o] = d_bias[o] + gval;
                    }
                }
            }
        }
    }
    let mut d_kernel = vec![T::zero(); c_in * c_out * 4];
    T::gemm(c_in, hw, c_out * 4, T::one(), x, false, &d_taps, true, T::zero(), &mut d_kernel);
    let d_input = need_input.then(|| {
        let mut dx = vec![T::zero(); c_in * hw];
        T::gemm(c_in, c_out * 4, hw, T::one(), kernel, false, &d_taps, false, T::zero(), &mut dx);
        dx
    });
    (d_input, d_kernel, d_bias)
}

/// 2×2 max pooling; returns the pooled map and the flat argmax per output.
pub fn max_pool2_forward<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = (ch * h + 2 * i) * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
