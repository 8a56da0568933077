//! Define-by-run reverse-mode tape.
//!
//! A [`Graph`] records every primitive applied during one forward pass.
//! Nodes only ever reference earlier nodes, so reverse index order is a valid
//! topological order for [`Graph::backward`].

use std::borrow::Cow;

use rustfft::num_complex::Complex;

use super::conv::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::Fft2;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

type Backward<'a, T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>> + 'a>;

enum Op<'a, T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Broadcast(Var),
    Sum(Var),
    Norm2(Var),
    Relu(Var),
    Tanh(Var),
    Clamp01 {
        x: Var,
        straight_through: bool,
    },
    FloorAt(Var, T),
    MatVec {
        w: Var,
        x: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    UpConv2 {
        x: Var,
        k: Var,
        b: Option<Var>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    Slice {
        x: Var,
        start: usize,
    },
    Embed {
        x: Var,
        row0: usize,
        col0: usize,
    },
    PixelUnshuffle(Var),
    PixelShuffle(Var),
    Fft2(Var),
    Ifft2(Var),
    Custom {
        inputs: Vec<Var>,
        backward: Backward<'a, T>,
    },
}

struct Node<'a, T: Real> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<'a, T>,
    tracked: bool,
}

/// One forward pass worth of recorded computation.
pub struct Graph<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `v`; zeros when `v` was unreachable.
    pub fn tensor(&self, graph: &Graph<'_, T>, v: Var) -> Tensor<T> {
        let shape = graph.shape(v).to_vec();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn add_into<T: Real>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + b;
    }
}

fn to_complex<T: Real>(x: &[T]) -> Vec<Complex<T>> {
    x.chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect()
}

fn from_complex<T: Real>(z: &[Complex<T>], scale: T) -> Vec<T> {
    z.iter().flat_map(|c| [c.re * scale, c.im * scale]).collect()
}

fn fft2_values<T: Real>(x: &[T], rows: usize, cols: usize, inverse: bool) -> Vec<T> {
    let plan = Fft2::new(rows, cols);
    let mut buf = to_complex(x);
    let mut scratch = Vec::new();
    if inverse {
        plan.inverse(&mut buf, &mut scratch);
        from_complex(&buf, T::one() / T::lit((rows * cols) as f64))
    } else {
        plan.forward(&mut buf, &mut scratch);
        from_complex(&buf, T::one())
    }
}

impl<'a, T: Real> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [T]>, op: Op<'a, T>, tracked: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "variable {} is not on this graph",
                v.0
            )))
        }
    }

    /// Trainable leaf borrowing its values.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, true)
    }

    /// Trainable leaf owning its values.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, true)
    }

    /// Constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check_var(a)?;
        self.check_var(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op<'a, T>, f: impl Fn(T, T) -> T) -> Var {
        let value: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(self.shape(a).to_vec(), Cow::Owned(value), op, tracked)
    }

    fn map(&mut self, a: Var, op: Op<'a, T>, f: impl Fn(T) -> T) -> Var {
        let value: Vec<T> = self.value(a).iter().map(|&x| f(x)).collect();
        let tracked = self.tracked(a);
        self.push(self.shape(a).to_vec(), Cow::Owned(value), op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: T) -> Var {
        self.map(a, Op::Offset(a), |x| x + c)
    }

    /// Repeats a one-element tensor `len` times.
    pub fn broadcast(&mut self, a: Var, len: usize) -> Result<Var> {
        self.check_var(a)?;
        if self.value(a).len() != 1 {
            return Err(Error::shape(
                "broadcast",
                format!("expected one element, got {:?}", self.shape(a)),
            ));
        }
        let v = self.value(a)[0];
        let tracked = self.tracked(a);
        Ok(self.push(vec![len], Cow::Owned(vec![v; len]), Op::Broadcast(a), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let tracked = self.tracked(a);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(a), tracked)
    }

    /// Euclidean (Frobenius) norm.
    pub fn norm2(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|&x| x * x).sum::<T>().sqrt();
        let tracked = self.tracked(a);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Norm2(a), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    /// Elementwise `min(max(x, 0), 1)`.
    ///
    /// The exact derivative is used: saturated entries receive no gradient.
    /// Entries sitting exactly on 0 or 1 pass their gradient through, so a
    /// network whose output starts at exactly zero can still leave it.
    pub fn clamp01(&mut self, a: Var) -> Var {
        self.clamp01_with(a, false)
    }

    /// [`Graph::clamp01`] with an optional straight-through backward rule.
    pub fn clamp01_with(&mut self, a: Var, straight_through: bool) -> Var {
        self.map(
            a,
            Op::Clamp01 {
                x: a,
                straight_through,
            },
            |x| x.max(T::zero()).min(T::one()),
        )
    }

    /// Elementwise `max(x, floor)`.
    pub fn floor_at(&mut self, a: Var, floor: T) -> Var {
        self.map(a, Op::FloorAt(a, floor), |x| x.max(floor))
    }

    /// `w · x` for `w: [out, in]`, `x: [in]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.check_var(w)?;
        self.check_var(x)?;
        let ws = self.shape(w);
        let n_in = self.value(x).len();
        if ws.len() != 2 || ws[1] != n_in {
            return Err(Error::shape(
                "matvec",
                format!("weights {ws:?} against input of {n_in} values"),
            ));
        }
        let n_out = ws[0];
        let mut y = vec![T::zero(); n_out];
        T::gemm(n_out, n_in, 1, T::one(), self.value(w), false, self.value(x), false, T::zero(), &mut y);
        let tracked = self.tracked(w) || self.tracked(x);
        Ok(self.push(vec![n_out], Cow::Owned(y), Op::MatVec { w, x }, tracked))
    }

    /// Row-batched affine layer: `x: [rows, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(w)?;
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("dense", format!("input {xs:?}, weights {ws:?}")));
        }
        let (rows, n_in, n_out) = (xs[0], xs[1], ws[0]);
        let mut y = vec![T::zero(); rows * n_out];
        if let Some(b) = b {
            self.check_var(b)?;
            if self.value(b).len() != n_out {
                return Err(Error::shape("dense", "bias length"));
            }
            for row in y.chunks_mut(n_out) {
                row.copy_from_slice(self.value(b));
            }
        }
        T::gemm(rows, n_in, n_out, T::one(), self.value(x), false, self.value(w), true, T::one(), &mut y);
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(vec![rows, n_out], Cow::Owned(y), Op::Dense { x, w, b }, tracked))
    }

    /// 2-D convolution, `x: [c_in, h, w]`, `k: [c_out, c_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(k)?;
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[1] || stride == 0 {
            return Err(Error::shape("conv2d", format!("input {xs:?}, kernel {ks:?}")));
        }
        if xs[1] + 2 * pad < ks[2] || xs[2] + 2 * pad < ks[3] {
            return Err(Error::shape("conv2d", "kernel larger than padded input"));
        }
        let geom = ConvGeometry {
            c_in: xs[0],
            h: xs[1],
            w: xs[2],
            c_out: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
        };
        if let Some(b) = b {
            self.check_var(b)?;
            if self.value(b).len() != geom.c_out {
                return Err(Error::shape("conv2d", "bias length"));
            }
        }
        let (y, cols) = conv::conv2d_forward(
            self.value(x),
            self.value(k),
            b.map(|b| self.value(b)),
            &geom,
        );
        let tracked = self.tracked(x) || self.tracked(k) || b.is_some_and(|b| self.tracked(b));
        let shape = vec![geom.c_out, geom.out_h(), geom.out_w()];
        Ok(self.push(shape, Cow::Owned(y), Op::Conv2d { x, k, b, geom, cols }, tracked))
    }

    /// 2×2 stride-2 transposed convolution, `k: [c_in, c_out, 2, 2]`.
    pub fn upconv2(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(k)?;
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 3 || ks.len() != 4 || ks[0] != xs[0] || ks[2] != 2 || ks[3] != 2 {
            return Err(Error::shape("upconv2", format!("input {xs:?}, kernel {ks:?}")));
        }
        let (c_in, h, w, c_out) = (xs[0], xs[1], xs[2], ks[1]);
        if let Some(b) = b {
            self.check_var(b)?;
            if self.value(b).len() != c_out {
                return Err(Error::shape("upconv2", "bias length"));
            }
        }
        let y = conv::upconv2_forward(self.value(x), self.value(k), b.map(|b| self.value(b)), c_in, c_out, h, w);
        let tracked = self.tracked(x) || self.tracked(k) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(vec![c_out, 2 * h, 2 * w], Cow::Owned(y), Op::UpConv2 { x, k, b }, tracked))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let xs = self.shape(x);
        if xs.len() != 3 || xs[1] % 2 != 0 || xs[2] % 2 != 0 {
            return Err(Error::shape("max_pool2", format!("input {xs:?} needs even spatial size")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (y, argmax) = conv::max_pool2_forward(self.value(x), c, h, w);
        let tracked = self.tracked(x);
        Ok(self.push(vec![c, h / 2, w / 2], Cow::Owned(y), Op::MaxPool2 { x, argmax }, tracked))
    }

    /// Concatenates along the leading axis (channels for feature maps).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        for &p in parts {
            self.check_var(p)?;
        }
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape("concat", format!("{s:?} vs trailing {tail:?}")));
            }
            lead += s[0];
        }
        let mut value = Vec::with_capacity(lead * numel(&tail));
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(shape, Cow::Owned(value), Op::Concat(parts.to_vec()), tracked))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.concat(&[a, b])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.check_var(x)?;
        if numel(&shape) != self.value(x).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let value = self.value(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(shape, Cow::Owned(value), Op::Reshape(x), tracked))
    }

    /// Contiguous flat slice `[start, start + len)` returned with shape `[len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check_var(x)?;
        let n = self.value(x).len();
        if start + len > n {
            return Err(Error::shape("slice", format!("[{start}, {}) of {n}", start + len)));
        }
        let value = self.value(x)[start..start + len].to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(vec![len], Cow::Owned(value), Op::Slice { x, start }, tracked))
    }

    /// Places the 2-D `x` at `(row0, col0)` inside a `rows × cols` field
    /// filled with `fill`.
    pub fn embed(&mut self, x: Var, rows: usize, cols: usize, row0: usize, col0: usize, fill: T) -> Result<Var> {
        self.check_var(x)?;
        let xs = self.shape(x);
        if xs.len() != 2 || row0 + xs[0] > rows || col0 + xs[1] > cols {
            return Err(Error::shape("embed", format!("{xs:?} at ({row0},{col0}) in {rows}x{cols}")));
        }
        let (h, w) = (xs[0], xs[1]);
        let mut value = vec![fill; rows * cols];
        for (i, src) in self.value(x).chunks(w).enumerate() {
            let start = (row0 + i) * cols + col0;
            value[start..start + w].copy_from_slice(src);
        }
        debug_assert_eq!(self.value(x).len(), h * w);
        let tracked = self.tracked(x);
        Ok(self.push(vec![rows, cols], Cow::Owned(value), Op::Embed { x, row0, col0 }, tracked))
    }

    /// `[m, m]` → `[4, m/2, m/2]`, sub-images ordered by (row parity, column
    /// parity): (even, even), (even, odd), (odd, even), (odd, odd).
    pub fn pixel_unshuffle(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let xs = self.shape(x);
        if xs.len() != 2 || xs[0] % 2 != 0 || xs[1] % 2 != 0 {
            return Err(Error::shape("pixel_unshuffle", format!("{xs:?} needs even sides")));
        }
        let (h, w) = (xs[0], xs[1]);
        let value = unshuffle_values(self.value(x), h, w);
        let tracked = self.tracked(x);
        Ok(self.push(vec![4, h / 2, w / 2], Cow::Owned(value), Op::PixelUnshuffle(x), tracked))
    }

    /// Inverse of [`Graph::pixel_unshuffle`].
    pub fn pixel_shuffle(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let xs = self.shape(x);
        if xs.len() != 3 || xs[0] != 4 {
            return Err(Error::shape("pixel_shuffle", format!("{xs:?} is not [4, h, w]")));
        }
        let (h, w) = (xs[1], xs[2]);
        let value = shuffle_values(self.value(x), h, w);
        let tracked = self.tracked(x);
        Ok(self.push(vec![2 * h, 2 * w], Cow::Owned(value), Op::PixelShuffle(x), tracked))
    }

    /// Unnormalised 2-D DFT of a complex field stored as `[rows, cols, 2]`.
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        self.spectral(x, false)
    }

    /// Inverse 2-D DFT (with the `1/(rows·cols)` factor), `[rows, cols, 2]`.
    pub fn ifft2(&mut self, x: Var) -> Result<Var> {
        self.spectral(x, true)
    }

    fn spectral(&mut self, x: Var, inverse: bool) -> Result<Var> {
        self.check_var(x)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[2] != 2 {
            return Err(Error::shape("fft2", format!("{xs:?} is not [rows, cols, 2]")));
        }
        let value = fft2_values(self.value(x), xs[0], xs[1], inverse);
        let op = if inverse { Op::Ifft2(x) } else { Op::Fft2(x) };
        let tracked = self.tracked(x);
        Ok(self.push(xs, Cow::Owned(value), op, tracked))
    }

    /// Records an externally computed map together with its vector-Jacobian
    /// product. `backward` receives the output cotangent and must return one
    /// gradient per input, each with that input's length.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        shape: Vec<usize>,
        value: Vec<T>,
        backward: impl Fn(&[T]) -> Vec<Vec<T>> + 'a,
    ) -> Result<Var> {
        for &v in inputs {
            self.check_var(v)?;
        }
        if numel(&shape) != value.len() {
            return Err(Error::shape("custom", format!("{shape:?} vs {} values", value.len())));
        }
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        Ok(self.push(
            shape,
            Cow::Owned(value),
            Op::Custom {
                inputs: inputs.to_vec(),
                backward: Box::new(backward),
            },
            tracked,
        ))
    }

    /// Back-propagates from the scalar `loss` to every tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_var(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.tracked(v) {
            return;
        }
        debug_assert_eq!(contribution.len(), self.value(v).len());
        match &mut grads[v.0] {
            Some(acc) => add_into(acc, &contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn send_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce() -> Vec<T>) {
        if self.tracked(v) {
            let c = f();
            self.send(grads, v, c);
        }
    }

    fn propagate(&self, node: &Node<'a, T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.send_with(grads, *a, || g.to_vec());
                self.send_with(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send_with(grads, *a, || g.to_vec());
                self.send_with(grads, *b, || g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.send_with(grads, *a, || g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                self.send_with(grads, *b, || g.iter().zip(va).map(|(&x, &y)| x * y).collect());
            }
            Op::Scale(a, s) => self.send_with(grads, *a, || g.iter().map(|&x| x * *s).collect()),
            Op::Offset(a) | Op::Reshape(a) => self.send_with(grads, *a, || g.to_vec()),
            Op::Broadcast(a) => self.send_with(grads, *a, || vec![g.iter().copied().sum()]),
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.send_with(grads, *a, || vec![g[0]; n]);
            }
            Op::Norm2(a) => {
                let norm = node.value[0];
                let va = self.value(*a);
                self.send_with(grads, *a, || {
                    if norm > T::zero() {
                        va.iter().map(|&x| g[0] * x / norm).collect()
                    } else {
                        vec![T::zero(); va.len()]
                    }
                });
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                self.send_with(grads, *a, || {
                    g.iter()
                        .zip(va)
                        .map(|(&d, &x)| if x > T::zero() { d } else { T::zero() })
                        .collect()
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                self.send_with(grads, *a, || {
                    g.iter().zip(y.iter()).map(|(&d, &t)| d * (T::one() - t * t)).collect()
                });
            }
            Op::Clamp01 { x, straight_through } => {
                let vx = self.value(*x);
                self.send_with(grads, *x, || {
                    if *straight_through {
                        return g.to_vec();
                    }
                    g.iter()
                        .zip(vx)
                        .map(|(&d, &v)| {
                            if v >= T::zero() && v <= T::one() {
                                d
                            } else {
                                T::zero()
                            }
                        })
                        .collect()
                });
            }
            Op::FloorAt(a, floor) => {
                let va = self.value(*a);
                self.send_with(grads, *a, || {
                    g.iter()
                        .zip(va)
                        .map(|(&d, &x)| if x >= *floor { d } else { T::zero() })
                        .collect()
                });
            }
            Op::MatVec { w, x } => {
                let (vw, vx) = (self.value(*w), self.value(*x));
                let (n_out, n_in) = (g.len(), vx.len());
                self.send_with(grads, *w, || {
                    let mut dw = vec![T::zero(); n_out * n_in];
                    T::gemm(n_out, 1, n_in, T::one(), g, false, vx, false, T::zero(), &mut dw);
                    dw
                });
                self.send_with(grads, *x, || {
                    let mut dx = vec![T::zero(); n_in];
                    T::gemm(n_in, n_out, 1, T::one(), vw, true, g, false, T::zero(), &mut dx);
                    dx
                });
            }
            Op::Dense { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (rows, n_in) = (self.shape(*x)[0], self.shape(*x)[1]);
                let n_out = self.shape(*w)[0];
                self.send_with(grads, *x, || {
                    let mut dx = vec![T::zero(); rows * n_in];
                    T::gemm(rows, n_out, n_in, T::one(), g, false, vw, false, T::zero(), &mut dx);
                    dx
                });
                self.send_with(grads, *w, || {
                    let mut dw = vec![T::zero(); n_out * n_in];
                    T::gemm(n_out, rows, n_in, T::one(), g, true, vx, false, T::zero(), &mut dw);
                    dw
                });
                if let Some(b) = b {
                    self.send_with(grads, *b, || {
                        let mut db = vec![T::zero(); n_out];
                        for row in g.chunks(n_out) {
                            add_into(&mut db, row);
                        }
                        db
                    });
                }
            }
            Op::Conv2d { x, k, b, geom, cols } => {
                let (dx, dk, db) = conv::conv2d_backward(g, self.value(*k), cols, geom, self.tracked(*x));
                if let Some(dx) = dx {
                    self.send(grads, *x, dx);
                }
                self.send(grads, *k, dk);
                if let Some(b) = b {
                    self.send(grads, *b, db);
                }
            }
            Op::UpConv2 { x, k, b } => {
                let xs = self.shape(*x);
                let (c_in, h, w) = (xs[0], xs[1], xs[2]);
                let c_out = self.shape(*k)[1];
                let (dx, dk, db) = conv::upconv2_backward(
                    g,
                    self.value(*x),
                    self.value(*k),
                    c_in,
                    c_out,
                    h,
                    w,
                    self.tracked(*x),
                );
                if let Some(dx) = dx {
                    self.send(grads, *x, dx);
                }
                self.send(grads, *k, dk);
                if let Some(b) = b {
                    self.send(grads, *b, db);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let n = self.value(*x).len();
                self.send_with(grads, *x, || {
                    let mut dx = vec![T::zero(); n];
                    for (&idx, &d) in argmax.iter().zip(g) {
                        dx[idx] = dx[idx] + d;
                    }
                    dx
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.send_with(grads, p, || g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Slice { x, start } => {
                let n = self.value(*x).len();
                self.send_with(grads, *x, || {
                    let mut dx = vec![T::zero(); n];
                    dx[*start..*start + g.len()].copy_from_slice(g);
                    dx
                });
            }
            Op::Embed { x, row0, col0 } => {
                let (h, w) = (self.shape(*x)[0], self.shape(*x)[1]);
                let cols = node.shape[1];
                self.send_with(grads, *x, || {
                    let mut dx = Vec::with_capacity(h * w);
                    for i in 0..h {
                        let start = (row0 + i) * cols + col0;
                        dx.extend_from_slice(&g[start..start + w]);
                    }
                    dx
                });
            }
            Op::PixelUnshuffle(x) => {
                let (h, w) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.send_with(grads, *x, || shuffle_values(g, h / 2, w / 2));
            }
            Op::PixelShuffle(x) => {
                let (h, w) = (node.shape[0], node.shape[1]);
                self.send_with(grads, *x, || unshuffle_values(g, h, w));
            }
            Op::Fft2(x) => {
                // adjoint of the unnormalised DFT is N · inverse DFT
                let (r, c) = (node.shape[0], node.shape[1]);
                self.send_with(grads, *x, || {
                    let scale = T::lit((r * c) as f64);
                    fft2_values(g, r, c, true).into_iter().map(|v| v * scale).collect()
                });
            }
            Op::Ifft2(x) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                self.send_with(grads, *x, || {
                    let scale = T::one() / T::lit((r * c) as f64);
                    fft2_values(g, r, c, false).into_iter().map(|v| v * scale).collect()
                });
            }
            Op::Custom { inputs, backward } => {
                let parts = backward(g);
                if parts.len() != inputs.len() {
                    return Err(Error::shape(
                        "custom backward",
                        format!("{} gradients for {} inputs", parts.len(), inputs.len()),
                    ));
                }
                for (&v, part) in inputs.iter().zip(parts) {
                    if part.len() != self.value(v).len() {
                        return Err(Error::shape("custom backward", "gradient length"));
                    }
                    self.send(grads, v, part);
                }
            }
        }
        Ok(())
    }
}

/// Splits an `h × w` image into its four parity sub-images.
pub fn unshuffle_values<T: Copy>(x: &[T], h: usize, w: usize) -> Vec<T> {
    let (hh, hw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(h * w);
    for pr in 0..2 {
        for pc in 0..2 {
            for i in 0..hh {
                for j in 0..hw {
                    out.push(x[(2 * i + pr) * w + 2 * j + pc]);
                }
            }
        }
    }
    out
}

/// Interleaves four `h × w` sub-images into one `2h × 2w` image.
pub fn shuffle_values<T: Copy + Default>(x: &[T], h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::default(); oh * ow];
    for pr in 0..2 {
        for pc in 0..2 {
            let sub = &x[(pr * 2 + pc) * h * w..][..h * w];
            for i in 0..h {
                for j in 0..w {
                    out[(2 * i + pr) * ow + 2 * j + pc] = sub[i * w + j];
                }
            }
        }
    }
    out
}
