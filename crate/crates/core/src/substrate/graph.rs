use std::borrow::Cow;

use crate::error::{shape_err, Error, Result};
use crate::par;

use super::fft::{fft2_in_place, Complex};
use super::{Array, Real};

const GROUP_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberate backward-pass corruption used to prove the gradient checker
/// can see a broken primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the convolution weight gradient by 1.01.
    ConvWeightGrad,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Upsample2x(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Softmax(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    LeakyRelu(Var, T),
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Mean(Var),
    Sum(Var),
    MeanSpatial(Var),
    Concat(Vec<Var>),
    SelectChannels {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Dft2 {
        x: Var,
        scale: T,
    },
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recording of array computations for reverse-mode differentiation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
    fault: Option<Fault>,
}

/// Gradients of a scalar with respect to every tracked node.
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(shape: &[usize], op: &str) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => shape_err!("{op}: expected a 4D [N, C, H, W] tensor, got {shape:?}"),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: false,
            fault: None,
        }
    }

    /// Makes every op verify its output is finite.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant leaf (no gradient).
    pub fn input(&mut self, value: Array<T>) -> Var {
        self.leaf(value, false)
    }

    /// A gradient-tracking leaf.
    pub fn param(&mut self, value: Array<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Array<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, name: &str) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Validation(format!(
                "{name} produced a non-finite value (shape {:?})",
                value.shape()
            )));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => self.ng(*a) || self.ng(*b),
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Square(x)
            | Op::Upsample2x(x)
            | Op::Softmax(x)
            | Op::LeakyRelu(x, _)
            | Op::Silu(x)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::Mean(x)
            | Op::Sum(x)
            | Op::MeanSpatial(x)
            | Op::Reshape(x)
            | Op::SelectChannels { x, .. }
            | Op::Dft2 { x, .. } => self.ng(*x),
            Op::Conv2d { x, w, b, .. } => {
                self.ng(*x) || self.ng(*w) || b.is_some_and(|b| self.ng(b))
            }
            Op::MatMul { a, b, .. } => self.ng(*a) || self.ng(*b),
            Op::GroupNorm { x, gamma, beta, .. } => {
                self.ng(*x) || self.ng(*gamma) || self.ng(*beta)
            }
            Op::Concat(xs) => xs.iter().any(|&x| self.ng(x)),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn zip_same(&self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Array<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            shape_err!("{name}: shapes {:?} and {:?} differ", va.shape(), vb.shape());
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Array::from_vec(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let v = self.value(x).map(|a| a * s);
        self.push(v, Op::Scale(x, s), "scale")
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        let v = self.value(x).map(|a| a + s);
        self.push(v, Op::AddScalar(x), "add_scalar")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -T::one())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a * a);
        self.push(v, Op::Square(x), "square")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { a * slope });
        self.push(v, Op::LeakyRelu(x, slope), "leaky_relu")
    }

    /// Sigmoid-weighted linear unit `x·σ(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a * sigmoid(a));
        self.push(v, Op::Silu(x), "silu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), "sigmoid")
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(softplus);
        self.push(v, Op::Softplus(x), "softplus")
    }

    /// Mean of all elements, as a 0-dimensional array.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.is_empty() {
            shape_err!("mean: empty input");
        }
        let n = T::from_usize(vx.len()).unwrap();
        let s: T = vx.data().iter().copied().sum();
        self.push(Array::scalar(s / n), Op::Mean(x), "mean")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Array::scalar(s), Op::Sum(x), "sum")
    }

    /// Global average pooling `[N, C, H, W] → [N, C, 1, 1]`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims4(self.shape(x), "mean_spatial")?;
        let hw = h * w;
        let inv = T::one() / T::from_usize(hw).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let v = Array::from_vec(&[n, c, 1, 1], data)?;
        self.push(v, Op::MeanSpatial(x), "mean_spatial")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self
            .value(x)
            .clone()
            .reshaped(shape)
            .map_err(|e| Error::Shape(format!("reshape: {e}")))?;
        self.push(v, Op::Reshape(x), "reshape")
    }

    /// Concatenates along axis 1.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            shape_err!("concat: no inputs");
        }
        let first = self.shape(xs[0]).to_vec();
        if first.len() < 2 {
            shape_err!("concat: inputs must be at least 2D, got {first:?}");
        }
        let n = first[0];
        let inner: usize = first[2..].iter().product();
        let mut channels = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s[0] != n || s[2..] != first[2..] {
                shape_err!("concat: shape {s:?} incompatible with {first:?}");
            }
            channels += s[1];
        }
        let mut shape = first.clone();
        shape[1] = channels;
        let mut data = Vec::with_capacity(n * channels * inner);
        for b in 0..n {
            for &x in xs {
                let v = self.value(x);
                let len = v.shape()[1] * inner;
                data.extend_from_slice(&v.data()[b * len..(b + 1) * len]);
            }
        }
        let v = Array::from_vec(&shape, data)?;
        self.push(v, Op::Concat(xs.to_vec()), "concat")
    }

    /// Channels `start..start + len` along axis 1.
    pub fn select_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || start + len > s[1] || len == 0 {
            shape_err!("select_channels: range {start}..{} out of shape {s:?}", start + len);
        }
        let inner: usize = s[2..].iter().product();
        let mut shape = s.clone();
        shape[1] = len;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(s[0] * len * inner);
        for b in 0..s[0] {
            let off = (b * s[1] + start) * inner;
            data.extend_from_slice(&src[off..off + len * inner]);
        }
        let v = Array::from_vec(&shape, data)?;
        self.push(v, Op::SelectChannels { x, start }, "select_channels")
    }

    /// Nearest-neighbour 2× upsampling of a `[N, C, H, W]` tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims4(self.shape(x), "upsample2x")?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); n * c * 4 * h * w];
        for (p, plane) in data.chunks_mut(4 * h * w).enumerate() {
            let s = &src[p * h * w..(p + 1) * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    plane[y * 2 * w + xx] = s[(y / 2) * w + xx / 2];
                }
            }
        }
        let v = Array::from_vec(&[n, c, 2 * h, 2 * w], data)?;
        self.push(v, Op::Upsample2x(x), "upsample2x")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let Some(&last) = vx.shape().last() else {
            shape_err!("softmax: scalar input");
        };
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(last) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let v = Array::from_vec(vx.shape(), data)?;
        self.push(v, Op::Softmax(x), "softmax")
    }

    /// Batched matrix product of 3D `[B, M, K] × [B, K, N]` (2D inputs are
    /// treated as a batch of one). `ta`/`tb` transpose the last two axes of
    /// the corresponding operand.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let split = |s: &[usize], t: bool| -> Option<(usize, usize, usize)> {
            let (bt, r, c) = match *s {
                [r, c] => (1, r, c),
                [bt, r, c] => (bt, r, c),
                _ => return None,
            };
            Some(if t { (bt, c, r) } else { (bt, r, c) })
        };
        let (Some((ba, m, ka)), Some((bb, kb, n))) = (split(&sa, ta), split(&sb, tb)) else {
            shape_err!("matmul: expected 2D or 3D operands, got {sa:?} and {sb:?}");
        };
        if ba != bb || ka != kb || sa.len() != sb.len() {
            shape_err!("matmul: incompatible shapes {sa:?} (t={ta}) and {sb:?} (t={tb})");
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); ba * m * n];
        for i in 0..ba {
            T::gemm(
                m,
                ka,
                n,
                &va[i * m * ka..(i + 1) * m * ka],
                ta,
                &vb[i * ka * n..(i + 1) * ka * n],
                tb,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let shape: Vec<usize> = if sa.len() == 2 { vec![m, n] } else { vec![ba, m, n] };
        let v = Array::from_vec(&shape, out)?;
        self.push(v, Op::MatMul { a, b, ta, tb }, "matmul")
    }

    /// Group normalization over `[N, C, ...]` with per-channel affine
    /// parameters `gamma`, `beta` of shape `[C]`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || groups == 0 || !s[1].is_multiple_of(groups) {
            shape_err!("group_norm: {groups} groups incompatible with shape {s:?}");
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            shape_err!(
                "group_norm: affine shapes {:?}/{:?}, expected [{c}]",
                self.shape(gamma),
                self.shape(beta)
            );
        }
        let inner: usize = s[2..].iter().product();
        let group_len = (c / groups) * inner;
        let eps = T::from_f64_lossy(GROUP_NORM_EPS);
        let vx = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); vx.len()];
        let mut means = Vec::with_capacity(s[0] * groups);
        let mut rstds = Vec::with_capacity(s[0] * groups);
        let inv_n = T::one() / T::from_usize(group_len).unwrap();
        for (gi, (xs, ys)) in vx.chunks(group_len).zip(out.chunks_mut(group_len)).enumerate() {
            let mean = xs.iter().copied().sum::<T>() * inv_n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let rstd = T::one() / (var + eps).sqrt();
            let c0 = (gi % groups) * (c / groups);
            for (j, (&xv, y)) in xs.iter().zip(ys.iter_mut()).enumerate() {
                let ch = c0 + j / inner;
                *y = (xv - mean) * rstd * g[ch] + bt[ch];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let v = Array::from_vec(&s, out)?;
        self.push(
            v,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean: means,
                rstd: rstds,
            },
            "group_norm",
        )
    }

    /// 2D convolution (cross-correlation) with square kernels and symmetric
    /// zero padding. `x: [N, C, H, W]`, `w: [O, C, k, k]`, `b: [O]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, c, h, wd] = dims4(self.shape(x), "conv2d")?;
        let [o, cw, k, k2] = dims4(self.shape(w), "conv2d weight")?;
        if cw != c || k != k2 || stride == 0 {
            shape_err!(
                "conv2d: input {:?} incompatible with weight {:?} (stride {stride})",
                self.shape(x),
                self.shape(w)
            );
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            shape_err!("conv2d: kernel {k} larger than padded input {:?}", self.shape(x));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                shape_err!("conv2d: bias shape {:?}, expected [{o}]", self.shape(b));
            }
        }
        let geo = ConvGeom::new(c, h, wd, k, stride, pad);
        let (ho, wo) = (geo.ho, geo.wo);
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * o * ho * wo];
        par::for_each_chunk(&mut out, o * ho * wo, |i, dst| {
            let cols = geo.im2col(&xs[i * c * h * wd..(i + 1) * c * h * wd]);
            T::gemm(o, geo.rows(), ho * wo, ws, false, &cols, false, T::zero(), dst);
            if let Some(bias) = bias {
                for (oc, plane) in dst.chunks_mut(ho * wo).enumerate() {
                    for v in plane {
                        *v += bias[oc];
                    }
                }
            }
        });
        let v = Array::from_vec(&[n, o, ho, wo], out)?;
        self.push(
            v,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            "conv2d",
        )
    }

    /// Unnormalized 2D DFT over the last two axes, times `scale`. The output
    /// has a trailing axis of length 2 holding (real, imaginary) parts.
    pub fn dft2(&mut self, x: Var, scale: T) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            shape_err!("dft2: expected at least 2 axes, got {s:?}");
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(2 * src.len());
        for plane in src.chunks(h * w) {
            let mut buf: Vec<Complex<T>> =
                plane.iter().map(|&v| Complex::new(v, T::zero())).collect();
            fft2_in_place(&mut buf, h, w, false);
            for z in buf {
                out.push(z.re * scale);
                out.push(z.im * scale);
            }
        }
        let mut shape = s.clone();
        shape.push(2);
        let v = Array::from_vec(&shape, out)?;
        self.push(v, Op::Dft2 { x, scale }, "dft2")
    }

    /// Reverse-mode sweep from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array<T>>], v: Var, g: Array<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Array<T>, grads: &mut [Option<Array<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.accumulate(grads, *a, zip(g, vb, |g, b| g * b));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, zip(g, va, |g, a| g * a));
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let shape = self.shape(*x);
                self.accumulate(grads, *x, g.clone().reshaped(shape).unwrap());
            }
            Op::Square(x) => {
                let two = T::from_f64_lossy(2.0);
                self.accumulate(grads, *x, zip(g, self.value(*x), |g, x| two * g * x));
            }
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                let gx = zip(g, self.value(*x), |g, x| if x > T::zero() { g } else { g * slope });
                self.accumulate(grads, *x, gx);
            }
            Op::Silu(x) => {
                let gx = zip(g, self.value(*x), |g, x| {
                    let s = sigmoid(x);
                    g * s * (T::one() + x * (T::one() - s))
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, zip(g, y, |g, y| g * y * (T::one() - y)));
            }
            Op::Softplus(x) => {
                self.accumulate(grads, *x, zip(g, self.value(*x), |g, x| g * sigmoid(x)));
            }
            Op::Mean(x) => {
                let vx = self.value(*x);
                let d = g.item() / T::from_usize(vx.len()).unwrap();
                self.accumulate(grads, *x, Array::full(vx.shape(), d));
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, Array::full(self.shape(*x), g.item()));
            }
            Op::MeanSpatial(x) => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let inv = T::one() / T::from_usize(hw).unwrap();
                let mut gx = Array::zeros(s);
                for (p, dst) in gx.data_mut().chunks_mut(hw).enumerate() {
                    dst.fill(g.data()[p] * inv);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(xs) => {
                let n = y.shape()[0];
                let inner: usize = y.shape()[2..].iter().product();
                let total = y.shape()[1] * inner;
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[1] * inner;
                    if self.ng(x) {
                        let mut data = Vec::with_capacity(n * len);
                        for b in 0..n {
                            let start = b * total + offset;
                            data.extend_from_slice(&g.data()[start..start + len]);
                        }
                        self.accumulate(grads, x, Array::from_vec(self.shape(x), data).unwrap());
                    }
                    offset += len;
                }
            }
            Op::SelectChannels { x, start } => {
                let s = self.shape(*x);
                let inner: usize = s[2..].iter().product();
                let len = y.shape()[1] * inner;
                let mut gx = Array::zeros(s);
                for b in 0..s[0] {
                    let off = (b * s[1] + start) * inner;
                    gx.data_mut()[off..off + len].copy_from_slice(&g.data()[b * len..(b + 1) * len]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (h, w) = (s[2], s[3]);
                let mut gx = Array::zeros(s);
                for (p, dst) in gx.data_mut().chunks_mut(h * w).enumerate() {
                    let src = &g.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let last = *y.shape().last().unwrap();
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(last).zip(y.data().chunks(last)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for (gv, &yv) in gr.iter_mut().zip(yr) {
                        *gv = yv * (*gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MatMul { a, b, ta, tb } => self.backprop_matmul(*a, *b, *ta, *tb, g, grads),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => self.backprop_group_norm(*x, *gamma, *beta, *groups, mean, rstd, g, grads),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => self.backprop_conv(*x, *w, *b, *stride, *pad, g, grads),
            Op::Dft2 { x, scale } => {
                // Adjoint of the real-input DFT: Re(DFT(conj(G))).
                let s = self.shape(*x);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let mut gx = Vec::with_capacity(self.value(*x).len());
                for plane in g.data().chunks(2 * h * w) {
                    let mut buf: Vec<Complex<T>> = plane
                        .chunks(2)
                        .map(|z| Complex::new(z[0], -z[1]))
                        .collect();
                    fft2_in_place(&mut buf, h, w, false);
                    gx.extend(buf.iter().map(|z| z.re * *scale));
                }
                self.accumulate(grads, *x, Array::from_vec(s, gx).unwrap());
            }
        }
    }

    fn backprop_matmul(
        &self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        g: &Array<T>,
        grads: &mut [Option<Array<T>>],
    ) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let batch = if sa.len() == 3 { sa[0] } else { 1 };
        let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let n = g.shape()[g.shape().len() - 1];
        let (va, vb, vg) = (self.value(a).data(), self.value(b).data(), g.data());
        if self.ng(a) {
            let mut ga = Array::zeros(sa);
            for i in 0..batch {
                let bi = &vb[i * k * n..(i + 1) * k * n];
                let gi = &vg[i * m * n..(i + 1) * m * n];
                let dst = &mut ga.data_mut()[i * m * k..(i + 1) * m * k];
                if ta {
                    T::gemm(k, n, m, bi, tb, gi, true, T::zero(), dst);
                } else {
                    T::gemm(m, n, k, gi, false, bi, !tb, T::zero(), dst);
                }
            }
            self.accumulate(grads, a, ga);
        }
        if self.ng(b) {
            let mut gb = Array::zeros(sb);
            for i in 0..batch {
                let ai = &va[i * m * k..(i + 1) * m * k];
                let gi = &vg[i * m * n..(i + 1) * m * n];
                let dst = &mut gb.data_mut()[i * k * n..(i + 1) * k * n];
                if tb {
                    T::gemm(n, m, k, gi, true, ai, ta, T::zero(), dst);
                } else {
                    T::gemm(k, m, n, ai, !ta, gi, false, T::zero(), dst);
                }
            }
            self.accumulate(grads, b, gb);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_group_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: &[T],
        rstd: &[T],
        g: &Array<T>,
        grads: &mut [Option<Array<T>>],
    ) {
        let s = self.shape(x);
        let c = s[1];
        let inner: usize = s[2..].iter().product();
        let group_len = (c / groups) * inner;
        let inv_n = T::one() / T::from_usize(group_len).unwrap();
        let vx = self.value(x).data();
        let gam = self.value(gamma).data();
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        let mut gx = vec![T::zero(); vx.len()];
        for (gi, ((xs, gs), dx)) in vx
            .chunks(group_len)
            .zip(g.data().chunks(group_len))
            .zip(gx.chunks_mut(group_len))
            .enumerate()
        {
            let (mu, rs) = (mean[gi], rstd[gi]);
            let c0 = (gi % groups) * (c / groups);
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for (j, (&xv, &gv)) in xs.iter().zip(gs).enumerate() {
                let ch = c0 + j / inner;
                let xhat = (xv - mu) * rs;
                ggamma[ch] += gv * xhat;
                gbeta[ch] += gv;
                let dxhat = gv * gam[ch];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
            let (m1, m2) = (sum_dxhat * inv_n, sum_dxhat_xhat * inv_n);
            for (j, ((&xv, &gv), d)) in xs.iter().zip(gs).zip(dx.iter_mut()).enumerate() {
                let ch = c0 + j / inner;
                let xhat = (xv - mu) * rs;
                *d = rs * (gv * gam[ch] - m1 - xhat * m2);
            }
        }
        self.accumulate(grads, x, Array::from_vec(s, gx).unwrap());
        self.accumulate(grads, gamma, Array::from_vec(&[c], ggamma).unwrap());
        self.accumulate(grads, beta, Array::from_vec(&[c], gbeta).unwrap());
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        g: &Array<T>,
        grads: &mut [Option<Array<T>>],
    ) {
        let sx = self.shape(x);
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let sw = self.shape(w);
        let (o, k) = (sw[0], sw[2]);
        let geo = ConvGeom::new(c, h, wd, k, stride, pad);
        let out_len = o * geo.ho * geo.wo;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let gs = g.data();

        if let Some(b) = b.filter(|&b| self.ng(b)) {
            let mut gb = vec![T::zero(); o];
            for sample in gs.chunks(out_len) {
                for (oc, plane) in sample.chunks(geo.ho * geo.wo).enumerate() {
                    gb[oc] += plane.iter().copied().sum::<T>();
                }
            }
            self.accumulate(grads, b, Array::from_vec(&[o], gb).unwrap());
        }
        if self.ng(w) {
            let per_sample: Vec<Vec<T>> = par::map_range(n, |i| {
                let cols = geo.im2col(&xs[i * c * h * wd..(i + 1) * c * h * wd]);
                let mut gw = vec![T::zero(); o * geo.rows()];
                T::gemm(
                    o,
                    geo.ho * geo.wo,
                    geo.rows(),
                    &gs[i * out_len..(i + 1) * out_len],
                    false,
                    &cols,
                    true,
                    T::zero(),
                    &mut gw,
                );
                gw
            });
            let mut gw = vec![T::zero(); o * geo.rows()];
            for part in &per_sample {
                for (acc, &v) in gw.iter_mut().zip(part) {
                    *acc += v;
                }
            }
            if self.fault == Some(Fault::ConvWeightGrad) {
                let f = T::from_f64_lossy(1.01);
                gw.iter_mut().for_each(|v| *v *= f);
            }
            self.accumulate(grads, w, Array::from_vec(sw, gw).unwrap());
        }
        if self.ng(x) {
            let mut gx = vec![T::zero(); xs.len()];
            par::for_each_chunk(&mut gx, c * h * wd, |i, dst| {
                let mut cols = vec![T::zero(); geo.rows() * geo.ho * geo.wo];
                T::gemm(
                    geo.rows(),
                    o,
                    geo.ho * geo.wo,
                    ws,
                    true,
                    &gs[i * out_len..(i + 1) * out_len],
                    false,
                    T::zero(),
                    &mut cols,
                );
                geo.col2im(&cols, dst);
            });
            self.accumulate(grads, x, Array::from_vec(sx, gx).unwrap());
        }
    }
}

fn zip<T: Real>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::from_vec(b.shape(), data).unwrap()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Index bookkeeping for one convolution: input `c×h×w`, square kernel
/// `k`, output `ho×wo`.
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unfolds one sample into a `(c·k·k) × (ho·wo)` matrix.
    fn im2col<'a, T: Real>(&self, x: &'a [T]) -> Cow<'a, [T]> {
        if self.is_pointwise() {
            return Cow::Borrowed(x);
        }
        let (ho, wo) = (self.ho, self.wo);
        let mut cols = vec![T::zero(); self.rows() * ho * wo];
        for ch in 0..self.c {
            let plane = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        Cow::Owned(cols)
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, summing
    /// overlaps. `dst` must be zeroed.
    fn col2im<T: Real>(&self, cols: &[T], dst: &mut [T]) {
        if self.is_pointwise() {
            dst.copy_from_slice(cols);
            return;
        }
        let (ho, wo) = (self.ho, self.wo);
        for ch in 0..self.c {
            let plane = &mut dst[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let prow = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                prow[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> Array<f64> {
        Array::from_f64(shape, data).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 5 * 5).map(|i| i as f64 * 0.1).collect();
        let x = g.input(arr(&[1, 2, 5, 5], &data));
        // 3x3 kernel with a centred 1 per matching channel
        let mut k = vec![0.0; 2 * 2 * 9];
        k[4] = 1.0;
        k[3 * 9 + 4] = 1.0;
        let w = g.input(arr(&[2, 2, 3, 3], &k));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
        let w1 = g.input(arr(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]));
        let y1 = g.conv2d(x, w1, None, 1, 0).unwrap();
        assert_eq!(g.value(y1).data(), &data[..]);
    }

    #[test]
    fn strided_conv_shape() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Array::zeros(&[2, 3, 16, 16]));
        let w = g.input(Array::zeros(&[4, 3, 3, 3]));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 8, 8]);
    }

    #[test]
    fn conv_channel_mismatch_names_op() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Array::zeros(&[1, 3, 8, 8]));
        let w = g.input(Array::zeros(&[4, 2, 3, 3]));
        let err = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("conv2d") && err.contains("[1, 3, 8, 8]"), "{err}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f32>::new();
        let data: Vec<f64> = (0..24).map(|i| (i as f64 * 1.7).sin() * 5.0).collect();
        let x = g.input(Array::from_f64(&[2, 3, 4], &data).unwrap());
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(arr(&[3, 4], &[0.5; 12]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(arr(&[2], &[1.0, 2.0]));
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn dft_of_constant_plane() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array::full(&[1, 1, 4, 4], 0.25));
        let f = g.dft2(x, 1.0).unwrap();
        let v = g.value(f).data();
        assert!((v[0] - 4.0).abs() < 1e-12);
        assert!(v[1..].iter().all(|z| z.abs() < 1e-12));
    }

    #[test]
    fn finite_check_catches_nan() {
        let mut g = Graph::<f64>::new().with_finite_checks();
        let x = g.input(arr(&[1], &[f64::MAX]));
        let err = g.square(x).unwrap_err().to_string();
        assert!(err.contains("square"), "{err}");
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
