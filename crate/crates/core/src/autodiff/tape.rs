//! Wengert-list tape: every forward op appends a node, `backward` replays the
//! list in reverse exactly once.

use super::conv::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::warp::sampler::{self, WarpCache};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Upsample2x(Var),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a - b` with `b` (leading dim 1) repeated along the batch axis.
    SubBroadcast(Var, Var),
    Scale(Var, f64),
    Clamp(Var, f64),
    Reshape(Var),
    /// Channel concatenation; `b` may have batch 1 and is then broadcast.
    ConcatChannels(Var, Var),
    Sum(Var),
    L1Sum(Var),
    /// `sum_i w . x_i` for `x` of shape `N x b`.
    WeightedDot(Var, Vec<f64>),
    Warp {
        image: Var,
        params: Var,
        caches: Vec<WarpCache>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; build a fresh tape per step.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Reads a scalar node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push_node(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = self.operands(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    fn operands(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            }
            | Op::Linear { input, weight, bias } => {
                let mut v = vec![input, weight];
                v.extend(bias);
                v
            }
            Op::Upsample2x(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Scale(a, _)
            | Op::Clamp(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::L1Sum(a)
            | Op::WeightedDot(a, _) => vec![a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::SubBroadcast(a, b) | Op::ConcatChannels(a, b) => {
                vec![a, b]
            }
            Op::Warp { image, params, .. } => vec![image, params],
        }
    }

    /// 2-d convolution, `input: N x C x H x W`, `weight: O x C x k x k`,
    /// optional `bias: O`, symmetric zero padding `pad`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let wshape = self.shape(weight).to_vec();
        let (o, k) = match wshape.as_slice() {
            &[o, wc, k1, k2] if wc == c && k1 == k2 => (o, k1),
            _ => return Err(mismatch("conv2d", self.shape(input), &wshape)),
        };
        if !(stride == 1 || stride == 2) {
            return Err(Error::InvalidShape {
                shape: wshape,
                reason: format!("conv2d stride must be 1 or 2, got {stride}"),
            });
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(mismatch("conv2d", self.shape(input), &wshape));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(mismatch("conv2d bias", self.shape(b), &[o]));
            }
        }
        let geom = ConvGeom {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: o,
            kernel: k,
            stride,
            pad,
        };
        let out = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new([n, o, geom.out_height(), geom.out_width()], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            "conv2d",
        )
    }

    /// `y = x W^T + b` for `x: N x in`, `W: out x in`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let (n, fin, fout) = match (xs.as_slice(), ws.as_slice()) {
            (&[n, a], &[o, b]) if a == b => (n, a, o),
            _ => return Err(mismatch("linear", &xs, &ws)),
        };
        let mut out = vec![T::zero(); n * fout];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [fout] {
                return Err(mismatch("linear bias", bv.shape(), &[fout]));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            self.value(input).data(),
            (fin as isize, 1),
            self.value(weight).data(),
            (1, fin as isize),
            if bias.is_some() { T::one() } else { T::zero() },
            &mut out,
            (fout as isize, 1),
        );
        let value = Tensor::new([n, fout], out)?;
        self.push(value, Op::Linear { input, weight, bias }, "linear")
    }

    /// Nearest-neighbour 2x upsampling of an `N x C x H x W` tensor.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let x = self.value(input).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new([n, c, h2, w2], out)?;
        self.push(value, Op::Upsample2x(input), "upsample2x")
    }

    fn map(&mut self, input: Var, f: impl Fn(T) -> T, op: Op, name: &'static str) -> Result<Var> {
        let x = self.value(input);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())?;
        self.push(value, op, name)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.map(input, |v| v.tanh(), Op::Tanh(input), "tanh")
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.map(
            input,
            |v| T::one() / (T::one() + (-v).exp()),
            Op::Sigmoid(input),
            "sigmoid",
        )
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64c(factor);
        self.map(input, |v| v * f, Op::Scale(input, factor), "scale")
    }

    /// Elementwise clamp to `[-radius, radius]`; zero gradient where clamped.
    pub fn clamp(&mut self, input: Var, radius: f64) -> Result<Var> {
        let r = T::from_f64c(radius);
        self.map(input, |v| v.max(-r).min(r), Op::Clamp(input, radius), "clamp")
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op, name: &'static str) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b), "mul")
    }

    /// `a - b` where `b` has leading dimension 1 and otherwise matches `a`.
    pub fn sub_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if y.shape().first() != Some(&1) || x.shape()[1..] != y.shape()[1..] {
            return Err(mismatch("sub_broadcast", x.shape(), y.shape()));
        }
        let per = y.len();
        let data = x
            .data()
            .chunks(per)
            .flat_map(|row| row.iter().zip(y.data()).map(|(&p, &q)| p - q))
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::SubBroadcast(a, b), "sub_broadcast")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(input), "reshape")
    }

    /// Concatenates along channels. `b` may carry batch 1, in which case it
    /// is repeated for every item of `a`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (nb != na && nb != 1) || hb != h || wb != w {
            return Err(mismatch("concat_channels", self.shape(a), self.shape(b)));
        }
        let (pa, pb) = (ca * h * w, cb * h * w);
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(na * (pa + pb));
        for i in 0..na {
            out.extend_from_slice(&x[i * pa..(i + 1) * pa]);
            let j = if nb == 1 { 0 } else { i };
            out.extend_from_slice(&y[j * pb..(j + 1) * pb]);
        }
        let value = Tensor::new([na, ca + cb, h, w], out)?;
        self.push(value, Op::ConcatChannels(a, b), "concat_channels")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: T = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(input), "sum")
    }

    /// Sum of absolute values; a scalar.
    pub fn l1_sum(&mut self, input: Var) -> Result<Var> {
        let s: T = self.value(input).data().iter().map(|v| v.abs()).sum();
        self.push(Tensor::scalar(s), Op::L1Sum(input), "l1_sum")
    }

    /// `sum_i w . x_i` over the rows of `x: N x b`.
    pub fn weighted_dot(&mut self, input: Var, weights: &[f64]) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 2 || xs[1] != weights.len() {
            return Err(mismatch("weighted_dot", &xs, &[weights.len()]));
        }
        let w: Vec<T> = weights.iter().map(|&v| T::from_f64c(v)).collect();
        let s: T = self
            .value(input)
            .data()
            .chunks(weights.len())
            .map(|row| row.iter().zip(&w).map(|(&a, &b)| a * b).sum::<T>())
            .sum();
        self.push(
            Tensor::scalar(s),
            Op::WeightedDot(input, weights.to_vec()),
            "weighted_dot",
        )
    }

    /// Warps each image of `image: N x C x H x W` by the homography induced
    /// by its row of corner displacements `params: N x 8`.
    pub fn warp(&mut self, image: Var, params: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(image).dims4()?;
        if self.shape(params) != [n, 8] {
            return Err(mismatch("warp", self.shape(image), self.shape(params)));
        }
        let (out, caches) = sampler::warp_batch(self.value(image).data(), (n, c, h, w), self.value(params).data())?;
        let value = Tensor::new([n, c, h, w], out)?;
        self.push(value, Op::Warp { image, params, caches }, "warp")
    }

    /// Reverse pass from a scalar `loss`. The tape can be replayed once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backward_node(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need = (wants(*input), wants(*weight), bias.map(wants).unwrap_or(false));
                let cg = conv::backward(geom, self.value(*input).data(), self.value(*weight).data(), g, need);
                accumulate_opt(grads, *input, cg.input);
                accumulate_opt(grads, *weight, cg.weight);
                if let Some(b) = bias {
                    accumulate_opt(grads, *b, cg.bias);
                }
            }
            Op::Linear { input, weight, bias } => {
                let (n, fin) = (self.shape(*input)[0], self.shape(*input)[1]);
                let fout = self.shape(*weight)[0];
                if wants(*input) {
                    // dX(n x in) = dY(n x out) * W(out x in)
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(
                        n,
                        fout,
                        fin,
                        T::one(),
                        g,
                        (fout as isize, 1),
                        self.value(*weight).data(),
                        (fin as isize, 1),
                        T::zero(),
                        &mut dx,
                        (fin as isize, 1),
                    );
                    accumulate(grads, *input, &dx);
                }
                if wants(*weight) {
                    // dW(out x in) = dY^T(out x n) * X(n x in)
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(
                        fout,
                        n,
                        fin,
                        T::one(),
                        g,
                        (1, fout as isize),
                        self.value(*input).data(),
                        (fin as isize, 1),
                        T::zero(),
                        &mut dw,
                        (fin as isize, 1),
                    );
                    accumulate(grads, *weight, &dw);
                }
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    let mut db = vec![T::zero(); fout];
                    for row in g.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    accumulate(grads, b, &db);
                }
            }
            Op::Upsample2x(a) => {
                let (n, c, h, w) = self.value(*a).dims4()?;
                let (h2, w2) = (2 * h, 2 * w);
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let src = &g[p * h2 * w2..(p + 1) * h2 * w2];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..h2 {
                        for x in 0..w2 {
                            dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                        }
                    }
                }
                accumulate(grads, *a, &dx);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let dx: Vec<T> = g.iter().zip(y).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect();
                accumulate(grads, *a, &dx);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let dx: Vec<T> = g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (T::one() - yv)).collect();
                accumulate(grads, *a, &dx);
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    let da: Vec<T> = g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect();
                    accumulate(grads, *a, &da);
                }
                if wants(*b) {
                    let db: Vec<T> = g.iter().zip(x).map(|(&gv, &xv)| gv * xv).collect();
                    accumulate(grads, *b, &db);
                }
            }
            Op::SubBroadcast(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    let per = self.value(*b).len();
                    let mut db = vec![T::zero(); per];
                    for row in g.chunks(per) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d -= v);
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Scale(a, f) => {
                let f = T::from_f64c(*f);
                let dx: Vec<T> = g.iter().map(|&v| v * f).collect();
                accumulate(grads, *a, &dx);
            }
            Op::Clamp(a, r) => {
                let r = T::from_f64c(*r);
                let x = self.value(*a).data();
                let dx: Vec<T> = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv.abs() <= r { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *a, &dx);
            }
            Op::Reshape(a) => accumulate(grads, *a, g),
            Op::ConcatChannels(a, b) => {
                let (na, ca, h, w) = self.value(*a).dims4()?;
                let (nb, cb, _, _) = self.value(*b).dims4()?;
                let (pa, pb) = (ca * h * w, cb * h * w);
                if wants(*a) {
                    let mut da = Vec::with_capacity(na * pa);
                    for i in 0..na {
                        let base = i * (pa + pb);
                        da.extend_from_slice(&g[base..base + pa]);
                    }
                    accumulate(grads, *a, &da);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); nb * pb];
                    for i in 0..na {
                        let base = i * (pa + pb) + pa;
                        let j = if nb == 1 { 0 } else { i };
                        db[j * pb..(j + 1) * pb]
                            .iter_mut()
                            .zip(&g[base..base + pb])
                            .for_each(|(d, &v)| *d += v);
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Sum(a) => {
                let dx = vec![g[0]; self.value(*a).len()];
                accumulate(grads, *a, &dx);
            }
            Op::L1Sum(a) => {
                let dx: Vec<T> = self
                    .value(*a)
                    .data()
                    .iter()
                    .map(|&v| {
                        if v > T::zero() {
                            g[0]
                        } else if v < T::zero() {
                            -g[0]
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                accumulate(grads, *a, &dx);
            }
            Op::WeightedDot(a, w) => {
                let n = self.shape(*a)[0];
                let dx: Vec<T> = (0..n)
                    .flat_map(|_| w.iter().map(|&wv| g[0] * T::from_f64c(wv)))
                    .collect();
                accumulate(grads, *a, &dx);
            }
            Op::Warp { image, params, caches } => {
                let dims = self.value(*image).dims4()?;
                let (di, dp) = sampler::warp_batch_backward(
                    self.value(*image).data(),
                    dims,
                    caches,
                    g,
                    wants(*image),
                    wants(*params),
                );
                accumulate_opt(grads, *image, di);
                accumulate_opt(grads, *params, dp);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, delta: &[T]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, &d)| *a += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_opt<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, delta: Option<Vec<T>>) {
    if let Some(d) = delta {
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &x)| *a += x),
            slot @ None => *slot = Some(d),
        }
    }
}

/// Result of a backward pass: `d loss / d node` for every node reached.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor; zeros when unreachable.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches node shape"),
            None => Tensor::zeros(shape),
        }
    }
}
