//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass.
//! [`Graph::backward`] walks the record in reverse, writes parameter
//! gradients into the owning [`ParamStore`] and returns the gradients of
//! every other node.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{self, ConvGeom, ConvSpec};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::resample::BilinearPlan;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf { requires_grad: bool },
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        mask: Option<Vec<T>>,
        eff_w: Vec<T>,
        cols: Vec<T>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gated(Var, Var),
    SliceChannels { x: Var, start: usize },
    ConcatChannels(Vec<Var>),
    Upsample { x: Var, plan: BilinearPlan },
    SoftmaxCe { logits: Var, targets: Vec<usize>, classes: usize, probs: Vec<T> },
    L1 { pred: Var, target: Vec<T> },
    Sum(Var),
    GradScale(Var, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients of every node after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { requires_grad: false })
    }

    /// Free input whose gradient is reported by [`Gradients::get`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { requires_grad: true })
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x).map(f);
        self.push(v, op)
    }

    /// Same-padded convolution. When the spec carries a mask the effective
    /// kernel is `weight * mask`.
    pub fn conv2d(&mut self, x: Var, spec: &ConvSpec<T>, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).dims4("conv2d")?;
        let geom = spec.geometry(xs)?;
        let ws = spec.weight_shape();
        if self.value(w).shape() != ws {
            return Err(shape_err(
                "conv2d",
                format!("weight shape {:?}, spec expects {:?}", self.value(w).shape(), ws),
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [spec.out_channels] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias shape {:?}, expected [{}]", self.value(b).shape(), spec.out_channels),
                ));
            }
        }
        let mask = spec.mask().map(|m| m.data().to_vec());
        let eff_w: Vec<T> = match &mask {
            Some(m) => self.value(w).data().iter().zip(m).map(|(&a, &b)| a * b).collect(),
            None => Vec::new(),
        };
        let weights = if mask.is_some() { &eff_w[..] } else { self.value(w).data() };
        let bias = b.map(|b| self.value(b).data());
        let (out, cols) = conv::forward(&geom, self.value(x).data(), weights, bias);
        let value = Tensor::new(geom.out_shape(), out)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom, mask, eff_w, cols }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let v = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let v = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `tanh(a) * sigmoid(b)`.
    pub fn gated(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("gated_activation", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x.tanh() * sigmoid(y))
            .collect();
        let v = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(v, Op::Gated(a, b)))
    }

    /// Channels `start..start+len` of an `[N, C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("slice_channels")?;
        if start + len > c || len == 0 {
            return Err(shape_err("slice_channels", format!("{}..{} of {} channels", start, start + len, c)));
        }
        let src = self.value(x).data();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            data.extend_from_slice(&src[(b * c + start) * plane..(b * c + start + len) * plane]);
        }
        let v = Tensor::new([n, len, h, w], data)?;
        Ok(self.push(v, Op::SliceChannels { x, start }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| arg_err("concat_channels", "no inputs"))?;
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut total = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err("concat_channels", "batch or spatial extents differ"));
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let v = Tensor::new([n, total, h, w], data)?;
        Ok(self.push(v, Op::ConcatChannels(parts.to_vec())))
    }

    /// Corner-aligned bilinear resize to `out_h x out_w`.
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("bilinear_upsample")?;
        if out_h == 0 || out_w == 0 {
            return Err(arg_err("bilinear_upsample", "zero-sized target"));
        }
        if out_h < h || out_w < w {
            return Err(arg_err(
                "bilinear_upsample",
                format!("target {}x{} smaller than input {}x{}", out_h, out_w, h, w),
            ));
        }
        let plan = BilinearPlan::new(h, w, out_h, out_w);
        let data = plan.forward(n * c, self.value(x).data());
        let v = Tensor::new([n, c, out_h, out_w], data)?;
        Ok(self.push(v, Op::Upsample { x, plan }))
    }

    /// Mean cross-entropy of `logits: [N, G*K, H, W]` against
    /// `targets: [N, G, H, W]` (flattened) over `K` classes; group `g`'s
    /// logits occupy channels `g*K..(g+1)*K`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], classes: usize) -> Result<Var> {
        let [n, gk, h, w] = self.value(logits).dims4("softmax_cross_entropy")?;
        if classes == 0 || gk % classes != 0 {
            return Err(shape_err("softmax_cross_entropy", format!("{} channels not divisible by {} classes", gk, classes)));
        }
        let groups = gk / classes;
        let count = n * groups * h * w;
        if targets.len() != count {
            return Err(shape_err("softmax_cross_entropy", format!("{} targets for {} positions", targets.len(), count)));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::TargetOutOfRange { index: bad, classes });
        }
        let data = self.value(logits).data();
        let plane = h * w;
        let mut probs = vec![T::zero(); data.len()];
        let mut total = T::zero();
        let mut scratch = vec![T::zero(); classes];
        for (site, &target) in targets.iter().enumerate() {
            let (b, rest) = (site / (groups * plane), site % (groups * plane));
            let (g, p) = (rest / plane, rest % plane);
            let base = (b * gk + g * classes) * plane + p;
            for (k, s) in scratch.iter_mut().enumerate() {
                *s = data[base + k * plane];
            }
            log_softmax_in_place(&mut scratch);
            total -= scratch[target];
            for (k, s) in scratch.iter().enumerate() {
                probs[base + k * plane] = s.exp();
            }
        }
        let loss = total / T::of(count as f64);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, targets: targets.to_vec(), classes, probs }))
    }

    /// Mean absolute error against a constant target of the same shape.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(shape_err("l1_loss", format!("{:?} vs {:?}", self.value(pred).shape(), target.shape())));
        }
        let n = T::of(target.len() as f64);
        let s: T = self.value(pred).data().iter().zip(target.data()).map(|(&a, &b)| (a - b).abs()).sum();
        Ok(self.push(Tensor::scalar(s / n), Op::L1 { pred, target: target.data().to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Identity on the forward pass; scales the gradient by `factor` on the
    /// way back. A zero factor stops propagation entirely.
    pub fn grad_scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(x).clone();
        self.push(v, Op::GradScale(x, factor))
    }

    /// Reverse sweep from the scalar `loss`. Parameter gradients are added to
    /// `store`; calling this twice accumulates twice.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { requires_grad } => {
                    if *requires_grad {
                        grads[i] = Some(g);
                    }
                }
                Op::Param(id) => {
                    store.accumulate(*id, &g);
                    grads[i] = Some(g);
                }
                Op::Conv { x, w, b, geom, mask, eff_w, cols } => {
                    let weights = if mask.is_some() { &eff_w[..] } else { self.value(*w).data() };
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    let mut dw = vec![T::zero(); weights.len()];
                    let mut db = b.map(|_| vec![T::zero(); geom.cout]);
                    conv::backward(
                        geom,
                        self.value(*x).data(),
                        cols,
                        weights,
                        &g,
                        self.wants(*x).then_some(&mut dx[..]),
                        Some(&mut dw[..]),
                        db.as_deref_mut(),
                    );
                    if let Some(m) = mask {
                        dw.iter_mut().zip(m).for_each(|(d, &m)| *d *= m);
                    }
                    if self.wants(*x) {
                        acc(&mut grads, *x, &dx);
                    }
                    acc(&mut grads, *w, &dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        acc(&mut grads, *b, &db);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::Mul(a, b) => {
                    let da: Vec<T> = g.iter().zip(self.value(*b).data()).map(|(&g, &y)| g * y).collect();
                    let db: Vec<T> = g.iter().zip(self.value(*a).data()).map(|(&g, &x)| g * x).collect();
                    acc(&mut grads, *a, &da);
                    acc(&mut grads, *b, &db);
                }
                Op::Scale(x, k) => {
                    let d: Vec<T> = g.iter().map(|&g| g * *k).collect();
                    acc(&mut grads, *x, &d);
                }
                Op::Relu(x) => {
                    let d: Vec<T> = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    acc(&mut grads, *x, &d);
                }
                Op::Tanh(x) => {
                    let d: Vec<T> = g.iter().zip(node.value.data()).map(|(&g, &y)| g * (T::one() - y * y)).collect();
                    acc(&mut grads, *x, &d);
                }
                Op::Sigmoid(x) => {
                    let d: Vec<T> = g.iter().zip(node.value.data()).map(|(&g, &y)| g * y * (T::one() - y)).collect();
                    acc(&mut grads, *x, &d);
                }
                Op::Gated(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let mut da = Vec::with_capacity(g.len());
                    let mut db = Vec::with_capacity(g.len());
                    for ((&g, &x), &y) in g.iter().zip(av).zip(bv) {
                        let t = x.tanh();
                        let s = sigmoid(y);
                        da.push(g * (T::one() - t * t) * s);
                        db.push(g * t * s * (T::one() - s));
                    }
                    acc(&mut grads, *a, &da);
                    acc(&mut grads, *b, &db);
                }
                Op::SliceChannels { x, start } => {
                    let [n, c, h, w] = self.value(*x).dims4("slice_channels")?;
                    let len = node.value.shape()[1];
                    let plane = h * w;
                    let mut d = vec![T::zero(); n * c * plane];
                    for b in 0..n {
                        d[(b * c + start) * plane..(b * c + start + len) * plane]
                            .copy_from_slice(&g[b * len * plane..(b + 1) * len * plane]);
                    }
                    acc(&mut grads, *x, &d);
                }
                Op::ConcatChannels(parts) => {
                    let [n, total, h, w] = node.value.dims4("concat_channels")?;
                    let plane = h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[1];
                        let mut d = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            d.extend_from_slice(&g[(b * total + offset) * plane..(b * total + offset + c) * plane]);
                        }
                        acc(&mut grads, p, &d);
                        offset += c;
                    }
                }
                Op::Upsample { x, plan } => {
                    let [n, c, _, _] = self.value(*x).dims4("bilinear_upsample")?;
                    let mut d = vec![T::zero(); self.value(*x).len()];
                    plan.backward(n * c, &g, &mut d);
                    acc(&mut grads, *x, &d);
                }
                Op::SoftmaxCe { logits, targets, classes, probs } => {
                    let [_, gk, h, w] = self.value(*logits).dims4("softmax_cross_entropy")?;
                    let plane = h * w;
                    let groups = gk / classes;
                    let scale = g[0] / T::of(targets.len() as f64);
                    let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (site, &t) in targets.iter().enumerate() {
                        let (b, rest) = (site / (groups * plane), site % (groups * plane));
                        let (gi, p) = (rest / plane, rest % plane);
                        d[(b * gk + gi * classes + t) * plane + p] -= scale;
                    }
                    acc(&mut grads, *logits, &d);
                }
                Op::L1 { pred, target } => {
                    let scale = g[0] / T::of(target.len() as f64);
                    let d: Vec<T> = self
                        .value(*pred)
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(&p, &t)| {
                            if p > t {
                                scale
                            } else if p < t {
                                -scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    acc(&mut grads, *pred, &d);
                }
                Op::Sum(x) => {
                    let d = vec![g[0]; self.value(*x).len()];
                    acc(&mut grads, *x, &d);
                }
                Op::GradScale(x, k) => {
                    if *k != T::zero() {
                        let d: Vec<T> = g.iter().map(|&g| g * *k).collect();
                        acc(&mut grads, *x, &d);
                    }
                }
            }
        }
        store.mark_populated();
        Ok(Gradients { grads })
    }

    /// Whether any gradient can usefully flow into `v` (skips the input
    /// gradient of a first-layer convolution over constant data).
    fn wants(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf { requires_grad: false })
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, d: &[T]) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(d).for_each(|(g, &d)| *g += d),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Overwrites `xs` with its log-softmax; returns the log-sum-exp.
pub(crate) fn log_softmax_in_place<T: Real>(xs: &mut [T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    xs.iter_mut().for_each(|x| *x -= lse);
    lse
}
