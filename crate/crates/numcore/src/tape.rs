//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its forward value and the handles of its
//! inputs. [`Tape::backward`] walks the nodes in reverse creation order, so the
//! graph is acyclic by construction. A tape is meant to live for one training
//! step; build a fresh one (or call [`Tape::reset`]) for the next.

use crate::error::{dim_err, NumError, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// Duplicate each cell `factor` times per axis.
    Nearest,
    /// Block mean over `factor×factor` cells.
    Average,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvT2d { x: Var, w: Var, stride: usize, pad: usize },
    AddBias { x: Var, b: Var },
    AddBroadcast { x: Var, y: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    BlockMean { x: Var, factor: usize },
    Nearest { x: Var, factor: usize },
    StraightThrough(Var),
    Mae(Var, Var),
    Mse(Var, Var),
    Mean(Var),
    WeightedSum(Vec<(Var, f32)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    /// Records a leaf. Its `requires_grad` flag decides whether gradients are
    /// tracked; any stored gradient on `t` is ignored.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs_grad = t.requires_grad;
        let mut value = Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .expect("tensor invariant: data length matches shape");
        value.requires_grad = needs_grad;
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of the last loss(es) w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `param.grad`.
    pub fn accumulate_into(&self, v: Var, param: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => param.accumulate_grad(g),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        let needs_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, .. } | Op::ConvT2d { x, w, .. } => vec![*x, *w],
            Op::AddBias { x, b } => vec![*x, *b],
            Op::AddBroadcast { x, y } => vec![*x, *y],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mae(a, b) | Op::Mse(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::StraightThrough(a)
            | Op::Mean(a) => vec![*a],
            Op::BlockMean { x, .. } | Op::Nearest { x, .. } => vec![*x],
            Op::WeightedSum(terms) => terms.iter().map(|(v, _)| *v).collect(),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return dim_err(op, format!("{:?} vs {:?}", sa, sb));
        }
        Ok(())
    }

    fn nchw(&self, op: &'static str, v: Var) -> Result<[usize; 4]> {
        match *self.shape(v) {
            [n, c, h, w] => Ok([n, c, h, w]),
            ref s => dim_err(op, format!("expected a 4-D tensor, got {:?}", s)),
        }
    }

    /// Strided 2-D convolution. `x` is `[N,C,H,W]`, `w` is `[F,C,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, wd] = self.nchw("conv2d", x)?;
        let [f, wc, kh, kw] = self.nchw("conv2d", w)?;
        if wc != c {
            return dim_err("conv2d", format!("kernel expects {wc} channels, input has {c}"));
        }
        let (Some(oh), Some(ow)) = (
            kernels::conv2d_out_extent(h, kh, stride, pad),
            kernels::conv2d_out_extent(wd, kw, stride, pad),
        ) else {
            return dim_err(
                "conv2d",
                format!("kernel {kh}x{kw} stride {stride} pad {pad} does not fit {h}x{wd}"),
            );
        };
        let g = ConvGeom { c, h, w: wd, kh, kw, stride, pad, oh, ow };
        let mut y = vec![0.0; n * f * oh * ow];
        kernels::conv2d_forward(&g, n, f, self.value(x).data(), self.value(w).data(), &mut y);
        let value = Tensor::new([n, f, oh, ow], y)?;
        self.push_checked(value, Op::Conv2d { x, w, stride, pad }, "conv2d")
    }

    /// Transposed convolution. `x` is `[N,C,H,W]`, `w` is `[C,F,kh,kw]`; the
    /// output is `[N,F,(H-1)·stride-2·pad+kh, …]`, the shape inverse of
    /// [`Tape::conv2d`] with the same parameters.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, wd] = self.nchw("conv_transpose2d", x)?;
        let [wc, f, kh, kw] = self.nchw("conv_transpose2d", w)?;
        if wc != c {
            return dim_err(
                "conv_transpose2d",
                format!("kernel expects {wc} input channels, input has {c}"),
            );
        }
        let (Some(oh), Some(ow)) = (
            kernels::conv_transpose2d_out_extent(h, kh, stride, pad),
            kernels::conv_transpose2d_out_extent(wd, kw, stride, pad),
        ) else {
            return dim_err("conv_transpose2d", "padding exceeds the output extent");
        };
        let g = ConvGeom { c: f, h: oh, w: ow, kh, kw, stride, pad, oh: h, ow: wd };
        let mut y = vec![0.0; n * f * oh * ow];
        kernels::conv_t2d_forward(&g, n, c, self.value(x).data(), self.value(w).data(), &mut y);
        let value = Tensor::new([n, f, oh, ow], y)?;
        self.push_checked(value, Op::ConvT2d { x, w, stride, pad }, "conv_transpose2d")
    }

    /// Adds a per-channel bias `b: [C]` to `x: [N,C,…]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b);
        if xs.len() < 2 || bs != [xs[1]] {
            return dim_err("add_bias", format!("bias {:?} for input {:?}", bs, xs));
        }
        let inner: usize = xs[2..].iter().product();
        let c = xs[1];
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let bv = bias[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let value = Tensor::new(xs, out)?;
        self.push_checked(value, Op::AddBias { x, b }, "add_bias")
    }

    /// Adds `y` to every leading-axis slice of `x` (`y` has the shape of `x`
    /// without its first axis).
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || self.shape(y) != &xs[1..] {
            return dim_err("add_broadcast", format!("{:?} onto {:?}", self.shape(y), xs));
        }
        let yv = self.value(y).data();
        let mut out = self.value(x).data().to_vec();
        for chunk in out.chunks_mut(yv.len().max(1)) {
            chunk.iter_mut().zip(yv).for_each(|(a, b)| *a += b);
        }
        let value = Tensor::new(xs, out)?;
        self.push_checked(value, Op::AddBroadcast { x, y }, "add_broadcast")
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(self.shape(a).to_vec(), out).expect("shapes checked by caller")
    }

    fn map_value(&self, a: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let out = self.value(a).data().iter().map(|&p| f(p)).collect();
        Tensor::new(self.shape(a).to_vec(), out).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_values(a, b, |p, q| p + q);
        self.push_checked(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_values(a, b, |p, q| p - q);
        self.push_checked(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_values(a, b, |p, q| p * q);
        self.push_checked(v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        let v = self.map_value(a, |p| p * s);
        self.push_checked(v, Op::Scale(a, s), "scale")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Result<Var> {
        let v = self.map_value(a, |p| if p > 0.0 { p } else { p * slope });
        self.push_checked(v, Op::LeakyRelu(a, slope), "leaky_relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.map_value(a, |p| 1.0 / (1.0 + (-p).exp()));
        self.push_checked(v, Op::Sigmoid(a), "sigmoid")
    }

    /// Spatial resampling of the trailing two axes by an integer factor.
    /// `Average` requires both extents to be divisible by `factor`.
    pub fn resample(&mut self, x: Var, factor: usize, mode: ResampleMode) -> Result<Var> {
        if factor == 0 {
            return Err(NumError::InvalidArgument {
                op: "resample",
                detail: "factor must be at least 1".into(),
            });
        }
        let Some((h, w)) = self.value(x).hw() else {
            return dim_err("resample", "needs at least two axes");
        };
        match mode {
            ResampleMode::Nearest => self.nearest_up(x, factor, h * factor, w * factor),
            ResampleMode::Average => {
                if h % factor != 0 || w % factor != 0 {
                    return dim_err(
                        "resample",
                        format!("{h}x{w} is not divisible by factor {factor}"),
                    );
                }
                self.block_mean(x, factor)
            }
        }
    }

    /// Block mean over `factor×factor` cells of the trailing axes. Trailing
    /// partial blocks average only the cells they contain, so the output
    /// extent is `ceil(extent / factor)`.
    pub fn block_mean(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((h, w)) = self.value(x).hw() else {
            return dim_err("block_mean", "needs at least two axes");
        };
        if factor == 0 {
            return dim_err("block_mean", "factor must be at least 1");
        }
        let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
        let planes = self.value(x).len() / (h * w).max(1);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; planes * oh * ow];
        for p in 0..planes {
            let sp = &src[p * h * w..(p + 1) * h * w];
            let op = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for by in 0..oh {
                let (y0, y1) = (by * factor, ((by + 1) * factor).min(h));
                for bx in 0..ow {
                    let (x0, x1) = (bx * factor, ((bx + 1) * factor).min(w));
                    let mut acc = 0.0f32;
                    for yy in y0..y1 {
                        acc += sp[yy * w + x0..yy * w + x1].iter().sum::<f32>();
                    }
                    op[by * ow + bx] = acc / ((y1 - y0) * (x1 - x0)) as f32;
                }
            }
        }
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape[n - 2] = oh;
        out_shape[n - 1] = ow;
        let value = Tensor::new(out_shape, out)?;
        self.push_checked(value, Op::BlockMean { x, factor }, "block_mean")
    }

    /// Nearest-neighbour upsampling by `factor`, cropped to `out_h×out_w`
    /// (which must lie in `((h-1)·factor, h·factor]` per axis).
    pub fn nearest_up(&mut self, x: Var, factor: usize, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((h, w)) = self.value(x).hw() else {
            return dim_err("nearest_up", "needs at least two axes");
        };
        if factor == 0 || out_h.div_ceil(factor) != h || out_w.div_ceil(factor) != w {
            return dim_err(
                "nearest_up",
                format!("{h}x{w} by {factor} cannot produce {out_h}x{out_w}"),
            );
        }
        let planes = self.value(x).len() / (h * w).max(1);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; planes * out_h * out_w];
        for p in 0..planes {
            let sp = &src[p * h * w..(p + 1) * h * w];
            let op = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for yy in 0..out_h {
                let row = &sp[(yy / factor) * w..(yy / factor + 1) * w];
                for xx in 0..out_w {
                    op[yy * out_w + xx] = row[xx / factor];
                }
            }
        }
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape[n - 2] = out_h;
        out_shape[n - 1] = out_w;
        let value = Tensor::new(out_shape, out)?;
        self.push_checked(value, Op::Nearest { x, factor }, "nearest_up")
    }

    /// Forward value `value`, backward identity onto `x` (the straight-through
    /// estimator for a non-differentiable map such as quantization).
    pub fn straight_through(&mut self, x: Var, value: Tensor) -> Result<Var> {
        if value.shape() != self.shape(x) {
            return dim_err(
                "straight_through",
                format!("{:?} vs {:?}", value.shape(), self.shape(x)),
            );
        }
        self.push_checked(value, Op::StraightThrough(x), "straight_through")
    }

    /// Mean absolute error as a scalar.
    pub fn mae(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mae", a, b)?;
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| (p - q).abs() as f64)
            .sum();
        self.push_checked(Tensor::scalar((s / n) as f32), Op::Mae(a, b), "mae")
    }

    /// Mean squared error as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| {
                let d = (p - q) as f64;
                d * d
            })
            .sum();
        self.push_checked(Tensor::scalar((s / n) as f32), Op::Mse(a, b), "mse")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self.value(a).data().iter().map(|&p| p as f64).sum();
        self.push_checked(Tensor::scalar((s / n) as f32), Op::Mean(a), "mean")
    }

    /// `Σ wᵢ·termᵢ` over single-element terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Result<Var> {
        let mut s = 0.0f32;
        for &(v, w) in terms {
            match self.value(v).item() {
                Some(x) => s += w * x,
                None => {
                    return dim_err(
                        "weighted_sum",
                        format!("term of shape {:?} is not a scalar", self.shape(v)),
                    )
                }
            }
        }
        self.push_checked(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), "weighted_sum")
    }

    /// Back-propagates from a single-element `loss`, adding into the stored
    /// gradients of every node that depends on a `requires_grad` leaf.
    /// Repeated calls sum.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NumError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
            match &mut self.grads[id] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) -> Result<()> {
        let node = &self.nodes[id];
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let zeros = |v: Var| vec![0.0f32; self.nodes[v.0].value.len()];
        // Takes the gradient slot of `$v` out of `grads`, runs `$body` on it,
        // and puts it back.
        macro_rules! with_grad {
            ($v:expr, |$acc:ident| $body:expr) => {
                if needs($v) {
                    let v = $v;
                    let mut buf = grads[v.0].take().unwrap_or_else(|| zeros(v));
                    {
                        let $acc: &mut Vec<f32> = &mut buf;
                        $body;
                    }
                    grads[v.0] = Some(buf);
                }
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                with_grad!(*a, |acc| add_into(acc, g));
                with_grad!(*b, |acc| add_into(acc, g));
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |acc| add_into(acc, g));
                with_grad!(*b, |acc| acc.iter_mut().zip(g).for_each(|(p, q)| *p -= q));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * bv[i];
                    }
                });
                with_grad!(*b, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, s) => with_grad!(*a, |acc| acc.iter_mut().zip(g).for_each(|(p, q)| *p += s * q)),
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a).data();
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += if av[i] > 0.0 { g[i] } else { g[i] * slope };
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = node.value.data();
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::StraightThrough(a) => with_grad!(*a, |acc| add_into(acc, g)),
            Op::AddBias { x, b } => {
                with_grad!(*x, |acc| add_into(acc, g));
                let xs = self.shape(*x);
                let (c, inner) = (xs[1], xs[2..].iter().product::<usize>());
                with_grad!(*b, |acc| {
                    for (i, chunk) in g.chunks(inner).enumerate() {
                        acc[i % c] += chunk.iter().sum::<f32>();
                    }
                });
            }
            Op::AddBroadcast { x, y } => {
                with_grad!(*x, |acc| add_into(acc, g));
                with_grad!(*y, |acc| {
                    let n = acc.len().max(1);
                    for chunk in g.chunks(n) {
                        add_into(acc, chunk);
                    }
                });
            }
            Op::BlockMean { x, factor } => {
                let (h, w) = self.value(*x).hw().expect("checked in forward");
                let (oh, ow) = node.value.hw().expect("checked in forward");
                let f = *factor;
                with_grad!(*x, |acc| {
                    let planes = acc.len() / (h * w).max(1);
                    for p in 0..planes {
                        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                        let ap = &mut acc[p * h * w..(p + 1) * h * w];
                        for yy in 0..h {
                            let by = yy / f;
                            let bh = ((by + 1) * f).min(h) - by * f;
                            for xx in 0..w {
                                let bx = xx / f;
                                let bw = ((bx + 1) * f).min(w) - bx * f;
                                ap[yy * w + xx] += gp[by * ow + bx] / (bh * bw) as f32;
                            }
                        }
                    }
                });
            }
            Op::Nearest { x, factor } => {
                let (h, w) = self.value(*x).hw().expect("checked in forward");
                let (oh, ow) = node.value.hw().expect("checked in forward");
                let f = *factor;
                with_grad!(*x, |acc| {
                    let planes = acc.len() / (h * w).max(1);
                    for p in 0..planes {
                        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                        let ap = &mut acc[p * h * w..(p + 1) * h * w];
                        for yy in 0..oh {
                            for xx in 0..ow {
                                ap[(yy / f) * w + xx / f] += gp[yy * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Mae(a, b) => {
                let n = self.value(*a).len().max(1) as f32;
                let s = g[0] / n;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let sign = |i: usize| {
                    let d = av[i] - bv[i];
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += s * sign(i);
                    }
                });
                with_grad!(*b, |acc| {
                    for i in 0..acc.len() {
                        acc[i] -= s * sign(i);
                    }
                });
            }
            Op::Mse(a, b) => {
                let n = self.value(*a).len().max(1) as f32;
                let s = 2.0 * g[0] / n;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += s * (av[i] - bv[i]);
                    }
                });
                with_grad!(*b, |acc| {
                    for i in 0..acc.len() {
                        acc[i] -= s * (av[i] - bv[i]);
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f32;
                with_grad!(*a, |acc| acc.iter_mut().for_each(|p| *p += g[0] / n));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    with_grad!(v, |acc| acc[0] += w * g[0]);
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let [n, c, h, wd] = self.nchw("conv2d", *x)?;
                let [f, _, kh, kw] = self.nchw("conv2d", *w)?;
                let (oh, ow) = node.value.hw().expect("4-D output");
                let geom = ConvGeom { c, h, w: wd, kh, kw, stride: *stride, pad: *pad, oh, ow };
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = needs(*x).then(|| grads[x.0].take().unwrap_or_else(|| zeros(*x)));
                let mut dw = needs(*w).then(|| grads[w.0].take().unwrap_or_else(|| zeros(*w)));
                kernels::conv2d_backward(&geom, n, f, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    grads[w.0] = Some(dw);
                }
            }
            Op::ConvT2d { x, w, stride, pad } => {
                let [n, c, h, wd] = self.nchw("conv_transpose2d", *x)?;
                let [_, f, kh, kw] = self.nchw("conv_transpose2d", *w)?;
                let (oh, ow) = node.value.hw().expect("4-D output");
                let geom = ConvGeom { c: f, h: oh, w: ow, kh, kw, stride: *stride, pad: *pad, oh: h, ow: wd };
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = needs(*x).then(|| grads[x.0].take().unwrap_or_else(|| zeros(*x)));
                let mut dw = needs(*w).then(|| grads[w.0].take().unwrap_or_else(|| zeros(*w)));
                kernels::conv_t2d_backward(&geom, n, c, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    grads[w.0] = Some(dw);
                }
            }
        }
        Ok(())
    }
}

fn add_into(acc: &mut [f32], g: &[f32]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}
