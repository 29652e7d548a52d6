use super::kernels::{self, ConvGeometry};
use super::{AutodiffError, Tensor};

/// Variance guard used by batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Fraction of the old running statistic kept on every update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Storage precision of recorded values.
///
/// `F32` rounds every forward result (and every accumulated gradient) to the
/// nearest `f32`; the arithmetic itself stays in `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    #[inline]
    fn round(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
        }
    }
}

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
}

/// Right-hand side of an elementwise op.
#[derive(Clone, Copy, Debug)]
pub enum Operand {
    Var(Var),
    Scalar(f64),
}

impl From<Var> for Operand {
    fn from(v: Var) -> Self {
        Operand::Var(v)
    }
}

impl From<f64> for Operand {
    fn from(v: f64) -> Self {
        Operand::Scalar(v)
    }
}

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub enum BatchNormMode<'a> {
    /// Normalize with batch statistics; fold them into the running stats
    /// when given.
    Train(Option<&'a mut RunningStats>),
    /// Normalize with stored running statistics.
    Infer(&'a RunningStats),
}

enum Op {
    Leaf,
    Binary {
        kind: ElementwiseKind,
        a: Var,
        b: Var,
    },
    AddScalar(Var),
    MulScalar(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    MatMul(Var, Var),
    ChannelBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    Upsample2x(Var),
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Concat(Vec<Var>),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of tensor operations with reverse-mode
/// differentiation.
///
/// Nodes are stored in creation order, which is a topological order, so
/// `backward` is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
}

fn shape_mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument { op, msg: msg.into() }
}

#[inline]
fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `(leading, channels, trailing)` extents around dimension 1.
fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            let p = self.precision;
            value.data_mut().iter_mut().for_each(|v| *v = p.round(*v));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies the value of `v` into a fresh constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Gradient of the last `backward` loss with respect to `v`; zeros when
    /// `v` is differentiable but was not reached, `None` for constants.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = self.node(v);
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match &node.grad {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient length matches value"),
            None => Tensor::zeros(shape),
        })
    }

    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: impl Into<Operand>) -> Result<Var, AutodiffError> {
        match b.into() {
            Operand::Scalar(s) => Ok(match kind {
                ElementwiseKind::Add => self.add_scalar(a, s),
                ElementwiseKind::Sub => self.add_scalar(a, -s),
                ElementwiseKind::Mul => self.mul_scalar(a, s),
            }),
            Operand::Var(b) => self.binary(kind, a, b),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    fn binary(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = if ta.shape() == tb.shape() || tb.numel() == 1 {
            ta.shape().to_vec()
        } else if ta.numel() == 1 {
            tb.shape().to_vec()
        } else {
            return Err(shape_mismatch("elementwise", ta.shape(), tb.shape()));
        };
        let len: usize = out_shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let (sa, sb) = (da.len() == len, db.len() == len);
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            ElementwiseKind::Mul => |x, y| x * y,
        };
        let data = (0..len)
            .map(|i| f(da[if sa { i } else { 0 }], db[if sb { i } else { 0 }]))
            .collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Binary { kind, a, b }, rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v + s).collect()).expect("same shape");
        let rg = self.needs(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * s).collect()).expect("same shape");
        let rg = self.needs(a);
        self.push(out, Op::MulScalar(a, s), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        let rg = self.needs(a);
        self.push(out, op, rg)
    }

    /// `x` for `x ≥ 0`, `leak · x` otherwise; slope 1 at zero.
    pub fn leaky_relu(&mut self, a: Var, leak: f64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&leak) {
            return Err(invalid("leaky_relu", format!("leak {leak} outside [0, 1)")));
        }
        Ok(self.unary(a, Op::LeakyRelu(a, leak), |x| if x >= 0.0 { x } else { leak * x }))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus_scalar)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(invalid("log", format!("non-positive input {bad}")));
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input lies
    /// strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.needs(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// `[M, K] · [K, N] → [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_mismatch("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds `bias[c]` along dimension 1 of a rank ≥ 2 tensor.
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.rank() < 2 || tb.shape() != [ta.shape()[1]] {
            return Err(shape_mismatch("add_channel_bias", ta.shape(), tb.shape()));
        }
        let (lead, ch, trail) = channel_layout(ta.shape());
        let mut out = ta.data().to_vec();
        for n in 0..lead {
            for c in 0..ch {
                let b = tb.data()[c];
                out[(n * ch + c) * trail..][..trail].iter_mut().for_each(|v| *v += b);
            }
        }
        let out = Tensor::new(ta.shape(), out)?;
        let rg = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::ChannelBias(a, bias), rg))
    }

    /// Cross-correlation of an NCHW batch with an `[O, C, k, k]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let (ti, tk) = (self.value(input), self.value(kernel));
        if ti.rank() != 4 || tk.rank() != 4 || ti.shape()[1] != tk.shape()[1] || tk.shape()[2] != tk.shape()[3] {
            return Err(shape_mismatch("conv2d", ti.shape(), tk.shape()));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be at least 1"));
        }
        let (n, c, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2], ti.shape()[3]);
        let (o, k) = (tk.shape()[0], tk.shape()[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(invalid(
                "conv2d",
                format!("kernel {k} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let geom = ConvGeometry {
            batch: n,
            channels: c,
            height: h,
            width: w,
            kernel: k,
            stride,
            pad,
            out_height: (h + 2 * pad - k) / stride + 1,
            out_width: (w + 2 * pad - k) / stride + 1,
        };
        let cols = kernels::im2col(ti.data(), &geom);
        let mut mat = vec![0.0; o * geom.columns()];
        kernels::gemm(o, geom.patch_len(), geom.columns(), tk.data(), false, &cols, false, &mut mat, false);
        let out = kernels::channel_major_to_batch_major(&mat, n, o, geom.positions());
        let out = Tensor::new([n, o, geom.out_height, geom.out_width], out)?;
        let rg = self.needs(input) || self.needs(kernel);
        // Patches are only needed for the kernel gradient.
        let cols = if self.needs(kernel) { cols } else { Vec::new() };
        Ok(self.push(out, Op::Conv2d { input, kernel, geom, cols }, rg))
    }

    /// Nearest-neighbour 2× upsampling of an NCHW batch.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let t = self.value(input);
        if t.rank() != 4 {
            return Err(invalid("upsample2x", format!("expected NCHW input, got {:?}", t.shape())));
        }
        let (n, c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
        let src = t.data();
        let mut out = vec![0.0; n * c * 4 * h * w];
        for plane in 0..n * c {
            let s = &src[plane * h * w..][..h * w];
            let d = &mut out[plane * 4 * h * w..][..4 * h * w];
            for y in 0..2 * h {
                for x in 0..2 * w {
                    d[y * 2 * w + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        let out = Tensor::new([n, c, 2 * h, 2 * w], out)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Upsample2x(input), rg))
    }

    /// Per-channel normalization over every dimension except 1, followed by
    /// the affine `scale`/`shift`.
    pub fn batchnorm(&mut self, input: Var, scale: Var, shift: Var, mode: BatchNormMode<'_>) -> Result<Var, AutodiffError> {
        let t = self.value(input);
        if t.rank() < 2 {
            return Err(invalid("batchnorm", format!("expected rank >= 2, got {:?}", t.shape())));
        }
        let (lead, ch, trail) = channel_layout(t.shape());
        for p in [scale, shift] {
            if self.shape(p) != [ch] {
                return Err(shape_mismatch("batchnorm", t.shape(), self.shape(p)));
            }
        }
        let count = (lead * trail) as f64;
        let x = t.data();
        let (mean, inv_std, train) = match mode {
            BatchNormMode::Train(running) => {
                if lead < 2 {
                    return Err(invalid("batchnorm", "train mode needs a batch of at least 2"));
                }
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for n in 0..lead {
                        s += x[(n * ch + c) * trail..][..trail].iter().sum::<f64>();
                    }
                    let m = s / count;
                    let mut v = 0.0;
                    for n in 0..lead {
                        v += x[(n * ch + c) * trail..][..trail].iter().map(|&e| (e - m) * (e - m)).sum::<f64>();
                    }
                    mean[c] = m;
                    var[c] = v / count;
                }
                if let Some(rs) = running {
                    if rs.mean.len() != ch || rs.var.len() != ch {
                        return Err(invalid("batchnorm", "running stats channel count mismatch"));
                    }
                    for c in 0..ch {
                        rs.mean[c] = BN_MOMENTUM * rs.mean[c] + (1.0 - BN_MOMENTUM) * mean[c];
                        rs.var[c] = BN_MOMENTUM * rs.var[c] + (1.0 - BN_MOMENTUM) * var[c];
                    }
                }
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (mean, inv, true)
            }
            BatchNormMode::Infer(rs) => {
                if rs.mean.len() != ch || rs.var.len() != ch {
                    return Err(invalid("batchnorm", "running stats channel count mismatch"));
                }
                let inv = rs.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (rs.mean.clone(), inv, false)
            }
        };
        let (sc, sh) = (self.value(scale).data(), self.value(shift).data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for n in 0..lead {
            for c in 0..ch {
                let base = (n * ch + c) * trail;
                for i in base..base + trail {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = h * sc[c] + sh[c];
                }
            }
        }
        let out = Tensor::new(t.shape(), out)?;
        let rg = self.needs(input) || self.needs(scale) || self.needs(shift);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                train,
            },
            rg,
        ))
    }

    /// Concatenates along dimension 1, keeping input order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let first = *inputs.first().ok_or_else(|| invalid("concat_channels", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if base.len() < 2 {
            return Err(invalid("concat_channels", format!("expected rank >= 2, got {base:?}")));
        }
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return Err(shape_mismatch("concat_channels", &base, s));
            }
            channels += s[1];
        }
        let (lead, trail) = (base[0], base[2..].iter().product::<usize>());
        let mut out = Vec::with_capacity(lead * channels * trail);
        for n in 0..lead {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[1] * trail;
                out.extend_from_slice(&t.data()[n * block..][..block]);
            }
        }
        let mut shape = base;
        shape[1] = channels;
        let rg = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(inputs.to_vec()), rg))
    }

    /// Populates gradients of `loss` with respect to every differentiable
    /// node, discarding those of any previous call.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.needs(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        let precision = self.precision;
        for i in (0..=loss.0).rev() {
            let (lower, upper) = self.nodes.split_at_mut(i);
            let node = &mut upper[0];
            if !node.requires_grad {
                continue;
            }
            let Some(mut g) = node.grad.take() else { continue };
            if precision == Precision::F32 {
                g.iter_mut().for_each(|v| *v = precision.round(*v));
            }
            backprop(lower, node, &g);
            node.grad = Some(g);
        }
        Ok(())
    }
}

/// Gradient buffer of `v`, allocated on first touch; `None` for constants.
fn grad_slot(nodes: &mut [Node], v: Var) -> Option<&mut [f64]> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.numel();
    Some(node.grad.get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
}

fn accumulate(nodes: &mut [Node], v: Var, contribution: impl Iterator<Item = f64>) {
    if let Some(slot) = grad_slot(nodes, v) {
        slot.iter_mut().zip(contribution).for_each(|(s, c)| *s += c);
    }
}

/// Sums `g` (or `g ⊙ other`) into a broadcast operand.
fn accumulate_maybe_broadcast(nodes: &mut [Node], v: Var, g: &[f64], factor: impl Fn(usize) -> f64) {
    let len = nodes[v.0].value.numel();
    if len == g.len() {
        accumulate(nodes, v, g.iter().enumerate().map(|(i, &gi)| gi * factor(i)));
    } else {
        let total: f64 = g.iter().enumerate().map(|(i, &gi)| gi * factor(i)).sum();
        accumulate(nodes, v, std::iter::once(total));
    }
}

fn backprop(lower: &mut [Node], node: &Node, g: &[f64]) {
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => {
            let (a, b) = (*a, *b);
            match kind {
                ElementwiseKind::Add => {
                    accumulate_maybe_broadcast(lower, a, g, |_| 1.0);
                    accumulate_maybe_broadcast(lower, b, g, |_| 1.0);
                }
                ElementwiseKind::Sub => {
                    accumulate_maybe_broadcast(lower, a, g, |_| 1.0);
                    accumulate_maybe_broadcast(lower, b, g, |_| -1.0);
                }
                ElementwiseKind::Mul => {
                    let av = lower[a.0].value.data().to_vec();
                    let bv = lower[b.0].value.data().to_vec();
                    let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                    accumulate_maybe_broadcast(lower, a, g, |i| pick(&bv, i));
                    accumulate_maybe_broadcast(lower, b, g, |i| pick(&av, i));
                }
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(lower, *a, g.iter().copied()),
        Op::MulScalar(a, s) => accumulate(lower, *a, g.iter().map(|v| v * s)),
        Op::LeakyRelu(a, leak) => {
            let x = lower[a.0].value.data().to_vec();
            accumulate(lower, *a, g.iter().zip(x).map(|(gi, xi)| if xi >= 0.0 { *gi } else { gi * leak }));
        }
        Op::Sigmoid(a) => accumulate(lower, *a, g.iter().zip(out).map(|(gi, y)| gi * y * (1.0 - y))),
        Op::Log(a) => {
            let x = lower[a.0].value.data().to_vec();
            accumulate(lower, *a, g.iter().zip(x).map(|(gi, xi)| gi / xi));
        }
        Op::Softplus(a) => {
            let x = lower[a.0].value.data().to_vec();
            accumulate(lower, *a, g.iter().zip(x).map(|(gi, xi)| gi * sigmoid_scalar(xi)));
        }
        Op::Clamp(a, lo, hi) => {
            let x = lower[a.0].value.data().to_vec();
            accumulate(
                lower,
                *a,
                g.iter().zip(x).map(|(gi, xi)| if xi > *lo && xi < *hi { *gi } else { 0.0 }),
            );
        }
        Op::Sum(a) => {
            let n = lower[a.0].value.numel();
            accumulate(lower, *a, std::iter::repeat_n(g[0], n));
        }
        Op::Mean(a) => {
            let n = lower[a.0].value.numel();
            accumulate(lower, *a, std::iter::repeat_n(g[0] / n as f64, n));
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let (m, k) = (lower[a.0].value.shape()[0], lower[a.0].value.shape()[1]);
            let n = lower[b.0].value.shape()[1];
            if lower[a.0].requires_grad {
                let bv = lower[b.0].value.data().to_vec();
                let slot = grad_slot(lower, a).expect("requires grad");
                kernels::gemm(m, n, k, g, false, &bv, true, slot, true);
            }
            if lower[b.0].requires_grad {
                let av = lower[a.0].value.data().to_vec();
                let slot = grad_slot(lower, b).expect("requires grad");
                kernels::gemm(k, m, n, &av, true, g, false, slot, true);
            }
        }
        Op::ChannelBias(a, bias) => {
            accumulate(lower, *a, g.iter().copied());
            let (lead, ch, trail) = channel_layout(node.value.shape());
            if let Some(slot) = grad_slot(lower, *bias) {
                for n in 0..lead {
                    for (c, s) in slot.iter_mut().enumerate().take(ch) {
                        *s += g[(n * ch + c) * trail..][..trail].iter().sum::<f64>();
                    }
                }
            }
        }
        Op::Conv2d { input, kernel, geom, cols } => {
            let o = lower[kernel.0].value.shape()[0];
            let dmat = kernels::batch_major_to_channel_major(g, geom.batch, o, geom.positions());
            if lower[kernel.0].requires_grad {
                let slot = grad_slot(lower, *kernel).expect("requires grad");
                kernels::gemm(o, geom.columns(), geom.patch_len(), &dmat, false, cols, true, slot, true);
            }
            if lower[input.0].requires_grad {
                let mut dcols = vec![0.0; geom.patch_len() * geom.columns()];
                let w = lower[kernel.0].value.data();
                kernels::gemm(geom.patch_len(), o, geom.columns(), w, true, &dmat, false, &mut dcols, false);
                let slot = grad_slot(lower, *input).expect("requires grad");
                kernels::col2im(&dcols, geom, slot);
            }
        }
        Op::Upsample2x(a) => {
            let s = node.value.shape();
            let (planes, h2, w2) = (s[0] * s[1], s[2], s[3]);
            let (h, w) = (h2 / 2, w2 / 2);
            if let Some(slot) = grad_slot(lower, *a) {
                for p in 0..planes {
                    let gp = &g[p * h2 * w2..][..h2 * w2];
                    let dp = &mut slot[p * h * w..][..h * w];
                    for y in 0..h2 {
                        for x in 0..w2 {
                            dp[(y / 2) * w + x / 2] += gp[y * w2 + x];
                        }
                    }
                }
            }
        }
        Op::BatchNorm {
            input,
            scale,
            shift,
            xhat,
            inv_std,
            train,
        } => {
            let (lead, ch, trail) = channel_layout(node.value.shape());
            let count = (lead * trail) as f64;
            let sc = lower[scale.0].value.data().to_vec();
            let mut sum_g = vec![0.0; ch];
            let mut sum_gx = vec![0.0; ch];
            for n in 0..lead {
                for c in 0..ch {
                    let base = (n * ch + c) * trail;
                    for i in base..base + trail {
                        sum_g[c] += g[i];
                        sum_gx[c] += g[i] * xhat[i];
                    }
                }
            }
            if let Some(slot) = grad_slot(lower, *shift) {
                slot.iter_mut().zip(&sum_g).for_each(|(s, v)| *s += v);
            }
            if let Some(slot) = grad_slot(lower, *scale) {
                slot.iter_mut().zip(&sum_gx).for_each(|(s, v)| *s += v);
            }
            if let Some(slot) = grad_slot(lower, *input) {
                for n in 0..lead {
                    for c in 0..ch {
                        let base = (n * ch + c) * trail;
                        let k = sc[c] * inv_std[c];
                        for i in base..base + trail {
                            slot[i] += if *train {
                                k * (g[i] - sum_g[c] / count - xhat[i] * sum_gx[c] / count)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
            }
        }
        Op::Concat(inputs) => {
            let s = node.value.shape();
            let (lead, ch, trail) = channel_layout(s);
            let mut offset = 0;
            for &v in inputs {
                let cv = lower[v.0].value.shape()[1];
                if let Some(slot) = grad_slot(lower, v) {
                    for n in 0..lead {
                        let src = &g[(n * ch + offset) * trail..][..cv * trail];
                        slot[n * cv * trail..][..cv * trail]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                }
                offset += cv;
            }
        }
    }
}
