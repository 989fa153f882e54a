use super::conv::{conv2d_backward, conv2d_forward_raw, conv_output_extent};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Exp,
    Log,
    Sigmoid,
    /// Straight-through inside `[lo, hi]`, zero gradient outside.
    Clamp { lo: f64, hi: f64 },
    LeakyRelu { slope: f64 },
    Abs,
    Square,
    AddScalar(f64),
    MulScalar(f64),
    PowScalar(f64),
}

/// Spatial axis of a channels × height × width tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// How an operand of a binary op maps onto the output index space.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Bcast {
    Full,
    Scalar,
    Channel { plane: usize },
}

impl Bcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Full => i,
            Bcast::Scalar => 0,
            Bcast::Channel { plane } => i / plane,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
        a_bc: Bcast,
        b_bc: Bcast,
    },
    Unary {
        op: UnaryOp,
        x: Var,
    },
    Sum(Var),
    Mean(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        offset: usize,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
    Softmax(Var),
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    PatchMean {
        x: Var,
        patch: usize,
    },
    ChannelMean(Var),
    SpatialDiff {
        x: Var,
        axis: Axis,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed primitives.
///
/// Values are immutable once recorded. A tape can be differentiated exactly
/// once; a second [`Tape::backward`] returns [`TensorError::TapeConsumed`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast, Bcast)> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a == b {
        return Ok((a.to_vec(), Bcast::Full, Bcast::Full));
    }
    if numel(b) == 1 {
        return Ok((a.to_vec(), Bcast::Full, Bcast::Scalar));
    }
    if numel(a) == 1 {
        return Ok((b.to_vec(), Bcast::Scalar, Bcast::Full));
    }
    if let (&[c, h, w], &[cb]) = (a, b) {
        if c == cb {
            return Ok((a.to_vec(), Bcast::Full, Bcast::Channel { plane: h * w }));
        }
    }
    if let (&[ca], &[c, h, w]) = (a, b) {
        if c == ca {
            return Ok((b.to_vec(), Bcast::Channel { plane: h * w }, Bcast::Full));
        }
    }
    Err(mismatch())
}

#[inline]
fn pow_value(x: f64, y: f64) -> f64 {
    if x == 0.0 && y > 0.0 {
        0.0
    } else {
        x.powf(y)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input; gradients flow into it but not beyond.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        assert!(!self.consumed, "cannot record on a consumed tape");
        self.nodes.push(Node {
            value: value.detached(),
            op: Op::Leaf,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the backward loss with respect to `v`; `None` means zero.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `v`, zeros if `v` was unreachable.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad length matches value"),
            None => Tensor::zeros(&shape),
        }
    }

    // ---- elementwise ----------------------------------------------------

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Pow => "pow",
        };
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        let (shape, a_bc, b_bc) = broadcast(name, av.shape(), bv.shape())?;
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = ad[a_bc.index(i)];
            let y = bd[b_bc.index(i)];
            let v = match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => {
                    if y == 0.0 {
                        return Err(TensorError::Domain {
                            op: name,
                            reason: "division by zero".into(),
                        });
                    }
                    x / y
                }
                BinaryOp::Pow => {
                    if x < 0.0 && y.fract() != 0.0 {
                        return Err(TensorError::Domain {
                            op: name,
                            reason: format!("negative base {x} with non-integer exponent {y}"),
                        });
                    }
                    if x == 0.0 && y < 0.0 {
                        return Err(TensorError::Domain {
                            op: name,
                            reason: "zero base with negative exponent".into(),
                        });
                    }
                    pow_value(x, y)
                }
            };
            out.push(v);
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::Binary {
                op,
                a,
                b,
                a_bc,
                b_bc,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn pow(&mut self, base: Var, exponent: Var) -> Result<Var> {
        self.binary(BinaryOp::Pow, base, exponent)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if let UnaryOp::Log = op {
            if let Some(bad) = xv.data().iter().find(|v| **v <= 0.0) {
                return Err(TensorError::Domain {
                    op: "log",
                    reason: format!("non-positive input {bad}"),
                });
            }
        }
        if let UnaryOp::PowScalar(p) = op {
            if let Some(bad) = xv
                .data()
                .iter()
                .find(|v| (**v < 0.0 && p.fract() != 0.0) || (**v == 0.0 && p < 0.0))
            {
                return Err(TensorError::Domain {
                    op: "pow",
                    reason: format!("base {bad} with exponent {p}"),
                });
            }
        }
        if let UnaryOp::Clamp { lo, hi } = op {
            if lo > hi {
                return Err(TensorError::Domain {
                    op: "clamp",
                    reason: format!("empty interval [{lo}, {hi}]"),
                });
            }
        }
        let f = |v: f64| match op {
            UnaryOp::Exp => v.exp(),
            UnaryOp::Log => v.ln(),
            UnaryOp::Sigmoid => sigmoid(v),
            UnaryOp::Clamp { lo, hi } => v.clamp(lo, hi),
            UnaryOp::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            UnaryOp::Abs => v.abs(),
            UnaryOp::Square => v * v,
            UnaryOp::AddScalar(s) => v + s,
            UnaryOp::MulScalar(s) => v * s,
            UnaryOp::PowScalar(p) => pow_value(v, p),
        };
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::Unary { op, x })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnaryOp::Clamp { lo, hi }, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(UnaryOp::LeakyRelu { slope }, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, x)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryOp::AddScalar(s), x)
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryOp::MulScalar(s), x)
    }

    pub fn pow_scalar(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary(UnaryOp::PowScalar(p), x)
    }

    // ---- reductions and structure --------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.node(x)?.value;
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Correlation of a C×H×W input with an O×C×kH×kW kernel plus bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (iv, wv, bv) = (
            &self.node(input)?.value,
            &self.node(weight)?.value,
            &self.node(bias)?.value,
        );
        let out = conv2d_forward_raw(iv, wv, bv, stride, padding)?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        )
    }

    /// Per-channel spatial mean: C×H×W → C.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = &self.node(x)?.value;
        let (c, h, w) = v.dims3()?;
        let plane = h * w;
        let data = v
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        self.push(Tensor::new(vec![c], data)?, Op::GlobalAvgPool(x))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .nodes
            .get(parts.first().ok_or(TensorError::InvalidShape {
                shape: vec![],
                reason: "concat of zero tensors".into(),
            })?.0)
            .ok_or(TensorError::UnknownVar(parts[0].0))?;
        let tail = first.value.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.shape()[1..] != tail[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()))
    }

    /// Contiguous range `[start, start + len)` along the leading axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = &self.node(x)?.value;
        let lead = v.shape()[0];
        if len == 0 || start + len > lead {
            return Err(TensorError::InvalidShape {
                shape: v.shape().to_vec(),
                reason: format!("narrow [{start}, {}) out of range", start + len),
            });
        }
        let inner: usize = v.shape()[1..].iter().product();
        let data = v.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        self.push(
            Tensor::new(shape, data)?,
            Op::Narrow {
                x,
                offset: start * inner,
            },
        )
    }

    /// Picks flat elements of `x` by index into a tensor of `shape`.
    pub fn gather(&mut self, x: Var, indices: &[usize], shape: &[usize]) -> Result<Var> {
        let v = &self.node(x)?.value;
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.len()) {
            return Err(TensorError::InvalidShape {
                shape: v.shape().to_vec(),
                reason: format!("gather index {bad} out of range"),
            });
        }
        let data = indices.iter().map(|&i| v.data()[i]).collect();
        self.push(
            Tensor::new(shape.to_vec(), data)?,
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    /// Softmax over all elements of `x`, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = &self.node(x)?.value;
        let max = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.data().iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let data = exps.into_iter().map(|e| e / total).collect();
        self.push(Tensor::new(v.shape().to_vec(), data)?, Op::Softmax(x))
    }

    /// Affine map of an n-vector by an m×n weight and m-vector bias.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (
            &self.node(x)?.value,
            &self.node(weight)?.value,
            &self.node(bias)?.value,
        );
        let n = xv.len();
        let (m, wn) = match wv.shape() {
            &[m, wn] => (m, wn),
            s => {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    lhs: xv.shape().to_vec(),
                    rhs: s.to_vec(),
                })
            }
        };
        if wn != n || bv.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let data = (0..m)
            .map(|r| {
                let row = &wv.data()[r * n..(r + 1) * n];
                bv.data()[r] + row.iter().zip(xv.data()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        self.push(Tensor::new(vec![m], data)?, Op::Linear { x, weight, bias })
    }

    /// Means over non-overlapping `patch`×`patch` windows; trailing partial
    /// windows are dropped.
    pub fn patch_mean(&mut self, x: Var, patch: usize) -> Result<Var> {
        let v = &self.node(x)?.value;
        let (c, h, w) = v.dims3()?;
        if patch == 0 || h < patch || w < patch {
            return Err(TensorError::InvalidShape {
                shape: v.shape().to_vec(),
                reason: format!("smaller than one {patch}x{patch} patch"),
            });
        }
        let (ph, pw) = (h / patch, w / patch);
        let norm = (patch * patch) as f64;
        let mut out = vec![0.0; c * ph * pw];
        for ch in 0..c {
            for y in 0..ph * patch {
                let row = &v.data()[(ch * h + y) * w..(ch * h + y) * w + pw * patch];
                let dst = &mut out[(ch * ph + y / patch) * pw..(ch * ph + y / patch + 1) * pw];
                for (px, chunk) in dst.iter_mut().zip(row.chunks(patch)) {
                    *px += chunk.iter().sum::<f64>();
                }
            }
        }
        for o in &mut out {
            *o /= norm;
        }
        self.push(Tensor::new(vec![c, ph, pw], out)?, Op::PatchMean { x, patch })
    }

    /// Mean across channels: C×H×W → 1×H×W.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.node(x)?.value;
        let (c, h, w) = v.dims3()?;
        let plane = h * w;
        let mut out = vec![0.0; plane];
        for ch in v.data().chunks(plane) {
            for (o, x) in out.iter_mut().zip(ch) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= c as f64;
        }
        self.push(Tensor::new(vec![1, h, w], out)?, Op::ChannelMean(x))
    }

    /// Forward difference `x[next] - x[here]` along a spatial axis.
    pub fn spatial_diff(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let v = &self.node(x)?.value;
        let (c, h, w) = v.dims3()?;
        let d = v.data();
        let (shape, data) = match axis {
            Axis::Horizontal => {
                if w < 2 {
                    return Err(TensorError::InvalidShape {
                        shape: v.shape().to_vec(),
                        reason: "width < 2 has no horizontal differences".into(),
                    });
                }
                let mut out = Vec::with_capacity(c * h * (w - 1));
                for row in d.chunks(w) {
                    out.extend(row.windows(2).map(|p| p[1] - p[0]));
                }
                (vec![c, h, w - 1], out)
            }
            Axis::Vertical => {
                if h < 2 {
                    return Err(TensorError::InvalidShape {
                        shape: v.shape().to_vec(),
                        reason: "height < 2 has no vertical differences".into(),
                    });
                }
                let mut out = Vec::with_capacity(c * (h - 1) * w);
                for ch in d.chunks(h * w) {
                    for y in 0..h - 1 {
                        let (r0, r1) = (&ch[y * w..(y + 1) * w], &ch[(y + 1) * w..(y + 2) * w]);
                        out.extend(r0.iter().zip(r1).map(|(a, b)| b - a));
                    }
                }
                (vec![c, h - 1, w], out)
            }
        };
        self.push(Tensor::new(shape, data)?, Op::SpatialDiff { x, axis })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.node(x)?.value.detached().reshape(shape)?;
        self.push(v, Op::Reshape(x))
    }

    // ---- backward -------------------------------------------------------

    /// Propagates d(loss)/d(node) to every node, visiting nodes in exact
    /// reverse order of recording. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let lv = &self.node(loss)?.value;
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let out = node.value.data();
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let len = nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Binary {
                op,
                a,
                b,
                a_bc,
                b_bc,
            } => {
                let (ad, bd) = (val(*a), val(*b));
                let (a, b, a_bc, b_bc) = (*a, *b, *a_bc, *b_bc);
                let n = g.len();
                let mut ga = vec![0.0; ad.len()];
                let mut gb = vec![0.0; bd.len()];
                for k in 0..n {
                    let (ia, ib) = (a_bc.index(k), b_bc.index(k));
                    let (x, y, gk) = (ad[ia], bd[ib], g[k]);
                    let (dx, dy) = match op {
                        BinaryOp::Add => (gk, gk),
                        BinaryOp::Sub => (gk, -gk),
                        BinaryOp::Mul => (gk * y, gk * x),
                        BinaryOp::Div => (gk / y, -gk * x / (y * y)),
                        BinaryOp::Pow => {
                            if x == 0.0 {
                                (0.0, 0.0)
                            } else if x > 0.0 {
                                (gk * y * out[k] / x, gk * out[k] * x.ln())
                            } else {
                                (gk * y * x.powf(y - 1.0), 0.0)
                            }
                        }
                    };
                    ga[ia] += dx;
                    gb[ib] += dy;
                }
                acc(a, &mut |buf| buf.iter_mut().zip(&ga).for_each(|(s, d)| *s += d));
                acc(b, &mut |buf| buf.iter_mut().zip(&gb).for_each(|(s, d)| *s += d));
            }
            Op::Unary { op, x } => {
                let xd = val(*x);
                let op = *op;
                acc(*x, &mut |buf| {
                    for k in 0..buf.len() {
                        let (xv, gk) = (xd[k], g[k]);
                        buf[k] += match op {
                            UnaryOp::Exp => gk * out[k],
                            UnaryOp::Log => gk / xv,
                            UnaryOp::Sigmoid => gk * out[k] * (1.0 - out[k]),
                            UnaryOp::Clamp { lo, hi } => {
                                if xv >= lo && xv <= hi {
                                    gk
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::LeakyRelu { slope } => {
                                if xv > 0.0 {
                                    gk
                                } else {
                                    slope * gk
                                }
                            }
                            UnaryOp::Abs => {
                                if xv > 0.0 {
                                    gk
                                } else if xv < 0.0 {
                                    -gk
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Square => 2.0 * xv * gk,
                            UnaryOp::AddScalar(_) => gk,
                            UnaryOp::MulScalar(s) => s * gk,
                            UnaryOp::PowScalar(p) => {
                                if xv == 0.0 {
                                    0.0
                                } else {
                                    gk * p * xv.powf(p - 1.0)
                                }
                            }
                        };
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                acc(*x, &mut |buf| buf.iter_mut().for_each(|s| *s += g0));
            }
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                let g0 = g[0] / n;
                acc(*x, &mut |buf| buf.iter_mut().for_each(|s| *s += g0));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (iv, wv) = (&nodes[input.0].value, &nodes[weight.0].value);
                let (gi, gw, gb) = conv2d_backward(iv, wv, node.value.shape(), g, *stride, *padding);
                acc(*input, &mut |buf| buf.iter_mut().zip(&gi).for_each(|(s, d)| *s += d));
                acc(*weight, &mut |buf| buf.iter_mut().zip(&gw).for_each(|(s, d)| *s += d));
                acc(*bias, &mut |buf| buf.iter_mut().zip(&gb).for_each(|(s, d)| *s += d));
            }
            Op::GlobalAvgPool(x) => {
                let plane = nodes[x.0].value.shape()[1] * nodes[x.0].value.shape()[2];
                acc(*x, &mut |buf| {
                    for (c, ch) in buf.chunks_mut(plane).enumerate() {
                        let d = g[c] / plane as f64;
                        ch.iter_mut().for_each(|s| *s += d);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    let src = &g[offset..offset + len];
                    acc(p, &mut |buf| buf.iter_mut().zip(src).for_each(|(s, d)| *s += d));
                    offset += len;
                }
            }
            Op::Narrow { x, offset } => {
                let off = *offset;
                acc(*x, &mut |buf| {
                    buf[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(s, d)| *s += d)
                });
            }
            Op::Gather { x, indices } => {
                acc(*x, &mut |buf| {
                    for (&i, d) in indices.iter().zip(g) {
                        buf[i] += d;
                    }
                });
            }
            Op::Softmax(x) => {
                let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
                acc(*x, &mut |buf| {
                    for k in 0..buf.len() {
                        buf[k] += out[k] * (g[k] - dot);
                    }
                });
            }
            Op::Linear { x, weight, bias } => {
                let (xd, wd) = (val(*x), val(*weight));
                let n = xd.len();
                acc(*x, &mut |buf| {
                    for (r, gr) in g.iter().enumerate() {
                        let row = &wd[r * n..(r + 1) * n];
                        buf.iter_mut().zip(row).for_each(|(s, w)| *s += gr * w);
                    }
                });
                acc(*weight, &mut |buf| {
                    for (r, gr) in g.iter().enumerate() {
                        let row = &mut buf[r * n..(r + 1) * n];
                        row.iter_mut().zip(xd).for_each(|(s, xv)| *s += gr * xv);
                    }
                });
                acc(*bias, &mut |buf| buf.iter_mut().zip(g).for_each(|(s, d)| *s += d));
            }
            Op::PatchMean { x, patch } => {
                let shape = nodes[x.0].value.shape();
                let (h, w) = (shape[1], shape[2]);
                let (ph, pw) = (h / patch, w / patch);
                let norm = (patch * patch) as f64;
                let patch = *patch;
                acc(*x, &mut |buf| {
                    for (c, chan) in buf.chunks_mut(h * w).enumerate() {
                        for y in 0..ph * patch {
                            for xx in 0..pw * patch {
                                chan[y * w + xx] +=
                                    g[(c * ph + y / patch) * pw + xx / patch] / norm;
                            }
                        }
                    }
                });
            }
            Op::ChannelMean(x) => {
                let c = nodes[x.0].value.shape()[0];
                acc(*x, &mut |buf| {
                    for chan in buf.chunks_mut(g.len()) {
                        chan.iter_mut().zip(g).for_each(|(s, d)| *s += d / c as f64);
                    }
                });
            }
            Op::SpatialDiff { x, axis } => {
                let shape = nodes[x.0].value.shape();
                let (h, w) = (shape[1], shape[2]);
                match axis {
                    Axis::Horizontal => acc(*x, &mut |buf| {
                        for (row, grow) in buf.chunks_mut(w).zip(g.chunks(w - 1)) {
                            for (k, d) in grow.iter().enumerate() {
                                row[k + 1] += d;
                                row[k] -= d;
                            }
                        }
                    }),
                    Axis::Vertical => acc(*x, &mut |buf| {
                        for (chan, gchan) in buf.chunks_mut(h * w).zip(g.chunks((h - 1) * w)) {
                            for (k, d) in gchan.iter().enumerate() {
                                chan[k + w] += d;
                                chan[k] -= d;
                            }
                        }
                    }),
                }
            }
            Op::Reshape(x) => {
                acc(*x, &mut |buf| buf.iter_mut().zip(g).for_each(|(s, d)| *s += d));
            }
        }
    }

    /// Output extent of a convolution along one dimension, if valid.
    pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        conv_output_extent(input, kernel, stride, padding)
    }
}
