use crate::error::{Error, Result};

use super::kernels;
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Detach,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    Normalize(Var),
    NormalizeOrBasis(Var),
    NormalizeRows(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    SumAll(Var),
    Conv3x3 { input: Var, weight: Var, bias: Var },
    AvgPool { input: Var, kh: usize, kw: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Below this norm a vector is considered degenerate for normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Append-only record of a forward computation, replayed in reverse by
/// [`Tape::backward`]. Nodes are stored in creation order, which is a valid
/// topological order because every op only references earlier nodes.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    kink_distance: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            kink_distance: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if `v`
    /// participates in differentiation.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Smallest distance to a ReLU/hinge kink seen among differentiable
    /// inputs since the tape was created.
    pub fn kink_distance(&self) -> f64 {
        self.kink_distance
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match *s {
            [r, c] => Ok((r, c)),
            [c] => Ok((1, c)),
            _ => Err(Error::InvalidTensor(format!(
                "{op} expects a matrix, got shape {s:?}"
            ))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).clone();
        self.nodes.push(Node {
            value,
            op: Op::Detach,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, k2, n) = match (sa, sb) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        if k != k2 {
            return Err(Error::shape("matmul", sa, sb));
        }
        let out = kernels::mm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            &[a, b],
            "matmul",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = match *self.shape(a) {
            [m, n] => (m, n),
            _ => return Err(Error::shape("transpose", self.shape(a), &[])),
        };
        let out = kernels::transpose(self.value(a).data(), m, n);
        self.push(
            Tensor::from_parts(vec![n, m], out),
            Op::Transpose(a),
            &[a],
            "transpose",
        )
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, data), op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds the row vector `bias` (length n) to every row of `a` (m×n).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(bias).len() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        debug_assert_eq!(data.len(), m * n);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::AddRow(a, bias), &[a, bias], "add_row")
    }

    /// Scales row `i` of `a` (m×n) by `s[i]` (length m).
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mul_col")?;
        if self.value(s).len() != m {
            return Err(Error::shape("mul_col", self.shape(a), self.shape(s)));
        }
        let sv = self.value(s).data();
        let mut data = self.value(a).data().to_vec();
        for (row, &k) in data.chunks_mut(n).zip(sv) {
            row.iter_mut().for_each(|x| *x *= k);
        }
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::MulCol(a, s), &[a, s], "mul_col")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Scale(a, c), &[a], "scale")
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x + c).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Offset(a), &[a], "offset")
    }

    fn note_kinks(&mut self, a: Var) {
        if self.nodes[a.0].requires_grad {
            let d = self.nodes[a.0]
                .value
                .data()
                .iter()
                .fold(f64::INFINITY, |m, x| m.min(x.abs()));
            self.kink_distance = self.kink_distance.min(d);
        }
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.note_kinks(a);
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Relu(a), &[a], "relu")
    }

    /// Hinge `max{x, 0}` of a loss term; same as [`Tape::relu`].
    pub fn hinge(&mut self, a: Var) -> Result<Var> {
        self.relu(a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data().iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidTensor("sqrt of negative value".into()));
        }
        let data = t.data().iter().map(|x| x.sqrt()).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Sqrt(a), &[a], "sqrt")
    }

    /// Row-wise softmax with row-max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.dims2(a, "softmax_rows")?;
        let t = self.value(a);
        if !t.is_finite() {
            return Err(Error::NonFinite("softmax_rows input".into()));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            kernels::softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::SoftmaxRows(a), &[a], "softmax_rows")
    }

    /// Scales the whole tensor to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let norm = t.norm();
        if norm <= NORM_EPS {
            return Err(Error::Degenerate {
                op: "l2_normalize",
                norm,
                eps: NORM_EPS,
            });
        }
        let data = t.data().iter().map(|x| x / norm).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Normalize(a), &[a], "l2_normalize")
    }

    /// Like [`Tape::l2_normalize`], but a vector with norm below
    /// [`NORM_EPS`] is replaced by the first standard basis vector, which
    /// carries no gradient.
    pub fn l2_normalize_or_basis(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let norm = t.norm();
        let data = if norm < NORM_EPS {
            let mut e = vec![0.0; t.len()];
            e[0] = 1.0;
            e
        } else {
            t.data().iter().map(|x| x / norm).collect()
        };
        let shape = t.shape().to_vec();
        self.push(
            Tensor::from_parts(shape, data),
            Op::NormalizeOrBasis(a),
            &[a],
            "l2_normalize_or_basis",
        )
    }

    /// Divides each row by `max(‖row‖, eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (_, n) = self.dims2(a, "normalize_rows")?;
        let t = self.value(a);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            let norm = kernels::norm(row).max(eps);
            row.iter_mut().for_each(|x| *x /= norm);
        }
        let shape = t.shape().to_vec();
        self.push(
            Tensor::from_parts(shape, data),
            Op::NormalizeRows(a, eps),
            &[a],
            "normalize_rows",
        )
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of nothing".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidTensor(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !agrees {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
            "concat",
        )
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::InvalidTensor(format!(
                "slice [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                input: a,
                axis,
                start,
            },
            &[a],
            "slice",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a), &[a], "reshape")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a], "sum")
    }

    /// Sum of a non-empty list of same-shape values.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::InvalidTensor("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// 3×3 convolution, stride 1, zero padding 1. `input` is C×H×W,
    /// `weight` is O×C×3×3 and `bias` has length O.
    pub fn conv3x3(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = match *self.shape(input) {
            [c, h, w] => (c, h, w),
            _ => return Err(Error::shape("conv3x3", self.shape(input), &[0, 0, 0])),
        };
        let o = match *self.shape(weight) {
            [o, wc, 3, 3] if wc == c => o,
            _ => return Err(Error::shape("conv3x3", self.shape(input), self.shape(weight))),
        };
        if self.value(bias).len() != o {
            return Err(Error::shape("conv3x3", self.shape(weight), self.shape(bias)));
        }
        let cols = kernels::im2col3x3(self.value(input).data(), c, h, w);
        let mut out = kernels::mm(self.value(weight).data(), &cols, o, c * 9, h * w);
        for (row, &b) in out.chunks_mut(h * w).zip(self.value(bias).data()) {
            row.iter_mut().for_each(|x| *x += b);
        }
        self.push(
            Tensor::from_parts(vec![o, h, w], out),
            Op::Conv3x3 {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
            "conv3x3",
        )
    }

    /// Non-overlapping average pooling over a C×H×W tensor.
    pub fn avg_pool(&mut self, a: Var, kh: usize, kw: usize) -> Result<Var> {
        let (c, h, w) = match *self.shape(a) {
            [c, h, w] => (c, h, w),
            _ => return Err(Error::shape("avg_pool", self.shape(a), &[kh, kw])),
        };
        if kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
            return Err(Error::shape("avg_pool", self.shape(a), &[kh, kw]));
        }
        let (oh, ow) = (h / kh, w / kw);
        let src = self.value(a).data();
        let inv = 1.0 / (kh * kw) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ch * oh + y / kh) * ow + x / kw] += src[(ch * h + y) * w + x] * inv;
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![c, oh, ow], out),
            Op::AvgPool { input: a, kh, kw },
            &[a],
            "avg_pool",
        )
    }

    /// Reverse sweep from a scalar `loss`. Populates a gradient for every
    /// node that requires one; call [`Tape::reset_grads`] before running
    /// it again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "gradients already populated; reset before a second backward".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Err(Error::Backward("loss is detached from every differentiable input".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    acc(*a, kernels::mm_bt(g, tb.data(), m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, kernels::mm_at(ta.data(), g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                acc(*a, kernels::transpose(g, s[0], s[1]));
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, g.iter().zip(xb).map(|(g, y)| g * y).collect());
                acc(*b, g.iter().zip(xa).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(a, bias) => {
                let n = self.value(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                }
                acc(*a, g.to_vec());
                acc(*bias, gb);
            }
            Op::MulCol(a, s) => {
                let sv = self.value(*s).data();
                let n = node.value.len() / sv.len();
                let xa = self.value(*a).data();
                let ga = g
                    .chunks(n)
                    .zip(sv)
                    .flat_map(|(row, &k)| row.iter().map(move |x| x * k))
                    .collect();
                let gs = g
                    .chunks(n)
                    .zip(xa.chunks(n))
                    .map(|(gr, xr)| kernels::dot(gr, xr))
                    .collect();
                acc(*a, ga);
                acc(*s, gs);
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|x| x * c).collect()),
            Op::Offset(a) | Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(
                    *a,
                    g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
                );
            }
            Op::Sqrt(a) => acc(
                *a,
                g.iter()
                    .zip(out)
                    .map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .collect(),
            ),
            Op::SoftmaxRows(a) => {
                let n = *node.value.shape().last().unwrap();
                let mut ga = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(out.chunks(n)) {
                    let s = kernels::dot(gr, yr);
                    ga.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - s)));
                }
                acc(*a, ga);
            }
            Op::Normalize(a) => {
                let norm = self.value(*a).norm();
                acc(*a, kernels::normalize_vjp(g, out, norm));
            }
            Op::NormalizeOrBasis(a) => {
                let norm = self.value(*a).norm();
                if norm < NORM_EPS {
                    acc(*a, vec![0.0; g.len()]);
                } else {
                    acc(*a, kernels::normalize_vjp(g, out, norm));
                }
            }
            Op::NormalizeRows(a, eps) => {
                let n = *node.value.shape().last().unwrap();
                let x = self.value(*a).data();
                let mut ga = Vec::with_capacity(g.len());
                for ((gr, yr), xr) in g.chunks(n).zip(out.chunks(n)).zip(x.chunks(n)) {
                    let norm = kernels::norm(xr);
                    if norm > *eps {
                        ga.extend(kernels::normalize_vjp(gr, yr, norm));
                    } else {
                        ga.extend(gr.iter().map(|g| g / eps));
                    }
                }
                acc(*a, ga);
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let block = self.shape(v)[*axis] * inner;
                    if self.nodes[v.0].requires_grad {
                        let mut gv = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let base = o * total + offset;
                            gv.extend_from_slice(&g[base..base + block]);
                        }
                        acc(v, gv);
                    }
                    offset += block;
                }
            }
            Op::Slice { input, axis, start } => {
                let src = self.shape(*input);
                let len = node.value.shape()[*axis];
                let outer: usize = src[..*axis].iter().product();
                let inner: usize = src[axis + 1..].iter().product();
                let mut gi = vec![0.0; self.value(*input).len()];
                for o in 0..outer {
                    let dst = (o * src[*axis] + start) * inner;
                    let from = o * len * inner;
                    gi[dst..dst + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                acc(*input, gi);
            }
            Op::SumAll(a) => acc(*a, vec![g[0]; self.value(*a).len()]),
            Op::Conv3x3 {
                input,
                weight,
                bias,
            } => {
                let xs = self.value(*input);
                let (c, h, w) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
                let o = node.value.shape()[0];
                let hw = h * w;
                if self.nodes[bias.0].requires_grad {
                    acc(*bias, g.chunks(hw).map(|r| r.iter().sum()).collect());
                }
                if self.nodes[weight.0].requires_grad || self.nodes[input.0].requires_grad {
                    let cols = kernels::im2col3x3(xs.data(), c, h, w);
                    if self.nodes[weight.0].requires_grad {
                        acc(*weight, kernels::mm_bt(g, &cols, o, hw, c * 9));
                    }
                    if self.nodes[input.0].requires_grad {
                        let gcols = kernels::mm_at(self.value(*weight).data(), g, o, c * 9, hw);
                        acc(*input, kernels::col2im3x3(&gcols, c, h, w));
                    }
                }
            }
            Op::AvgPool { input, kh, kw } => {
                let s = self.shape(*input);
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / kh, w / kw);
                let inv = 1.0 / (kh * kw) as f64;
                let mut gi = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            gi[(ch * h + y) * w + x] = g[(ch * oh + y / kh) * ow + x / kw] * inv;
                        }
                    }
                }
                acc(*input, gi);
            }
        }
    }
}
