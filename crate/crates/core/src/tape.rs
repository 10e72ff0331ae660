//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every operation appends one node holding its output value and the
//! handles of its inputs. Inputs always precede their consumers, so the
//! node list is a topological order and [`Tape::backward`] simply walks it
//! from the loss node down to the first leaf.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Gelu(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Softmax { x: Var, outer: usize, axis: usize, inner: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<S>, rstd: Vec<S> },
    Clamp { x: Var, lo: S, hi: S },
    Reshape(Var),
    Concat { parts: Vec<Var>, outer: usize, inner: usize, widths: Vec<usize> },
    Slice { x: Var, outer: usize, axis: usize, inner: usize, start: usize, len: usize },
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Ordered record of tensor operations for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<S>, op: Op<S>) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = self.inputs_require_grad(&op);
        self.nodes.push(Node { value: Tensor::from_parts(shape, data), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_require_grad(&self, op: &Op<S>) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MatMul(a, b) => {
                rg(a) || rg(b)
            }
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Transpose(x)
            | Op::Gelu(x)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Square(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Softmax { x, .. }
            | Op::Clamp { x, .. }
            | Op::Slice { x, .. } => rg(x),
            Op::LayerNorm { x, gain, bias, .. } => rg(x) || rg(gain) || rg(bias),
            Op::Concat { parts, .. } => parts.iter().any(rg),
        }
    }

    /// Records a leaf. Only leaves created with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// Copies the value of `v` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() });
        }
        Ok(())
    }

    fn zip_map(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        self.push(name, self.shape(a).to_vec(), data, op)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        self.push(name, self.shape(x).to_vec(), data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `b[n]` to every row of `x[m×n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(b).len() != n {
            return Err(Error::Shape { op: "add_row", lhs: self.shape(x).to_vec(), rhs: self.shape(b).to_vec() });
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c))
            .collect();
        self.push("add_row", self.shape(x).to_vec(), data, Op::AddRow(x, b))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: S) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).require_matrix("matmul")?;
        let (k2, n) = self.value(b).require_matrix("matmul")?;
        if k != k2 {
            return Err(Error::Shape { op: "matmul", lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() });
        }
        let mut out = vec![S::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        let shape = t.shape().to_vec();
        self.push("transpose", shape, t.into_data(), Op::Transpose(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let (c, k) = (S::lit(SQRT_2_OVER_PI), S::lit(GELU_CUBIC));
        let half = S::lit(0.5);
        self.unary("gelu", x, |v| half * v * (S::one() + (c * (v + k * v * v * v)).tanh()), Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(S::zero()), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, x: Var, lo: S, hi: S) -> Result<Var> {
        self.unary("clamp", x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Invalid(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let (outer, a, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![S::zero(); src.len()];
        for o in 0..outer {
            for r in 0..inner {
                let idx = |i: usize| (o * a + i) * inner + r;
                let mut mx = S::neg_infinity();
                for i in 0..a {
                    mx = mx.max(src[idx(i)]);
                }
                let mut total = S::zero();
                for i in 0..a {
                    let e = (src[idx(i)] - mx).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..a {
                    out[idx(i)] /= total;
                }
            }
        }
        self.push("softmax", shape, out, Op::Softmax { x, outer, axis: a, inner })
    }

    /// Normalizes each row of the last axis to zero mean and unit variance,
    /// then applies `gain` and `bias` (both of the last axis' length).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        if eps <= S::zero() {
            return Err(Error::Invalid("layer_norm eps must be positive".into()));
        }
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("non-empty shape");
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::Shape { op: "layer_norm", lhs: shape, rhs: self.shape(gain).to_vec() });
        }
        let nn = S::from_count(n);
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / n;
        let mut xhat = vec![S::zero(); src.len()];
        let mut rstd = vec![S::zero(); rows];
        let mut out = vec![S::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<S>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nn;
            let rs = S::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        let shape = t.shape().to_vec();
        self.push("reshape", shape, t.into_data(), Op::Reshape(x))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Invalid(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape { op: "concat", lhs: base, rhs: s.to_vec() });
            }
            widths.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                out.extend_from_slice(&src[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", shape, out, Op::Concat { parts: parts.to_vec(), outer, inner, widths })
    }

    /// Takes `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Invalid(format!("slice [{start}, {}) of axis {axis} out of range for {shape:?}", start + len)));
        }
        let (outer, a, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * a + start) * inner..(o * a + start + len) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        self.push("slice", new_shape, out, Op::Slice { x, outer, axis: a, inner, start, len })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.sum() / S::from_count(t.len());
        self.push("mean", vec![1], vec![m], Op::Mean(x))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Runs the backward pass from a single-element `loss`.
    ///
    /// The tape is not modified, so repeated calls produce identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape { op: "backward", lhs: self.shape(loss).to_vec(), rhs: vec![1] });
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut Vec<S>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]))
    }

    fn backprop(&self, node: &Node<S>, dy: &[S], grads: &mut [Option<Vec<S>>]) {
        let val = |v: &Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = self.acc(grads, *v) {
                        g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d);
                }
                if let Some(g) = self.acc(grads, *b) {
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g -= d);
                }
            }
            Op::Mul(a, b) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(dy).zip(val(b)).for_each(|((g, &d), &y)| *g += d * y);
                }
                if let Some(g) = self.acc(grads, *b) {
                    g.iter_mut().zip(dy).zip(val(a)).for_each(|((g, &d), &x)| *g += d * x);
                }
            }
            Op::AddRow(x, b) => {
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d);
                }
                if let Some(g) = self.acc(grads, *b) {
                    let n = g.len();
                    for row in dy.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d * *c);
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if let Some(g) = self.acc(grads, *a) {
                    // dA = dC · Bᵀ
                    matmul_nt_into(dy, val(b), g, m, n, k);
                }
                if let Some(g) = self.acc(grads, *b) {
                    // dB = Aᵀ · dC
                    matmul_tn_into(val(a), dy, g, m, k, n);
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                if let Some(g) = self.acc(grads, *x) {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += dy[j * m + i];
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let (c, k) = (S::lit(SQRT_2_OVER_PI), S::lit(GELU_CUBIC));
                let (half, three) = (S::lit(0.5), S::lit(3.0));
                let xs = val(x);
                if let Some(g) = self.acc(grads, *x) {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xs) {
                        let t = (c * (v + k * v * v * v)).tanh();
                        let dt = (S::one() - t * t) * c * (S::one() + three * k * v * v);
                        *g += d * (half * (S::one() + t) + half * v * dt);
                    }
                }
            }
            Op::Relu(x) => {
                let xs = val(x);
                if let Some(g) = self.acc(grads, *x) {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xs) {
                        if v > S::zero() {
                            *g += d;
                        }
                    }
                }
            }
            Op::Exp(x) => {
                let ys = node.value.data();
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(dy).zip(ys).for_each(|((g, &d), &y)| *g += d * y);
                }
            }
            Op::Square(x) => {
                let xs = val(x);
                let two = S::lit(2.0);
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(dy).zip(xs).for_each(|((g, &d), &v)| *g += two * d * v);
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xs = val(x);
                if let Some(g) = self.acc(grads, *x) {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xs) {
                        if v >= *lo && v <= *hi {
                            *g += d;
                        }
                    }
                }
            }
            Op::Softmax { x, outer, axis, inner } => {
                let ys = node.value.data();
                let (outer, a, inner) = (*outer, *axis, *inner);
                if let Some(g) = self.acc(grads, *x) {
                    for o in 0..outer {
                        for r in 0..inner {
                            let idx = |i: usize| (o * a + i) * inner + r;
                            let dot: S = (0..a).map(|i| dy[idx(i)] * ys[idx(i)]).sum();
                            for i in 0..a {
                                g[idx(i)] += ys[idx(i)] * (dy[idx(i)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let n = self.value(*gain).len();
                let gv = val(gain);
                if let Some(g) = self.acc(grads, *x) {
                    let nn = S::from_count(n);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let range = r * n..(r + 1) * n;
                        let dyr = &dy[range.clone()];
                        let hr = &xhat[range.clone()];
                        let mut s1 = S::zero();
                        let mut s2 = S::zero();
                        for j in 0..n {
                            let dh = dyr[j] * gv[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        let gr = &mut g[range];
                        for j in 0..n {
                            let dh = dyr[j] * gv[j];
                            gr[j] += rs / nn * (nn * dh - s1 - hr[j] * s2);
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *gain) {
                    for (dyr, hr) in dy.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            g[j] += dyr[j] * hr[j];
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *bias) {
                    for dyr in dy.chunks(n) {
                        g.iter_mut().zip(dyr).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::Concat { parts, outer, inner, widths } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(widths) {
                    if let Some(g) = self.acc(grads, *p) {
                        for o in 0..*outer {
                            let src = &dy[(o * total + offset) * inner..(o * total + offset + w) * inner];
                            let dst = &mut g[o * w * inner..(o + 1) * w * inner];
                            dst.iter_mut().zip(src).for_each(|(g, &d)| *g += d);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { x, outer, axis, inner, start, len } => {
                if let Some(g) = self.acc(grads, *x) {
                    for o in 0..*outer {
                        let src = &dy[o * len * inner..(o + 1) * len * inner];
                        let dst = &mut g[(o * axis + start) * inner..(o * axis + start + len) * inner];
                        dst.iter_mut().zip(src).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().for_each(|g| *g += dy[0]);
                }
            }
            Op::Mean(x) => {
                let n = S::from_count(self.value(*x).len());
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().for_each(|g| *g += dy[0] / n);
                }
            }
        }
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `v`, or `None` if no path reached it.
    pub fn get(&self, v: Var) -> Option<Tensor<S>> {
        self.grads
            .get(v.0)?
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Gradient with respect to `v`, zero-filled when unreached.
    pub fn wrt(&self, v: Var) -> Tensor<S> {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub(crate) fn raw(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0)?.as_deref()
    }
}
