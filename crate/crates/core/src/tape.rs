//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive appends one node to the tape holding its output value and
//! the ids of its inputs. [`Tape::backward`] walks the nodes in exact reverse
//! order, applying each primitive's analytic vector-Jacobian product.
//! Parameter leaves flush their gradient into the shared [`Param`] storage
//! when they are reached; embedding gathers scatter rows straight into the
//! table's gradient. Gradients always accumulate.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Param, Real, Tensor};

/// Additive mask constant applied to excluded softmax positions.
pub const MASK_NEG: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param(Param<T>),
    Gather { table: Param<T>, ids: Vec<usize> },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Log { x: Var, floor: T },
    Softmax(Var),
    MeanRows(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    Pick { x: Var, index: usize },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Gather { .. } => "gather",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log { .. } => "log",
            Op::Softmax(_) => "softmax",
            Op::MeanRows(_) => "mean_rows",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Pick { .. } => "pick",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
    grad_enabled: bool,
    last_order: Vec<Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
            last_order: Vec::new(),
        }
    }

    /// A tape whose parameters are treated as constants; nothing on it can be
    /// differentiated.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and intermediate value.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.nodes.shrink_to_fit();
        self.params.clear();
        self.last_order.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Node visit order of the most recent backward pass.
    pub fn backward_order(&self) -> &[Var] {
        &self.last_order
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf holding `t`; differentiable iff `t.requires_grad()`. Its gradient
    /// persists across backward passes.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Leaf bound to a shared parameter. Registering the same parameter twice
    /// returns the same node.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        if let Some(&v) = self.params.get(&p.key()) {
            return v;
        }
        let (value, rg) = {
            let t = p.read();
            (
                Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap(),
                t.requires_grad(),
            )
        };
        let v = self.push(value, Op::Param(p.clone()), rg);
        self.params.insert(p.key(), v);
        v
    }

    /// Rows `ids` of a rank-2 table parameter, as an `ids.len() × cols` tensor.
    pub fn gather(&mut self, table: &Param<T>, ids: &[usize]) -> Result<Var> {
        let (value, rg) = {
            let t = table.read();
            if t.shape().len() != 2 {
                return Err(Error::shape("gather", format!("table must be rank 2, got {:?}", t.shape())));
            }
            if ids.is_empty() {
                return Err(Error::shape("gather", "no indices"));
            }
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &i in ids {
                if i >= rows {
                    return Err(Error::shape("gather", format!("index {i} out of range for {rows} rows")));
                }
                data.extend_from_slice(t.row(i));
            }
            (Tensor::new(vec![ids.len(), cols], data)?, t.requires_grad())
        };
        Ok(self.push(
            value,
            Op::Gather {
                table: table.clone(),
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        mm(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// `a + b` with the vector `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 1 || *sa.last().unwrap() != sb[0] {
            return Err(Error::shape("add_row", format!("{sa:?} + {sb:?}")));
        }
        let k = sb[0];
        let bv = self.value(b).data();
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % k])
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::AddRow(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln(max(x, floor))`; entries clamped at the floor get zero gradient.
    pub fn log(&mut self, a: Var, floor: T) -> Var {
        self.unary(a, move |x| x.max(floor).ln(), Op::Log { x: a, floor })
    }

    /// Softmax over a rank-1 tensor. Masked-out positions get an additive
    /// [`MASK_NEG`] before normalization and are exactly zero afterwards.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 {
            return Err(Error::shape("softmax", format!("expected rank 1, got {s:?}")));
        }
        if let Some(m) = mask {
            if m.len() != s[0] {
                return Err(Error::shape("softmax", format!("mask length {} vs {s:?}", m.len())));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::invalid("softmax mask excludes every position"));
            }
        }
        let out = softmax_masked(self.value(a).data(), mask);
        let t = Tensor::new(s.to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// Column-wise mean of a rank-2 tensor, returned as a vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("mean_rows", format!("expected rank 2, got {s:?}")));
        }
        let (m, k) = (s[0], s[1]);
        let x = self.value(a).data();
        let inv = T::one() / T::from_f64(m as f64);
        let mut out = vec![T::zero(); k];
        for r in 0..m {
            for (o, &v) in out.iter_mut().zip(&x[r * k..(r + 1) * k]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![k], out)?, Op::MeanRows(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::shape("slice", format!("[{start}, {end}) on axis {axis} of {s:?}")));
        }
        let (outer, inner) = outer_inner(&s, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner;
            out.extend_from_slice(&x[base + start * inner..base + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x: a, axis, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Single entry of a rank-1 tensor, as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || index >= s[0] {
            return Err(Error::shape("pick", format!("index {index} of {s:?}")));
        }
        let v = self.value(a).data()[index];
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(v), Op::Pick { x: a, index }, rg))
    }

    /// Propagates d`loss`/d(node) to every differentiable node. Parameter
    /// gradients are added into their shared storage.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_scaled(loss, T::one())
    }

    pub fn backward_scaled(&mut self, loss: Var, seed: T) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        for node in &mut self.nodes {
            let user_leaf = matches!(node.op, Op::Leaf) && node.requires_grad;
            if !user_leaf {
                node.value.set_grad(None).unwrap();
            }
        }
        self.last_order.clear();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].value.grad_or_zeros()[0] += seed;

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            self.last_order.push(Var(i));
            let Some(g) = node.value.grad() else { continue };
            backprop(&node.op, &node.value, g, before);
        }
        Ok(())
    }
}

fn backprop<T: Real>(op: &Op<T>, out: &Tensor<T>, g: &[T], nodes: &mut [Node<T>]) {
    // Accumulate into the gradient of input `v`. The closure sees every
    // earlier node (values intact) plus the gradient buffer of `v`.
    fn acc<T: Real>(nodes: &mut [Node<T>], v: Var, f: impl FnOnce(&[Node<T>], &mut [T])) {
        if !nodes[v.0].requires_grad {
            return;
        }
        let n = nodes[v.0].value.numel();
        let mut grad = nodes[v.0].value.grad_mut().map(std::mem::take).unwrap_or_default();
        if grad.is_empty() {
            grad = vec![T::zero(); n];
        }
        f(nodes, &mut grad);
        nodes[v.0].value.set_grad(Some(grad)).unwrap();
    }

    match op {
        Op::Leaf => {}
        Op::Param(p) => {
            let mut t = p.write();
            add_into(t.grad_or_zeros(), g);
        }
        Op::Gather { table, ids } => {
            let mut t = table.write();
            let cols = t.shape()[1];
            let tg = t.grad_or_zeros();
            for (r, &id) in ids.iter().enumerate() {
                add_into(&mut tg[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
            let n = nodes[b.0].value.shape()[1];
            acc(nodes, *a, |ns, ga| mm_a_bt(g, ns[b.0].value.data(), m, n, k, ga));
            acc(nodes, *b, |ns, gb| mm_at_b(ns[a.0].value.data(), g, m, k, n, gb));
        }
        Op::Add(a, b) => {
            acc(nodes, *a, |_, ga| add_into(ga, g));
            acc(nodes, *b, |_, gb| add_into(gb, g));
        }
        Op::AddRow(a, b) => {
            acc(nodes, *a, |_, ga| add_into(ga, g));
            acc(nodes, *b, |_, gb| {
                let k = gb.len();
                for (i, &v) in g.iter().enumerate() {
                    gb[i % k] += v;
                }
            });
        }
        Op::Mul(a, b) => {
            acc(nodes, *a, |ns, ga| {
                for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(ns[b.0].value.data()) {
                    *x += gi * y;
                }
            });
            acc(nodes, *b, |ns, gb| {
                for ((x, &gi), &y) in gb.iter_mut().zip(g).zip(ns[a.0].value.data()) {
                    *x += gi * y;
                }
            });
        }
        Op::Scale(a, c) => acc(nodes, *a, |_, ga| {
            for (x, &gi) in ga.iter_mut().zip(g) {
                *x += gi * *c;
            }
        }),
        Op::Tanh(a) => acc(nodes, *a, |_, ga| {
            for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                *x += gi * (T::one() - y * y);
            }
        }),
        Op::Sigmoid(a) => acc(nodes, *a, |_, ga| {
            for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                *x += gi * y * (T::one() - y);
            }
        }),
        Op::Log { x: a, floor } => acc(nodes, *a, |ns, ga| {
            for ((x, &gi), &v) in ga.iter_mut().zip(g).zip(ns[a.0].value.data()) {
                if v > *floor {
                    *x += gi / v;
                }
            }
        }),
        Op::Softmax(a) => acc(nodes, *a, |_, ga| {
            let y = out.data();
            let dot: T = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).sum();
            for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                *x += yi * (gi - dot);
            }
        }),
        Op::MeanRows(a) => acc(nodes, *a, |ns, ga| {
            let (m, k) = (ns[a.0].value.shape()[0], ns[a.0].value.shape()[1]);
            let inv = T::one() / T::from_f64(m as f64);
            for r in 0..m {
                for (x, &gi) in ga[r * k..(r + 1) * k].iter_mut().zip(g) {
                    *x += gi * inv;
                }
            }
        }),
        Op::Concat { parts, axis } => {
            let (outer, inner) = outer_inner(out.shape(), *axis);
            let total = out.shape()[*axis];
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p.0].value.shape()[*axis];
                acc(nodes, p, |_, gp| {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        add_into(&mut gp[o * len * inner..(o + 1) * len * inner], src);
                    }
                });
                offset += len;
            }
        }
        Op::Slice { x: a, axis, start } => acc(nodes, *a, |ns, ga| {
            let shape = ns[a.0].value.shape();
            let (outer, inner) = outer_inner(shape, *axis);
            let full = shape[*axis];
            let len = out.shape()[*axis];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                add_into(&mut ga[dst..dst + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
            }
        }),
        Op::Reshape(a) => acc(nodes, *a, |_, ga| add_into(ga, g)),
        Op::Sum(a) => acc(nodes, *a, |_, ga| ga.iter_mut().for_each(|x| *x += g[0])),
        Op::Pick { x: a, index } => acc(nodes, *a, |_, ga| ga[*index] += g[0]),
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Masked, max-shifted softmax on a plain slice.
pub fn softmax_masked<T: Real>(v: &[T], mask: Option<&[bool]>) -> Vec<T> {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let neg = T::from_f64(MASK_NEG);
    let shifted: Vec<T> = v
        .iter()
        .enumerate()
        .map(|(i, &x)| if keep(i) { x } else { x + neg })
        .collect();
    let max = shifted.iter().copied().fold(T::neg_infinity(), T::max);
    let mut e: Vec<T> = shifted
        .iter()
        .enumerate()
        .map(|(i, &x)| if keep(i) { (x - max).exp() } else { T::zero() })
        .collect();
    let s: T = e.iter().copied().sum();
    e.iter_mut().for_each(|x| *x = *x / s);
    e
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// out (m×n) = a (m×k) · b (k×n); `out` is overwritten.
fn mm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.iter_mut().for_each(|x| *x = T::zero());
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
}

/// acc (m×k) += g (m×n) · bᵀ, where b is k×n.
fn mm_a_bt<T: Real>(g: &[T], b: &[T], m: usize, n: usize, k: usize, acc: &mut [T]) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let s: T = gi.iter().zip(&b[p * n..(p + 1) * n]).map(|(&x, &y)| x * y).sum();
            acc[i * k + p] += s;
        }
    }
}

/// acc (k×n) += aᵀ · g, where a is m×k and g is m×n.
fn mm_at_b<T: Real>(a: &[T], g: &[T], m: usize, k: usize, n: usize, acc: &mut [T]) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, &gv) in acc[p * n..(p + 1) * n].iter_mut().zip(gi) {
                *o += aip * gv;
            }
        }
    }
}
