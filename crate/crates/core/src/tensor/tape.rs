//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation appends one node holding its output value
//! and the ids of its inputs. [`Tape::backward`] walks the nodes in exact
//! reverse order of execution, so each node's gradient is complete before it
//! is propagated to its inputs. Gradients reaching leaves are accumulated and
//! survive repeated `backward` calls until [`Tape::zero_grads`].

use std::cell::{Ref, RefCell};

use rand::Rng;

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn, transpose_batched};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale(Var, T),
    Sum(Var),
    Softmax { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    IndexSelect { x: Var, axis: usize, indices: Vec<usize> },
    Reshape(Var),
    Expand { x: Var, axis: usize },
    Relu(Var),
    LeakyRelu(Var, T),
    PRelu { x: Var, slope: Var },
    Sigmoid(Var),
    Dropout { x: Var, mask: Vec<T> },
    NormLast(Var),
    Abs(Var),
    SymNormalize(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Softmax { .. } => "softmax",
            Op::Concat { .. } => "concat",
            Op::IndexSelect { .. } => "index_select",
            Op::Reshape(_) => "reshape",
            Op::Expand { .. } => "expand",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::PRelu { .. } => "prelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Dropout { .. } => "dropout",
            Op::NormLast(_) => "norm",
            Op::Abs(_) => "abs",
            Op::SymNormalize(_) => "sym_normalize",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of executed operations for one forward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<Vec<Option<Vec<T>>>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, len, inner)` strides for iterating along `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// Batched matrix-product geometry. Either side may be a plain matrix that
/// is broadcast over the other side's batch dimensions.
struct MatPlan {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
    trans_b: bool,
    out_shape: Vec<usize>,
}

impl MatPlan {
    fn new(a: &[usize], b: &[usize], trans_b: bool) -> Result<Self> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape(op, a, b));
        }
        let (ab, am) = a.split_at(a.len() - 2);
        let (bb, bm) = b.split_at(b.len() - 2);
        let (m, k) = (am[0], am[1]);
        let (kb, n) = if trans_b { (bm[1], bm[0]) } else { (bm[0], bm[1]) };
        if k != kb {
            return Err(Error::shape(op, a, b));
        }
        let batch_dims = match (ab.is_empty(), bb.is_empty()) {
            (_, true) => ab,
            (true, false) => bb,
            (false, false) if ab == bb => ab,
            _ => return Err(Error::shape(op, a, b)),
        };
        let mut out_shape = batch_dims.to_vec();
        out_shape.extend([m, n]);
        Ok(MatPlan {
            batch: numel(batch_dims),
            m,
            k,
            n,
            a_batched: !ab.is_empty(),
            b_batched: !bb.is_empty(),
            trans_b,
            out_shape,
        })
    }

    fn a_off(&self, i: usize) -> usize {
        if self.a_batched {
            i * self.m * self.k
        } else {
            0
        }
    }

    fn b_off(&self, i: usize) -> usize {
        if self.b_batched {
            i * self.k * self.n
        } else {
            0
        }
    }

    /// True when the whole product collapses into one large GEMM.
    fn flat(&self) -> bool {
        !self.b_batched
    }

    fn forward<T: Real>(&self, a: &[T], b: &[T], c: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat() {
            let rows = if self.a_batched { self.batch * m } else { m };
            if self.trans_b {
                gemm_nt(rows, k, n, a, b, c);
            } else {
                gemm_nn(rows, k, n, a, b, c);
            }
            return;
        }
        for i in 0..self.batch {
            let av = &a[self.a_off(i)..self.a_off(i) + m * k];
            let bv = &b[self.b_off(i)..self.b_off(i) + k * n];
            let cv = &mut c[i * m * n..(i + 1) * m * n];
            if self.trans_b {
                gemm_nt(m, k, n, av, bv, cv);
            } else {
                gemm_nn(m, k, n, av, bv, cv);
            }
        }
    }

    fn backward_a<T: Real>(&self, g: &[T], b: &[T], da: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat() {
            let rows = if self.a_batched { self.batch * m } else { m };
            if self.trans_b {
                gemm_nn(rows, n, k, g, b, da);
            } else {
                gemm_nt(rows, n, k, g, b, da);
            }
            return;
        }
        for i in 0..self.batch {
            let gv = &g[i * m * n..(i + 1) * m * n];
            let bv = &b[self.b_off(i)..self.b_off(i) + k * n];
            let off = self.a_off(i);
            let dv = &mut da[off..off + m * k];
            if self.trans_b {
                gemm_nn(m, n, k, gv, bv, dv);
            } else {
                gemm_nt(m, n, k, gv, bv, dv);
            }
        }
    }

    fn backward_b<T: Real>(&self, a: &[T], g: &[T], db: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat() {
            let rows = if self.a_batched { self.batch * m } else { m };
            if self.trans_b {
                gemm_tn(n, rows, k, g, a, db);
            } else {
                gemm_tn(k, rows, n, a, g, db);
            }
            return;
        }
        for i in 0..self.batch {
            let av = &a[self.a_off(i)..self.a_off(i) + m * k];
            let gv = &g[i * m * n..(i + 1) * m * n];
            let off = self.b_off(i);
            let dv = &mut db[off..off + k * n];
            if self.trans_b {
                gemm_tn(n, m, k, gv, av, dv);
            } else {
                gemm_tn(k, m, n, av, gv, dv);
            }
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut [T] {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Real> Tape<T> {
    /// A tape that rejects non-finite results in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(Vec::new()),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// A value that takes no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    /// A differentiable leaf; its gradient is available after [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let grads = self.leaf_grads.borrow();
        let data = grads.get(v.0)?.as_ref()?.clone();
        let shape = self.shape(v);
        Some(Tensor::from_parts(shape, data))
    }

    pub fn zero_grads(&self) {
        self.leaf_grads.borrow_mut().clear();
    }

    /// Propagate `d loss / d node` back to every differentiable leaf.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = self.leaf_grads.borrow_mut();
        if leaf_grads.len() < nodes.len() {
            leaf_grads.resize(nodes.len(), None);
        }

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let req = |v: Var| nodes[v.0].requires_grad;
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    let acc = leaf_grads[id].get_or_insert_with(|| vec![T::zero(); g.len()]);
                    add_into(acc, &g);
                }
                Op::MatMul { a, b, trans_b } => {
                    let (ta, tb) = (val(*a), val(*b));
                    let plan = MatPlan::new(ta.shape(), tb.shape(), *trans_b)?;
                    if req(*a) {
                        plan.backward_a(&g, tb.data(), slot(&mut grads, a.0, ta.len()));
                    }
                    if req(*b) {
                        plan.backward_b(ta.data(), &g, slot(&mut grads, b.0, tb.len()));
                    }
                }
                Op::Transpose(x) => {
                    let tx = val(*x);
                    let r = tx.rank();
                    let (m, n) = (tx.shape()[r - 2], tx.shape()[r - 1]);
                    let mut t = vec![T::zero(); g.len()];
                    transpose_batched(&g, &mut t, n, m);
                    add_into(slot(&mut grads, x.0, tx.len()), &t);
                }
                Op::Add { a, b } | Op::Sub { a, b } => {
                    let sign = if matches!(node.op, Op::Sub { .. }) {
                        -T::one()
                    } else {
                        T::one()
                    };
                    if req(*a) {
                        add_into(slot(&mut grads, a.0, g.len()), &g);
                    }
                    if req(*b) {
                        let blen = val(*b).len();
                        let db = slot(&mut grads, b.0, blen);
                        for chunk in g.chunks_exact(blen) {
                            for (d, &s) in db.iter_mut().zip(chunk) {
                                *d += sign * s;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (val(*a), val(*b));
                    if req(*a) {
                        let da = slot(&mut grads, a.0, g.len());
                        for ((d, &gi), &bi) in da.iter_mut().zip(&g).zip(tb.data()) {
                            *d += gi * bi;
                        }
                    }
                    if req(*b) {
                        let db = slot(&mut grads, b.0, g.len());
                        for ((d, &gi), &ai) in db.iter_mut().zip(&g).zip(ta.data()) {
                            *d += gi * ai;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let dx = slot(&mut grads, x.0, g.len());
                    for (d, &gi) in dx.iter_mut().zip(&g) {
                        *d += *c * gi;
                    }
                }
                Op::Sum(x) => {
                    let n = val(*x).len();
                    for d in slot(&mut grads, x.0, n) {
                        *d += g[0];
                    }
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                    let dx = slot(&mut grads, x.0, g.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut s = T::zero();
                            for l in 0..len {
                                let p = base + l * inner;
                                s += g[p] * y[p];
                            }
                            for l in 0..len {
                                let p = base + l * inner;
                                dx[p] += y[p] * (g[p] - s);
                            }
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                    let mut start = 0;
                    for part in parts {
                        let tp = val(*part);
                        let len = tp.shape()[*axis];
                        if req(*part) {
                            let dp = slot(&mut grads, part.0, tp.len());
                            for o in 0..outer {
                                let src = o * total * inner + start * inner;
                                let dst = o * len * inner;
                                add_into(&mut dp[dst..dst + len * inner], &g[src..src + len * inner]);
                            }
                        }
                        start += len;
                    }
                }
                Op::IndexSelect { x, axis, indices } => {
                    let tx = val(*x);
                    let (outer, src_len, inner) = split_axis(tx.shape(), *axis);
                    let dx = slot(&mut grads, x.0, tx.len());
                    let sel = indices.len();
                    for o in 0..outer {
                        for (t, &ix) in indices.iter().enumerate() {
                            let src = o * sel * inner + t * inner;
                            let dst = o * src_len * inner + ix * inner;
                            add_into(&mut dx[dst..dst + inner], &g[src..src + inner]);
                        }
                    }
                }
                Op::Reshape(x) => add_into(slot(&mut grads, x.0, g.len()), &g),
                Op::Expand { x, axis } => {
                    let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                    let dx = slot(&mut grads, x.0, outer * inner);
                    for o in 0..outer {
                        for t in 0..n {
                            let src = (o * n + t) * inner;
                            add_into(&mut dx[o * inner..(o + 1) * inner], &g[src..src + inner]);
                        }
                    }
                }
                Op::Relu(x) => {
                    let tx = val(*x);
                    let dx = slot(&mut grads, x.0, g.len());
                    for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(tx.data()) {
                        if xi > T::zero() {
                            *d += gi;
                        }
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let tx = val(*x);
                    let dx = slot(&mut grads, x.0, g.len());
                    for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(tx.data()) {
                        *d += if xi > T::zero() { gi } else { *slope * gi };
                    }
                }
                Op::PRelu { x, slope } => {
                    let tx = val(*x);
                    let a = val(*slope).data()[0];
                    if req(*x) {
                        let dx = slot(&mut grads, x.0, g.len());
                        for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(tx.data()) {
                            *d += if xi > T::zero() { gi } else { a * gi };
                        }
                    }
                    if req(*slope) {
                        let mut s = T::zero();
                        for (&gi, &xi) in g.iter().zip(tx.data()) {
                            if xi <= T::zero() {
                                s += gi * xi;
                            }
                        }
                        slot(&mut grads, slope.0, 1)[0] += s;
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let dx = slot(&mut grads, x.0, g.len());
                    for ((d, &gi), &yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * yi * (T::one() - yi);
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = slot(&mut grads, x.0, g.len());
                    for ((d, &gi), &mi) in dx.iter_mut().zip(&g).zip(mask) {
                        *d += gi * mi;
                    }
                }
                Op::NormLast(x) => {
                    let tx = val(*x);
                    let last = *tx.shape().last().expect("rank >= 1");
                    let y = node.value.data();
                    let dx = slot(&mut grads, x.0, tx.len());
                    for ((drow, xrow), (&gi, &yi)) in dx
                        .chunks_exact_mut(last)
                        .zip(tx.data().chunks_exact(last))
                        .zip(g.iter().zip(y))
                    {
                        // subgradient 0 at the origin
                        if yi > T::zero() {
                            let f = gi / yi;
                            for (d, &xv) in drow.iter_mut().zip(xrow) {
                                *d += f * xv;
                            }
                        }
                    }
                }
                Op::Abs(x) => {
                    let tx = val(*x);
                    let dx = slot(&mut grads, x.0, g.len());
                    for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(tx.data()) {
                        if xi > T::zero() {
                            *d += gi;
                        } else if xi < T::zero() {
                            *d -= gi;
                        }
                    }
                }
                Op::SymNormalize(mv) => {
                    let m = val(*mv);
                    let n = m.shape()[0];
                    let md = m.data();
                    let r: Vec<T> = md
                        .chunks_exact(n)
                        .map(|row| T::one() / row.iter().copied().sum::<T>().sqrt())
                        .collect();
                    let half = T::lit(0.5);
                    let mut c = vec![T::zero(); n];
                    for a in 0..n {
                        let mut s = T::zero();
                        for j in 0..n {
                            s += g[a * n + j] * md[a * n + j] * r[j];
                            s += g[j * n + a] * md[j * n + a] * r[j];
                        }
                        c[a] = -half * r[a] * r[a] * r[a] * s;
                    }
                    let dm = slot(&mut grads, mv.0, n * n);
                    for a in 0..n {
                        for b in 0..n {
                            dm[a * n + b] += g[a * n + b] * r[a] * r[b] + c[a];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    // ---- operations ----

    fn unary(&self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            let data = n.value.data().iter().map(|&v| f(v)).collect();
            (Tensor::from_parts(n.value.shape().to_vec(), data), n.requires_grad)
        };
        self.push(value, op, rg)
    }

    /// Batched matrix product `a · b`. Batch dimensions must match, or one
    /// side must be a plain matrix.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Batched `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let plan = MatPlan::new(ta.shape(), tb.shape(), trans_b)?;
            let mut out = vec![T::zero(); numel(&plan.out_shape)];
            plan.forward(ta.data(), tb.data(), &mut out);
            (
                Tensor::from_parts(plan.out_shape, out),
                nodes[a.0].requires_grad || nodes[b.0].requires_grad,
            )
        };
        self.push(value, Op::MatMul { a, b, trans_b }, rg)
    }

    /// Swap the last two axes.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (nodes[x.0].value.transpose_last()?, nodes[x.0].requires_grad)
        };
        self.push(value, Op::Transpose(x), rg)
    }

    fn binary_broadcast(&self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let name = op.name();
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (ta.shape(), tb.shape());
            if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
                return Err(Error::shape(name, sa, sb));
            }
            let blen = tb.len();
            let mut out = Vec::with_capacity(ta.len());
            for chunk in ta.data().chunks_exact(blen) {
                out.extend(chunk.iter().zip(tb.data()).map(|(&x, &y)| f(x, y)));
            }
            (
                Tensor::from_parts(sa.to_vec(), out),
                nodes[a.0].requires_grad || nodes[b.0].requires_grad,
            )
        };
        self.push(value, op, rg)
    }

    /// `a + b`, where `b`'s shape may be a trailing suffix of `a`'s (bias broadcast).
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    /// `a - b` with the same broadcasting rule as [`Tape::add`].
    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", &self.shape(a), &self.shape(b)));
        }
        self.binary_broadcast(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn scale(&self, x: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let s: T = nodes[x.0].value.data().iter().copied().sum();
            (Tensor::scalar(s), nodes[x.0].requires_grad)
        };
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = numel(&self.shape(x));
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Softmax along `axis`, stabilized by subtracting the lane maximum.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            if axis >= tx.rank() {
                return Err(Error::invalid("softmax", format!("axis {axis} for shape {:?}", tx.shape())));
            }
            let (outer, len, inner) = split_axis(tx.shape(), axis);
            let xd = tx.data();
            let mut out = vec![T::zero(); xd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut mx = T::neg_infinity();
                    for l in 0..len {
                        mx = mx.max(xd[base + l * inner]);
                    }
                    let mut s = T::zero();
                    for l in 0..len {
                        let e = (xd[base + l * inner] - mx).exp();
                        out[base + l * inner] = e;
                        s += e;
                    }
                    for l in 0..len {
                        out[base + l * inner] = out[base + l * inner] / s;
                    }
                }
            }
            (Tensor::from_parts(tx.shape().to_vec(), out), nodes[x.0].requires_grad)
        };
        self.push(value, Op::Softmax { x, axis }, rg)
    }

    /// Join tensors along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
            let s0 = nodes[first.0].value.shape();
            if axis >= s0.len() {
                return Err(Error::invalid("concat", format!("axis {axis} for shape {s0:?}")));
            }
            let mut total = 0;
            for p in parts {
                let s = nodes[p.0].value.shape();
                let compatible = s.len() == s0.len()
                    && s.iter()
                        .zip(s0)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::shape("concat", s0, s));
                }
                total += s[axis];
            }
            let (outer, _, inner) = split_axis(s0, axis);
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for p in parts {
                    let t = &nodes[p.0].value;
                    let w = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
                }
            }
            let mut shape = s0.to_vec();
            shape[axis] = total;
            let rg = parts.iter().any(|p| nodes[p.0].requires_grad);
            (Tensor::from_parts(shape, out), rg)
        };
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Gather entries `indices` along `axis`.
    pub fn index_select(&self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            if axis >= tx.rank() || indices.is_empty() {
                return Err(Error::invalid(
                    "index_select",
                    format!("axis {axis}, {} indices, shape {:?}", indices.len(), tx.shape()),
                ));
            }
            let (outer, len, inner) = split_axis(tx.shape(), axis);
            if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
                return Err(Error::invalid("index_select", format!("index {bad} >= {len}")));
            }
            let mut out = Vec::with_capacity(outer * indices.len() * inner);
            for o in 0..outer {
                for &ix in indices {
                    let src = (o * len + ix) * inner;
                    out.extend_from_slice(&tx.data()[src..src + inner]);
                }
            }
            let mut shape = tx.shape().to_vec();
            shape[axis] = indices.len();
            (Tensor::from_parts(shape, out), nodes[x.0].requires_grad)
        };
        self.push(
            value,
            Op::IndexSelect {
                x,
                axis,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let indices: Vec<usize> = (start..start + len).collect();
        self.index_select(x, axis, &indices)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (nodes[x.0].value.clone().reshape(shape)?, nodes[x.0].requires_grad)
        };
        self.push(value, Op::Reshape(x), rg)
    }

    /// Repeat a size-1 `axis` `n` times.
    pub fn expand(&self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            if axis >= tx.rank() || tx.shape()[axis] != 1 || n == 0 {
                return Err(Error::invalid("expand", format!("axis {axis} of {:?} to {n}", tx.shape())));
            }
            let (outer, _, inner) = split_axis(tx.shape(), axis);
            let mut out = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    out.extend_from_slice(&tx.data()[o * inner..(o + 1) * inner]);
                }
            }
            let mut shape = tx.shape().to_vec();
            shape[axis] = n;
            (Tensor::from_parts(shape, out), nodes[x.0].requires_grad)
        };
        self.push(value, Op::Expand { x, axis }, rg)
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Result<Var> {
        let s = T::lit(slope);
        self.unary(x, Op::LeakyRelu(x, s), |v| if v > T::zero() { v } else { s * v })
    }

    /// Parametric ReLU with a single learnable slope (a one-element tensor).
    pub fn prelu(&self, x: Var, slope: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let ts = &nodes[slope.0].value;
            if ts.len() != 1 {
                return Err(Error::invalid("prelu", format!("slope shape {:?}", ts.shape())));
            }
            let a = ts.data()[0];
            let tx = &nodes[x.0].value;
            let data = tx
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { a * v })
                .collect();
            (
                Tensor::from_parts(tx.shape().to_vec(), data),
                nodes[x.0].requires_grad || nodes[slope.0].requires_grad,
            )
        };
        self.push(value, Op::PRelu { x, slope }, rg)
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    /// Inverted dropout. In eval mode, or at rate 0, this returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let (value, mask, rg) = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let mask: Vec<T> = (0..tx.len())
                .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                .collect();
            let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (
                Tensor::from_parts(tx.shape().to_vec(), data),
                mask,
                nodes[x.0].requires_grad,
            )
        };
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    /// Euclidean norm over the last axis; the result drops that axis.
    pub fn norm_last(&self, x: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let Some((&last, rest)) = tx.shape().split_last() else {
                return Err(Error::invalid("norm", "rank-0 input"));
            };
            let data = tx
                .data()
                .chunks_exact(last)
                .map(|row| dot(row, row).sqrt())
                .collect();
            (Tensor::from_parts(rest.to_vec(), data), nodes[x.0].requires_grad)
        };
        self.push(value, Op::NormLast(x), rg)
    }

    pub fn abs(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    /// `D^{-1/2} M D^{-1/2}` with `D` the row sums of the square matrix `M`.
    pub fn sym_normalize(&self, m: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let tm = &nodes[m.0].value;
            let s = tm.shape();
            if s.len() != 2 || s[0] != s[1] {
                return Err(Error::shape("sym_normalize", s, s));
            }
            let n = s[0];
            let mut r = Vec::with_capacity(n);
            for row in tm.data().chunks_exact(n) {
                let d: T = row.iter().copied().sum();
                if d <= T::zero() {
                    return Err(Error::invalid("sym_normalize", "non-positive degree"));
                }
                r.push(T::one() / d.sqrt());
            }
            let mut out = tm.data().to_vec();
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = out[i * n + j] * r[i] * r[j];
                }
            }
            (Tensor::from_parts(s.to_vec(), out), nodes[m.0].requires_grad)
        };
        self.push(value, Op::SymNormalize(m), rg)
    }

    /// `x · wᵀ + b` with `w` stored as `[out, in]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }
}
