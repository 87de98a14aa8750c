//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes in creation
//! order. Node ids are therefore a topological order, and [`Graph::backward`]
//! only has to walk the tape in reverse. Broadcasting, transposition, slicing
//! and patch extraction are all expressed through one gather primitive whose
//! backward rule is a scatter-add.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{for_each_index, strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        a_batched: bool,
        b_batched: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Powf(Var, f64),
    InvClamp(Var, f64),
    Sum(Var),
    SumAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Reshape(Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Concat(Vec<Var>),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaskFill {
        x: Var,
        mask: Vec<bool>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        n: usize,
        t_in: usize,
        t_out: usize,
        f: usize,
        klen: usize,
        stride: usize,
        per_channel: bool,
    },
    PairwiseSqDist {
        z: Var,
        m: usize,
        t: usize,
        d: usize,
    },
    PairwiseHinge {
        pred: Var,
        target: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Powf(..) => "powf",
            Op::InvClamp(..) => "inv_clamp",
            Op::Sum(..) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::Reshape(..) => "reshape",
            Op::Gather { .. } => "gather",
            Op::Concat(..) => "concat",
            Op::Softmax { .. } => "softmax",
            Op::MaskFill { .. } => "mask_fill",
            Op::Conv1d { .. } => "conv1d",
            Op::PairwiseSqDist { .. } => "pairwise_sq_dist",
            Op::PairwiseHinge { .. } => "pairwise_hinge",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    faulty_tanh: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Swaps the tanh derivative for a wrong rule. Only useful to show that
    /// gradient checking catches a broken backward pass.
    #[doc(hidden)]
    pub fn corrupt_tanh_backward(&mut self) {
        self.faulty_tanh = true;
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node invariant")
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let allow_neg_inf = matches!(op, Op::MaskFill { .. });
        let bad = value
            .iter()
            .position(|v| !(v.is_finite() || (allow_neg_inf && *v == f64::NEG_INFINITY)));
        if let Some(pos) = bad {
            return Err(Error::Numeric(format!(
                "{} produced {} at flat index {pos}",
                op.name(),
                value[pos]
            )));
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        let value = t.into_data();
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked (for sensitivity probes).
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::Numeric("non-finite input tensor".into()));
        }
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    /// Binds a named parameter as a tracked leaf. Binding the same name twice
    /// returns the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Batched matrix product over the last two axes.
    ///
    /// Leading (batch) axes must match exactly when both operands have them;
    /// a plain 2-D operand is shared across the other operand's batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim(format!(
                "matmul needs rank >= 2 operands, got {sa:?} and {sb:?}"
            )));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let a_batched = !ba.is_empty();
        let b_batched = !bb.is_empty();
        if k != k2 || (a_batched && b_batched && ba != bb) {
            return Err(Error::dim(format!("matmul shapes {sa:?} and {sb:?} do not agree")));
        }
        let batch_shape = if a_batched { ba.to_vec() } else { bb.to_vec() };
        let batch: usize = batch_shape.iter().product();
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; batch * m * n];
        for bt in 0..batch {
            let ao = if a_batched { bt * m * k } else { 0 };
            let bo = if b_batched { bt * k * n } else { 0 };
            let co = bt * m * n;
            for i in 0..m {
                let crow = &mut out[co + i * n..co + (i + 1) * n];
                for p in 0..k {
                    let x = av[ao + i * k + p];
                    let brow = &bv[bo + p * n..bo + (p + 1) * n];
                    for (c, y) in crow.iter_mut().zip(brow) {
                        *c += x * y;
                    }
                }
            }
        }
        let mut shape = batch_shape;
        shape.extend([m, n]);
        let rg = self.rg(&[a, b]);
        self.push(
            shape,
            out,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                a_batched,
                b_batched,
            },
            rg,
        )
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.rg(&[a, b]);
        self.push(self.shape(a).to_vec(), value, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).iter().map(|x| f(*x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a + b` with `b` broadcast to `a`'s shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bb = self.broadcast_to(b, &shape)?;
        self.add(a, bb)
    }

    /// `a * b` with `b` broadcast to `a`'s shape.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bb = self.broadcast_to(b, &shape)?;
        self.mul(a, bb)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.map(a, Op::Powf(a, p), |x| x.powf(p))
    }

    /// Elementwise `1 / max(x, eps)`.
    pub fn inv_clamp(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.map(a, Op::InvClamp(a, eps), |x| 1.0 / x.max(eps))
    }

    /// Sum of all elements, as a scalar (shape `[]`).
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(Vec::new(), vec![s], Op::Sum(a), rg)
    }

    /// Sums out `axis`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let v = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += v[base + i];
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let rg = self.rg(&[x]);
        self.push(oshape, out, Op::SumAxis { x, outer, len, inner }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape.to_vec(), value, Op::Reshape(x), rg)
    }

    /// `out[o] = x[index[o]]` for flat indices, producing `shape`.
    pub fn gather(&mut self, x: Var, shape: &[usize], index: Vec<usize>) -> Result<Var> {
        let n = self.value(x).len();
        if index.len() != shape.iter().product::<usize>() {
            return Err(Error::dim(format!(
                "gather index of length {} for output shape {shape:?}",
                index.len()
            )));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("gather index {bad} out of range {n}")));
        }
        let v = self.value(x);
        let value = index.iter().map(|&i| v[i]).collect();
        let rg = self.rg(&[x]);
        self.push(shape.to_vec(), value, Op::Gather { x, index }, rg)
    }

    /// Gather driven by a function from output multi-index to input flat index.
    pub fn gather_map(
        &mut self,
        x: Var,
        shape: &[usize],
        f: impl Fn(&[usize]) -> usize,
    ) -> Result<Var> {
        let mut index = Vec::with_capacity(shape.iter().product());
        for_each_index(shape, |o| index.push(f(o)));
        self.gather(x, shape, index)
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(format!("invalid permutation {axes:?} for {shape:?}")));
        }
        let st = strides(&shape);
        let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let ost: Vec<usize> = axes.iter().map(|&a| st[a]).collect();
        self.gather_map(x, &oshape, |o| o.iter().zip(&ost).map(|(i, s)| i * s).sum())
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::dim("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    /// Broadcasts with right-aligned extents; size-1 and missing axes expand.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if src == shape {
            return Ok(x);
        }
        if src.len() > shape.len() {
            return Err(Error::dim(format!("cannot broadcast {src:?} to {shape:?}")));
        }
        let lead = shape.len() - src.len();
        let sst = strides(&src);
        let mut eff = vec![0usize; shape.len()];
        for (i, &e) in src.iter().enumerate() {
            let target = shape[lead + i];
            if e == target {
                eff[lead + i] = sst[i];
            } else if e != 1 {
                return Err(Error::dim(format!("cannot broadcast {src:?} to {shape:?}")));
            }
        }
        self.gather_map(x, shape, |o| o.iter().zip(&eff).map(|(i, s)| i * s).sum())
    }

    /// Concatenates along axis 0; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        if self.shape(*first).is_empty() {
            return Err(Error::dim("cannot concat scalars"));
        }
        let mut lead = 0;
        let mut value = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat: shape {s:?} incompatible with trailing {tail:?}"
                )));
            }
            lead += s[0];
            value.extend_from_slice(self.value(*p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(parts);
        self.push(shape, value, Op::Concat(parts.to_vec()), rg)
    }

    /// Numerically stabilized softmax along `axis`. Entries equal to `-inf`
    /// get probability exactly zero; a slice that is entirely `-inf` is an error.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mx = (0..len).map(|l| v[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    return Err(Error::DegenerateSlice(format!(
                        "softmax slice ({o}, {i}) along axis {axis} is entirely masked"
                    )));
                }
                let mut z = 0.0;
                for l in 0..len {
                    let e = (v[at(l)] - mx).exp();
                    out[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] /= z;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(shape, out, Op::Softmax { x, outer, len, inner }, rg)
    }

    /// Replaces entries where `mask` is true with `-inf`.
    pub fn mask_fill_neg_inf(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::dim("mask length differs from tensor size"));
        }
        let value = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| if *m { f64::NEG_INFINITY } else { *v })
            .collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), value, Op::MaskFill { x, mask }, rg)
    }

    /// Strided, unpadded convolution along the time axis of an `N×T×F` tensor,
    /// independently per feature channel. `kernel` is either `[k]` (shared by
    /// all channels) or `[F, k]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 {
            return Err(Error::dim(format!("conv1d input must be N×T×F, got {xs:?}")));
        }
        let (n, t_in, f) = (xs[0], xs[1], xs[2]);
        let (per_channel, klen) = match ks.as_slice() {
            [k] => (false, *k),
            [c, k] if *c == f => (true, *k),
            _ => {
                return Err(Error::dim(format!(
                    "conv1d kernel {ks:?} does not fit {f} channels"
                )))
            }
        };
        if stride == 0 {
            return Err(Error::dim("conv1d stride must be positive"));
        }
        if klen > t_in {
            return Err(Error::dim(format!(
                "conv1d kernel length {klen} exceeds input length {t_in}"
            )));
        }
        let t_out = (t_in - klen) / stride + 1;
        let (xv, kv) = (self.value(x), self.value(kernel));
        let mut out = vec![0.0; n * t_out * f];
        for s in 0..n {
            for q in 0..t_out {
                for c in 0..f {
                    let mut acc = 0.0;
                    for o in 0..klen {
                        let w = if per_channel { kv[c * klen + o] } else { kv[o] };
                        acc += w * xv[(s * t_in + q * stride + o) * f + c];
                    }
                    out[(s * t_out + q) * f + c] = acc;
                }
            }
        }
        let rg = self.rg(&[x, kernel]);
        self.push(
            vec![n, t_out, f],
            out,
            Op::Conv1d {
                x,
                kernel,
                n,
                t_in,
                t_out,
                f,
                klen,
                stride,
                per_channel,
            },
            rg,
        )
    }

    /// `D[i, j, t] = ||z[i, t, :] - z[j, t, :]||²` for `z` of shape `M×T×d`.
    /// The result is exactly symmetric with an exactly zero diagonal.
    pub fn pairwise_sq_dist(&mut self, z: Var) -> Result<Var> {
        let s = self.shape(z).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(format!("pairwise_sq_dist needs M×T×d, got {s:?}")));
        }
        let (m, t, d) = (s[0], s[1], s[2]);
        let zv = self.value(z);
        let mut out = vec![0.0; m * m * t];
        for i in 0..m {
            for j in (i + 1)..m {
                for tt in 0..t {
                    let a = &zv[(i * t + tt) * d..(i * t + tt + 1) * d];
                    let b = &zv[(j * t + tt) * d..(j * t + tt + 1) * d];
                    let acc: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                    out[(i * m + j) * t + tt] = acc;
                    out[(j * m + i) * t + tt] = acc;
                }
            }
        }
        let rg = self.rg(&[z]);
        self.push(vec![m, m, t], out, Op::PairwiseSqDist { z, m, t, d }, rg)
    }

    /// `Σ_i Σ_j max(0, -(p_i - p_j)(y_i - y_j))` over all ordered pairs.
    pub fn pairwise_hinge(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(Error::dim(format!(
                "pairwise_hinge: {} predictions vs {} targets",
                p.len(),
                target.len()
            )));
        }
        let mut acc = 0.0;
        for i in 0..p.len() {
            for j in 0..p.len() {
                acc += (-(p[i] - p[j]) * (target[i] - target[j])).max(0.0);
            }
        }
        let rg = self.rg(&[pred]);
        self.push(
            Vec::new(),
            vec![acc],
            Op::PairwiseHinge {
                pred,
                target: target.to_vec(),
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`. Consumes the graph; the returned
    /// [`Gradients`] hold the accumulated gradient of every tracked leaf.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul {
                    a,
                    b,
                    batch,
                    m,
                    k,
                    n,
                    a_batched,
                    b_batched,
                } => {
                    let (m, k, n) = (*m, *k, *n);
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    if nodes[a.0].requires_grad {
                        let da = slot(&mut grads, nodes, *a);
                        for bt in 0..*batch {
                            let ao = if *a_batched { bt * m * k } else { 0 };
                            let bo = if *b_batched { bt * k * n } else { 0 };
                            for i in 0..m {
                                let grow = &g[(bt * m + i) * n..(bt * m + i + 1) * n];
                                for p in 0..k {
                                    let brow = &bv[bo + p * n..bo + (p + 1) * n];
                                    da[ao + i * k + p] +=
                                        grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                                }
                            }
                        }
                    }
                    if nodes[b.0].requires_grad {
                        let db = slot(&mut grads, nodes, *b);
                        for bt in 0..*batch {
                            let ao = if *a_batched { bt * m * k } else { 0 };
                            let bo = if *b_batched { bt * k * n } else { 0 };
                            for i in 0..m {
                                let grow = &g[(bt * m + i) * n..(bt * m + i + 1) * n];
                                for p in 0..k {
                                    let x = av[ao + i * k + p];
                                    let drow = &mut db[bo + p * n..bo + (p + 1) * n];
                                    for (d, gg) in drow.iter_mut().zip(grow) {
                                        *d += x * gg;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc_map(&mut grads, nodes, *a, &g, |_, gi| gi);
                    acc_map(&mut grads, nodes, *b, &g, |_, gi| gi);
                }
                Op::Sub(a, b) => {
                    acc_map(&mut grads, nodes, *a, &g, |_, gi| gi);
                    acc_map(&mut grads, nodes, *b, &g, |_, gi| -gi);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc_map(&mut grads, nodes, *a, &g, |i, gi| gi * bv[i]);
                    acc_map(&mut grads, nodes, *b, &g, |i, gi| gi * av[i]);
                }
                Op::Scale(a, c) => acc_map(&mut grads, nodes, *a, &g, |_, gi| gi * c),
                Op::Tanh(a) => {
                    if self.faulty_tanh {
                        acc_map(&mut grads, nodes, *a, &g, |i, gi| gi * (1.0 - y[i]));
                    } else {
                        acc_map(&mut grads, nodes, *a, &g, |i, gi| gi * (1.0 - y[i] * y[i]));
                    }
                }
                Op::Powf(a, p) => {
                    let av = &nodes[a.0].value;
                    acc_map(&mut grads, nodes, *a, &g, |i, gi| gi * p * av[i].powf(p - 1.0));
                }
                Op::InvClamp(a, eps) => {
                    let av = &nodes[a.0].value;
                    acc_map(&mut grads, nodes, *a, &g, |i, gi| {
                        if av[i] > *eps {
                            -gi * y[i] * y[i]
                        } else {
                            0.0
                        }
                    });
                }
                Op::Sum(a) => acc_map(&mut grads, nodes, *a, &g, |_, _| g[0]),
                Op::SumAxis { x, outer, len, inner } => {
                    if nodes[x.0].requires_grad {
                        let dx = slot(&mut grads, nodes, *x);
                        for o in 0..*outer {
                            for l in 0..*len {
                                for i in 0..*inner {
                                    dx[(o * len + l) * inner + i] += g[o * inner + i];
                                }
                            }
                        }
                    }
                }
                Op::Reshape(x) => acc_map(&mut grads, nodes, *x, &g, |_, gi| gi),
                Op::Gather { x, index } => {
                    if nodes[x.0].requires_grad {
                        let dx = slot(&mut grads, nodes, *x);
                        for (o, &i) in index.iter().enumerate() {
                            dx[i] += g[o];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if nodes[p.0].requires_grad {
                            let dp = slot(&mut grads, nodes, *p);
                            for (d, gg) in dp.iter_mut().zip(&g[off..off + len]) {
                                *d += gg;
                            }
                        }
                        off += len;
                    }
                }
                Op::Softmax { x, outer, len, inner } => {
                    if nodes[x.0].requires_grad {
                        let dx = slot(&mut grads, nodes, *x);
                        for o in 0..*outer {
                            for i in 0..*inner {
                                let at = |l: usize| (o * len + l) * inner + i;
                                let dot: f64 = (0..*len).map(|l| g[at(l)] * y[at(l)]).sum();
                                for l in 0..*len {
                                    dx[at(l)] += y[at(l)] * (g[at(l)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::MaskFill { x, mask } => {
                    acc_map(&mut grads, nodes, *x, &g, |i, gi| if mask[i] { 0.0 } else { gi })
                }
                Op::Conv1d {
                    x,
                    kernel,
                    n,
                    t_in,
                    t_out,
                    f,
                    klen,
                    stride,
                    per_channel,
                } => {
                    let xv = &nodes[x.0].value;
                    let kv = &nodes[kernel.0].value;
                    let widx = |c: usize, o: usize| if *per_channel { c * klen + o } else { o };
                    if nodes[x.0].requires_grad {
                        let dx = slot(&mut grads, nodes, *x);
                        for s in 0..*n {
                            for q in 0..*t_out {
                                for c in 0..*f {
                                    let gg = g[(s * t_out + q) * f + c];
                                    for o in 0..*klen {
                                        dx[(s * t_in + q * stride + o) * f + c] += gg * kv[widx(c, o)];
                                    }
                                }
                            }
                        }
                    }
                    if nodes[kernel.0].requires_grad {
                        let dk = slot(&mut grads, nodes, *kernel);
                        for s in 0..*n {
                            for q in 0..*t_out {
                                for c in 0..*f {
                                    let gg = g[(s * t_out + q) * f + c];
                                    for o in 0..*klen {
                                        dk[widx(c, o)] += gg * xv[(s * t_in + q * stride + o) * f + c];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::PairwiseSqDist { z, m, t, d } => {
                    if nodes[z.0].requires_grad {
                        let (m, t, d) = (*m, *t, *d);
                        let zv = &nodes[z.0].value;
                        let dz = slot(&mut grads, nodes, *z);
                        for i in 0..m {
                            for j in 0..m {
                                if i == j {
                                    continue;
                                }
                                for tt in 0..t {
                                    let w = 2.0 * (g[(i * m + j) * t + tt] + g[(j * m + i) * t + tt]);
                                    for c in 0..d {
                                        let diff = zv[(i * t + tt) * d + c] - zv[(j * t + tt) * d + c];
                                        dz[(i * t + tt) * d + c] += w * diff;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::PairwiseHinge { pred, target } => {
                    if nodes[pred.0].requires_grad {
                        let pv = &nodes[pred.0].value;
                        let dp = slot(&mut grads, nodes, *pred);
                        for i in 0..pv.len() {
                            for j in 0..pv.len() {
                                let dy = target[i] - target[j];
                                if -(pv[i] - pv[j]) * dy > 0.0 {
                                    dp[i] -= g[0] * dy;
                                    dp[j] += g[0] * dy;
                                }
                            }
                        }
                    }
                }
            }
        }

        for (id, node) in nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[id] = None;
            }
        }
        Ok(Gradients {
            grads,
            params: self.params,
        })
    }
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

fn acc_map(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    v: Var,
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let dst = slot(grads, nodes, v);
    let len = dst.len();
    for i in 0..len {
        dst[i] += f(i, g[if g.len() == 1 { 0 } else { i }]);
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient with respect to a tracked leaf. `None` when the leaf was not
    /// reachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).and_then(|v| self.wrt(*v))
    }

    /// Adds each bound parameter's gradient into its slot in `store`.
    /// Parameters bound but unreachable from the loss receive zeros.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (name, v) in &self.params {
            let t = store
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
            match self.wrt(*v) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }
}
