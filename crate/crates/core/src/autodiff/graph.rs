use std::collections::HashMap;

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{DcaError, Result};

/// Handle to an array recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Local derivative expressed through the output value `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param {
        id: ParamId,
        row: Option<usize>,
    },
    Affine {
        w: Var,
        x: Var,
        b: Option<Var>,
    },
    RowAffine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy {
        s: Var,
        x: Var,
    },
    OneMinus(Var),
    Pointwise(Var, Activation),
    MaskedSoftmax {
        x: Var,
        mask: Vec<bool>,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Stack(Vec<Var>),
    Dot(Var, Var),
    Sum(Var),
    Cosine {
        u: Var,
        v: Var,
    },
    AdditiveScores {
        keys: Var,
        query: Var,
        v: Var,
        act: Vec<f64>,
    },
    WeightedRows {
        w: Var,
        rows: Var,
    },
    WeightedSum {
        w: Var,
        xs: Vec<Var>,
    },
    ScatterAdd {
        x: Var,
        ids: Vec<usize>,
    },
    ZeroExtend(Var),
    Pick {
        x: Var,
        index: usize,
    },
    LogFloor {
        x: Var,
        floor: f64,
    },
}

impl Op {
    fn is_leaf(&self) -> bool {
        matches!(self, Op::Constant | Op::Param { .. })
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Tape of array operations for one forward pass.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order and [`Graph::backward`] walks it in reverse. Parameters
/// enter as leaves read from a borrowed [`ParamStore`]; each parameter (or
/// embedding row) gets a single leaf per graph so repeated uses accumulate
/// into one gradient.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    leaves: HashMap<(ParamId, Option<usize>), Var>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            leaves: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        self.nodes[v.0].op.is_leaf()
    }

    // ---- leaves ----

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.constant(Tensor::zeros(&[len]))
    }

    /// Leaf holding the whole parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.leaves.get(&(id, None)) {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = self.push(value, Op::Param { id, row: None });
        self.leaves.insert((id, None), v);
        v
    }

    /// Leaf holding one row of a rank-2 parameter (embedding lookup).
    pub fn param_row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        if let Some(&v) = self.leaves.get(&(id, Some(row))) {
            return Ok(v);
        }
        let t = self.store.get(id);
        let (rows, _) = t
            .dims2()
            .ok_or_else(|| DcaError::shape("param_row", t.shape(), &[row]))?;
        if row >= rows {
            return Err(DcaError::shape("param_row", t.shape(), &[row]));
        }
        let value = Tensor::vector(t.row(row).to_vec());
        let v = self.push(value, Op::Param { id, row: Some(row) });
        self.leaves.insert((id, Some(row)), v);
        Ok(v)
    }

    // ---- operations ----

    /// `w · x (+ b)` for a matrix `w` of shape `[m, n]`.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let wt = self.value(w);
        let xt = self.value(x);
        let (m, n) = wt
            .dims2()
            .ok_or_else(|| DcaError::shape("affine", wt.shape(), xt.shape()))?;
        if !xt.is_vector() || xt.len() != n {
            return Err(DcaError::shape("affine", wt.shape(), xt.shape()));
        }
        let mut out = match b {
            Some(b) => {
                let bt = self.value(b);
                if !bt.is_vector() || bt.len() != m {
                    return Err(DcaError::shape("affine", wt.shape(), bt.shape()));
                }
                bt.data().to_vec()
            }
            None => vec![0.0; m],
        };
        let wd = wt.data();
        let xd = xt.data();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wd[i * n..(i + 1) * n];
            *o += row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(Tensor::vector(out), Op::Affine { w, x, b }))
    }

    /// `x · wᵀ (+ b)` applied to every row of `x` (`[r, n]` → `[r, m]`).
    pub fn row_affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xt = self.value(x);
        let wt = self.value(w);
        let (r, n) = xt
            .dims2()
            .ok_or_else(|| DcaError::shape("row_affine", xt.shape(), wt.shape()))?;
        let (m, n2) = wt
            .dims2()
            .ok_or_else(|| DcaError::shape("row_affine", xt.shape(), wt.shape()))?;
        if n != n2 {
            return Err(DcaError::shape("row_affine", xt.shape(), wt.shape()));
        }
        let bias = match b {
            Some(b) => {
                let bt = self.value(b);
                if bt.len() != m {
                    return Err(DcaError::shape("row_affine", wt.shape(), bt.shape()));
                }
                Some(bt.data())
            }
            None => None,
        };
        let xd = xt.data();
        let wd = wt.data();
        let mut out = vec![0.0; r * m];
        for i in 0..r {
            let xrow = &xd[i * n..(i + 1) * n];
            for j in 0..m {
                let wrow = &wd[j * n..(j + 1) * n];
                let mut acc = bias.map_or(0.0, |b| b[j]);
                acc += xrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                out[i * m + j] = acc;
            }
        }
        Ok(self.push(Tensor::new(vec![r, m], out)?, Op::RowAffine { x, w, b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(DcaError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let data = av.data().iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data).expect("same shape"), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale(x, factor))
    }

    /// Multiplies `x` by the scalar array `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(DcaError::shape("scale_by", self.shape(s), self.shape(x)));
        }
        let sv = self.item(s);
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * sv).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::ScaleBy { s, x }))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| 1.0 - v).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::OneMinus(x))
    }

    pub fn pointwise(&mut self, act: Activation, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| act.apply(*v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Pointwise(x, act))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.pointwise(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.pointwise(Activation::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(Activation::Relu, x)
    }

    /// Softmax over the positions where `mask` is true; masked positions are
    /// exactly zero and receive no gradient.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if !t.is_vector() || t.len() != mask.len() {
            return Err(DcaError::shape("masked_softmax", t.shape(), &[mask.len()]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(DcaError::InvalidMask);
        }
        let xd = t.data();
        let max = xd
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = xd
            .iter()
            .zip(mask)
            .map(|(v, &m)| if m { (v - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = out.iter().sum();
        for o in &mut out {
            *o /= total;
        }
        Ok(self.push(Tensor::vector(out), Op::MaskedSoftmax { x, mask: mask.to_vec() }))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let mask = vec![true; self.value(x).len()];
        self.masked_softmax(x, &mask)
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(DcaError::Argument("concat of an empty list".into()));
        }
        let mut out = Vec::new();
        for &x in xs {
            let t = self.value(x);
            if !t.is_vector() {
                return Err(DcaError::shape("concat", t.shape(), &[]));
            }
            out.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::vector(out), Op::Concat(xs.to_vec())))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if !t.is_vector() || start + len > t.len() {
            return Err(DcaError::shape("slice", t.shape(), &[start, len]));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice { x, start }))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| DcaError::Argument("stack of an empty list".into()))?;
        let width = self.value(*first).len();
        let mut out = Vec::with_capacity(width * xs.len());
        for &x in xs {
            let t = self.value(x);
            if !t.is_vector() || t.len() != width {
                return Err(DcaError::shape("stack", &[width], t.shape()));
            }
            out.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![xs.len(), width], out)?;
        Ok(self.push(value, Op::Stack(xs.to_vec())))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.data(x).iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(x))
    }

    /// Cosine similarity of two vectors. A zero vector is an error rather
    /// than a silent zero.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        self.same_shape("cosine_similarity", u, v)?;
        let ud = self.data(u);
        let vd = self.data(v);
        let nu = ud.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = vd.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            return Err(DcaError::DegenerateNorm);
        }
        let dot: f64 = ud.iter().zip(vd).map(|(a, b)| a * b).sum();
        let cos = (dot / (nu * nv)).clamp(-1.0, 1.0);
        Ok(self.push(Tensor::scalar(cos), Op::Cosine { u, v }))
    }

    /// Additive attention scores `vᵀ tanh(keys_i + query)` for every row of
    /// `keys` (`[I, d]`), giving a length-`I` vector.
    pub fn additive_scores(&mut self, keys: Var, query: Var, v: Var) -> Result<Var> {
        let kt = self.value(keys);
        let (rows, d) = kt
            .dims2()
            .ok_or_else(|| DcaError::shape("additive_scores", kt.shape(), self.shape(query)))?;
        if self.value(query).len() != d || self.value(v).len() != d {
            return Err(DcaError::shape("additive_scores", kt.shape(), self.shape(query)));
        }
        let kd = kt.data();
        let qd = self.data(query);
        let vd = self.data(v);
        let mut act = Vec::with_capacity(rows * d);
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let mut s = 0.0;
            for j in 0..d {
                let a = (kd[i * d + j] + qd[j]).tanh();
                act.push(a);
                s += vd[j] * a;
            }
            out.push(s);
        }
        Ok(self.push(Tensor::vector(out), Op::AdditiveScores { keys, query, v, act }))
    }

    /// `Σ_i w_i · rows_i` for `rows` of shape `[I, d]`.
    pub fn weighted_rows(&mut self, w: Var, rows: Var) -> Result<Var> {
        let rt = self.value(rows);
        let (n, d) = rt
            .dims2()
            .ok_or_else(|| DcaError::shape("weighted_rows", self.shape(w), rt.shape()))?;
        if self.value(w).len() != n {
            return Err(DcaError::shape("weighted_rows", self.shape(w), rt.shape()));
        }
        let wd = self.data(w);
        let rd = rt.data();
        let mut out = vec![0.0; d];
        for i in 0..n {
            let wi = wd[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..d {
                out[j] += wi * rd[i * d + j];
            }
        }
        Ok(self.push(Tensor::vector(out), Op::WeightedRows { w, rows }))
    }

    /// `Σ_a w_a · xs_a` over equal-length vectors.
    pub fn weighted_sum(&mut self, w: Var, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() || self.value(w).len() != xs.len() {
            return Err(DcaError::shape("weighted_sum", self.shape(w), &[xs.len()]));
        }
        let d = self.value(xs[0]).len();
        let mut out = vec![0.0; d];
        for (a, &x) in xs.iter().enumerate() {
            let wa = self.data(w)[a];
            let xd = self.data(x);
            if xd.len() != d {
                return Err(DcaError::shape("weighted_sum", &[d], self.shape(x)));
            }
            for (o, v) in out.iter_mut().zip(xd) {
                *o += wa * v;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::WeightedSum { w, xs: xs.to_vec() }))
    }

    /// Scatter-adds `x[i]` into slot `ids[i]` of a zero vector of length `size`.
    pub fn scatter_add(&mut self, x: Var, ids: &[usize], size: usize) -> Result<Var> {
        if self.value(x).len() != ids.len() {
            return Err(DcaError::shape("scatter_add", self.shape(x), &[ids.len()]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= size) {
            return Err(DcaError::Contract(format!(
                "scatter id {bad} outside a target of size {size}"
            )));
        }
        let mut out = vec![0.0; size];
        for (v, &i) in self.data(x).iter().zip(ids) {
            out[i] += v;
        }
        Ok(self.push(Tensor::vector(out), Op::ScatterAdd { x, ids: ids.to_vec() }))
    }

    /// Pads a vector with trailing zeros up to `size`.
    pub fn zero_extend(&mut self, x: Var, size: usize) -> Result<Var> {
        let t = self.value(x);
        if !t.is_vector() || t.len() > size {
            return Err(DcaError::shape("zero_extend", t.shape(), &[size]));
        }
        let mut out = t.data().to_vec();
        out.resize(size, 0.0);
        Ok(self.push(Tensor::vector(out), Op::ZeroExtend(x)))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if index >= t.len() {
            return Err(DcaError::Contract(format!(
                "index {index} outside an array of length {}",
                t.len()
            )));
        }
        let v = t.data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick { x, index }))
    }

    /// `ln(max(x, floor))` of a scalar.
    pub fn log_floor(&mut self, x: Var, floor: f64) -> Result<Var> {
        let t = self.value(x);
        if t.len() != 1 {
            return Err(DcaError::shape("log_floor", t.shape(), &[1]));
        }
        let v = t.item().max(floor).ln();
        Ok(self.push(Tensor::scalar(v), Op::LogFloor { x, floor }))
    }

    // ---- reverse pass ----

    /// Reverse-mode sweep from a scalar `root`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grads`]; interior gradients reflect
    /// the latest sweep.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(DcaError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            if node.op.is_leaf() {
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            } else {
                node.grad = Some(g);
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Gradients of every parameter leaf, scattered back into parameter
    /// shapes.
    pub fn param_grads(&self) -> Gradients {
        let mut out = Gradients::zeros_like(self.store);
        for n in &self.nodes {
            if let (Op::Param { id, row }, Some(g)) = (&n.op, &n.grad) {
                let shape = self.store.get(*id).shape();
                let offset = row.map_or(0, |r| r * g.len());
                out.accumulate(*id, shape, offset, g);
            }
        }
        out
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let node = &self.nodes[i];
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Constant | Op::Param { .. } => {}
            Op::Affine { w, x, b } => {
                let wd = self.data(*w);
                let xd = self.data(*x);
                let n = xd.len();
                {
                    let dw = acc(grads, *w, wd.len());
                    for (r, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            for (d, xv) in dw[r * n..(r + 1) * n].iter_mut().zip(xd) {
                                *d += gi * xv;
                            }
                        }
                    }
                }
                {
                    let dx = acc(grads, *x, n);
                    for (r, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            for (d, wv) in dx.iter_mut().zip(&wd[r * n..(r + 1) * n]) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    let db = acc(grads, *b, g.len());
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::RowAffine { x, w, b } => {
                let (r, n) = self.value(*x).dims2().expect("matrix");
                let m = self.value(*w).dims2().expect("matrix").0;
                let xd = self.data(*x);
                let wd = self.data(*w);
                {
                    let dw = acc(grads, *w, m * n);
                    for i in 0..r {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij != 0.0 {
                                for k in 0..n {
                                    dw[j * n + k] += gij * xd[i * n + k];
                                }
                            }
                        }
                    }
                }
                {
                    let dx = acc(grads, *x, r * n);
                    for i in 0..r {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij != 0.0 {
                                for k in 0..n {
                                    dx[i * n + k] += gij * wd[j * n + k];
                                }
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    let db = acc(grads, *b, m);
                    for i in 0..r {
                        for j in 0..m {
                            db[j] += g[i * m + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    let d = acc(grads, v, g.len());
                    d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::Sub(a, b) => {
                let da = acc(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                let db = acc(grads, *b, g.len());
                db.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi);
            }
            Op::Mul(a, b) => {
                let ad = self.data(*a);
                let bd = self.data(*b);
                let da = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    da[k] += g[k] * bd[k];
                }
                let db = acc(grads, *b, g.len());
                for k in 0..g.len() {
                    db[k] += g[k] * ad[k];
                }
            }
            Op::Scale(x, f) => {
                let dx = acc(grads, *x, g.len());
                dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * f);
            }
            Op::ScaleBy { s, x } => {
                let sv = self.item(*s);
                let xd = self.data(*x);
                let ds: f64 = g.iter().zip(xd).map(|(a, b)| a * b).sum();
                acc(grads, *s, 1)[0] += ds;
                let dx = acc(grads, *x, g.len());
                dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * sv);
            }
            Op::OneMinus(x) => {
                let dx = acc(grads, *x, g.len());
                dx.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi);
            }
            Op::Pointwise(x, act) => {
                let y = node.value.data();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    dx[k] += g[k] * act.derivative(y[k]);
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                let y = node.value.data();
                let inner: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                let dx = acc(grads, *x, g.len());
                for k in 0..g.len() {
                    if mask[k] {
                        dx[k] += y[k] * (g[k] - inner);
                    }
                }
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let l = len(x);
                    let dx = acc(grads, x, l);
                    for k in 0..l {
                        dx[k] += g[offset + k];
                    }
                    offset += l;
                }
            }
            Op::Slice { x, start } => {
                let dx = acc(grads, *x, len(*x));
                for (k, gi) in g.iter().enumerate() {
                    dx[start + k] += gi;
                }
            }
            Op::Stack(xs) => {
                let width = node.value.dims2().expect("matrix").1;
                for (r, &x) in xs.iter().enumerate() {
                    let dx = acc(grads, x, width);
                    for k in 0..width {
                        dx[k] += g[r * width + k];
                    }
                }
            }
            Op::Dot(a, b) => {
                let ad = self.data(*a);
                let bd = self.data(*b);
                let gi = g[0];
                let da = acc(grads, *a, ad.len());
                da.iter_mut().zip(bd).for_each(|(d, v)| *d += gi * v);
                let db = acc(grads, *b, bd.len());
                db.iter_mut().zip(ad).for_each(|(d, v)| *d += gi * v);
            }
            Op::Sum(x) => {
                let dx = acc(grads, *x, len(*x));
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Cosine { u, v } => {
                let ud = self.data(*u);
                let vd = self.data(*v);
                let nu = ud.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = vd.iter().map(|x| x * x).sum::<f64>().sqrt();
                let dot: f64 = ud.iter().zip(vd).map(|(a, b)| a * b).sum();
                let cos = dot / (nu * nv);
                let gi = g[0];
                let du = acc(grads, *u, ud.len());
                for k in 0..ud.len() {
                    du[k] += gi * (vd[k] / (nu * nv) - cos * ud[k] / (nu * nu));
                }
                let dv = acc(grads, *v, vd.len());
                for k in 0..vd.len() {
                    dv[k] += gi * (ud[k] / (nu * nv) - cos * vd[k] / (nv * nv));
                }
            }
            Op::AdditiveScores { keys, query, v, act } => {
                let (rows, d) = self.value(*keys).dims2().expect("matrix");
                let vd = self.data(*v);
                {
                    let dv = acc(grads, *v, d);
                    for i in 0..rows {
                        for j in 0..d {
                            dv[j] += g[i] * act[i * d + j];
                        }
                    }
                }
                let mut pre = vec![0.0; rows * d];
                for i in 0..rows {
                    for j in 0..d {
                        let a = act[i * d + j];
                        pre[i * d + j] = g[i] * vd[j] * (1.0 - a * a);
                    }
                }
                {
                    let dk = acc(grads, *keys, rows * d);
                    dk.iter_mut().zip(&pre).for_each(|(d, p)| *d += p);
                }
                let dq = acc(grads, *query, d);
                for i in 0..rows {
                    for j in 0..d {
                        dq[j] += pre[i * d + j];
                    }
                }
            }
            Op::WeightedRows { w, rows } => {
                let (n, d) = self.value(*rows).dims2().expect("matrix");
                let wd = self.data(*w);
                let rd = self.data(*rows);
                {
                    let dw = acc(grads, *w, n);
                    for i in 0..n {
                        dw[i] += (0..d).map(|j| g[j] * rd[i * d + j]).sum::<f64>();
                    }
                }
                let dr = acc(grads, *rows, n * d);
                for i in 0..n {
                    for j in 0..d {
                        dr[i * d + j] += wd[i] * g[j];
                    }
                }
            }
            Op::WeightedSum { w, xs } => {
                let wd = self.data(*w);
                let mut dw = vec![0.0; xs.len()];
                for (a, &x) in xs.iter().enumerate() {
                    let xd = self.data(x);
                    dw[a] = xd.iter().zip(g).map(|(p, q)| p * q).sum();
                    let dx = acc(grads, x, xd.len());
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += wd[a] * gi);
                }
                let dwa = acc(grads, *w, xs.len());
                dwa.iter_mut().zip(&dw).for_each(|(d, v)| *d += v);
            }
            Op::ScatterAdd { x, ids } => {
                let dx = acc(grads, *x, ids.len());
                for (k, &id) in ids.iter().enumerate() {
                    dx[k] += g[id];
                }
            }
            Op::ZeroExtend(x) => {
                let l = len(*x);
                let dx = acc(grads, *x, l);
                for k in 0..l {
                    dx[k] += g[k];
                }
            }
            Op::Pick { x, index } => {
                let dx = acc(grads, *x, len(*x));
                dx[*index] += g[0];
            }
            Op::LogFloor { x, floor } => {
                let xv = self.item(*x);
                let dx = acc(grads, *x, 1);
                if xv > *floor {
                    dx[0] += g[0] / xv;
                }
            }
        }
    }
}
