//! Define-by-run reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because nodes only ever reference earlier nodes.

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{shape_err, NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One attention group: a contiguous block of query rows attending over an
/// explicit list of key/value rows. Keys left out of the list are masked.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnGroup {
    pub queries: Range<usize>,
    pub keys: Vec<usize>,
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    SegmentSum(Var, Vec<Range<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: Vec<AttnGroup>,
        heads: usize,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording tape. One graph per forward/backward evaluation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Grads {
    node_grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, Var)>,
}

impl Grads {
    /// Gradient with respect to `v`, zeros when `v` is not reachable.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.node_grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Per-parameter gradients aligned with `store`; parameters that never
    /// entered the graph get zeros.
    pub fn params(&self, store: &ParamStore) -> ParamGrads {
        let mut out: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for &(id, var) in &self.params {
            if let Some(g) = &self.node_grads[var.0] {
                out[id.index()].data_mut().copy_from_slice(g);
            }
        }
        ParamGrads(out)
    }
}

/// Gradients for every parameter of a store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads(pub Vec<Tensor>);

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads(store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.index()]
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            for x in t.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Branch taken at every non-differentiable point of the recorded
    /// evaluation: ReLU input sign and which side of each minimum won.
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            match n.op {
                Op::Relu(a) => sig.extend(self.nodes[a.0].value.data().iter().map(|&x| x > 0.0)),
                Op::Minimum(a, b) => sig.extend(
                    self.nodes[a.0]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(x, y)| x <= y),
                ),
                _ => {}
            }
        }
        sig
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Differentiable leaf that is not a stored parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Brings a stored parameter onto the tape. Repeated calls return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (k2, n) = dims(self.value(b));
        if k != k2 {
            return shape_err("matmul", format!("{m}x{k} · {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if dims(self.value(a)) != dims(self.value(b)) {
            return shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            );
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = dims(self.value(a));
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(r, c, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        Ok(self.zip_with(a, b, Op::Minimum(a, b), f64::min))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if dims(self.value(row)) != (1, c) {
            return shape_err("add_row", format!("{r}x{c} + {:?}", self.value(row).shape()));
        }
        let bias = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, b) in chunk.iter_mut().zip(&bias) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(Tensor::matrix(r, c, data), Op::AddRow(a, row), ng))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = dims(self.value(a));
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, c, data), op, ng)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.map(a, Op::Affine(a, scale), |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.zip_with(a, a, Op::Mul(a, a), |x, y| x * y)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = pairwise_sum(self.value(a).data());
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = pairwise_sum(t.data()) / t.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Row sums, `r × c → r × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.value(a));
        let data = self.value(a).data().chunks(c).map(|row| row.iter().sum()).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, 1, data), Op::SumCols(a), ng)
    }

    /// Sums contiguous row ranges, one output row per range.
    pub fn segment_sum(&mut self, a: Var, segments: Vec<Range<usize>>) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if segments.is_empty() {
            return Err(NnError::Empty("segment_sum"));
        }
        if let Some(bad) = segments.iter().find(|s| s.end > r || s.start > s.end) {
            return shape_err("segment_sum", format!("segment {bad:?} outside {r} rows"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; segments.len() * c];
        for (o, seg) in out.chunks_mut(c).zip(&segments) {
            for row in seg.clone() {
                for (x, y) in o.iter_mut().zip(&src[row * c..(row + 1) * c]) {
                    *x += y;
                }
            }
        }
        let ng = self.ng(a);
        let n = segments.len();
        Ok(self.push(Tensor::matrix(n, c, out), Op::SegmentSum(a, segments), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(NnError::Empty("concat_cols"));
        };
        let r = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return shape_err("concat_cols", "row counts differ");
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(row));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(r, total, out), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(NnError::Empty("concat_rows"));
        };
        let c = self.value(first).cols();
        if parts.iter().any(|&p| self.value(p).cols() != c) {
            return shape_err("concat_rows", "column counts differ");
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let r = out.len() / c;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(r, c, out), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if idx.is_empty() {
            return Err(NnError::Empty("gather_rows"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return shape_err("gather_rows", format!("row {bad} of {r}"));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(src.row_slice(i));
        }
        let n = idx.len();
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(n, c, out), Op::GatherRows(a, idx), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if len == 0 || start + len > c {
            return shape_err("slice_cols", format!("[{start}, {}) of {c}", start + len));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&src.row_slice(row)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, len, out), Op::SliceCols(a, start), ng))
    }

    /// Scaled dot-product attention, `softmax(Q Kᵀ / √d_head) V`, evaluated
    /// independently per group and per head.
    ///
    /// Columns of `q`/`k` are split into `heads` equal blocks (as are the
    /// columns of `v`); head outputs are concatenated. Query rows outside
    /// every group produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: Vec<AttnGroup>, heads: usize) -> Result<Var> {
        let (rq, dq) = dims(self.value(q));
        let (rk, dk) = dims(self.value(k));
        let (rv, dv) = dims(self.value(v));
        if dq != dk || rk != rv {
            return shape_err("attention", format!("Q {rq}x{dq}, K {rk}x{dk}, V {rv}x{dv}"));
        }
        if heads == 0 || dq % heads != 0 || dv % heads != 0 {
            return shape_err("attention", format!("{heads} heads for widths {dq}/{dv}"));
        }
        for g in &groups {
            if g.keys.is_empty() {
                return Err(NnError::Empty("attention keys"));
            }
            if g.queries.end > rq || g.keys.iter().any(|&kk| kk >= rk) {
                return shape_err("attention", "group index out of range");
            }
        }
        let hq = dq / heads;
        let hv = dv / heads;
        let scale = 1.0 / (hq as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; rq * dv];
        let mut weights = Vec::new();
        let mut scores = Vec::new();
        for g in &groups {
            for h in 0..heads {
                for qi in g.queries.clone() {
                    let qrow = &qd[qi * dq + h * hq..qi * dq + (h + 1) * hq];
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for &ki in &g.keys {
                        let krow = &kd[ki * dk + h * hq..ki * dk + (h + 1) * hq];
                        let s = dot(qrow, krow) * scale;
                        max = max.max(s);
                        scores.push(s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let orow = &mut out[qi * dv + h * hv..qi * dv + (h + 1) * hv];
                    for (s, &ki) in scores.iter_mut().zip(&g.keys) {
                        *s /= z;
                        let vrow = &vd[ki * dv + h * hv..ki * dv + (h + 1) * hv];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += *s * x;
                        }
                    }
                    weights.extend_from_slice(&scores);
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::matrix(rq, dv, out),
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                weights,
            },
            ng,
        ))
    }

    /// Softmax rows of an attention node: one `(group, head, query row, weights)`
    /// tuple per evaluated row.
    pub fn attention_weights(&self, a: Var) -> Option<Vec<(usize, usize, usize, Vec<f64>)>> {
        let Op::Attention {
            groups, heads, weights, ..
        } = &self.nodes[a.0].op
        else {
            return None;
        };
        let mut rows = Vec::new();
        let mut off = 0;
        for (gi, g) in groups.iter().enumerate() {
            for h in 0..*heads {
                for qi in g.queries.clone() {
                    rows.push((gi, h, qi, weights[off..off + g.keys.len()].to_vec()));
                    off += g.keys.len();
                }
            }
        }
        Some(rows)
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(NnError::NonScalarRoot(root_val.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_by_key(|(id, _)| id.index());
        Ok(Grads {
            node_grads: grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params,
        })
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.value(*a));
                let n = self.value(*b).cols();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                self.accum(grads, *a, |ga| gemm(m, n, k, g, false, bd, true, 1.0, ga));
                self.accum(grads, *b, |gb| gemm(k, m, n, ad, true, g, false, 1.0, gb));
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, |ga| add_into(ga, g));
                self.accum(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |ga| add_into(ga, g));
                self.accum(grads, *b, |gb| {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accum(grads, *a, |ga| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(bd) {
                        *x += y * z;
                    }
                });
                self.accum(grads, *b, |gb| {
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(ad) {
                        *x += y * z;
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accum(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if ad[i] <= bd[i] {
                            ga[i] += g[i];
                        }
                    }
                });
                self.accum(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        if ad[i] > bd[i] {
                            gb[i] += g[i];
                        }
                    }
                });
            }
            Op::AddRow(a, row) => {
                let c = out.cols();
                self.accum(grads, *a, |ga| add_into(ga, g));
                self.accum(grads, *row, |gr| {
                    for chunk in g.chunks(c) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::Affine(a, s) => self.accum(grads, *a, |ga| {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += s * y;
                }
            }),
            Op::Relu(a) => {
                let ad = self.value(*a).data();
                self.accum(grads, *a, |ga| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(ad) {
                        if *z > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Tanh(a) => self.accum(grads, *a, |ga| {
                for ((x, y), t) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * (1.0 - t * t);
                }
            }),
            Op::Exp(a) => self.accum(grads, *a, |ga| {
                for ((x, y), e) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * e;
                }
            }),
            Op::Ln(a) => {
                let ad = self.value(*a).data();
                self.accum(grads, *a, |ga| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(ad) {
                        *x += y / z;
                    }
                });
            }
            Op::Sum(a) => self.accum(grads, *a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::Mean(a) => self.accum(grads, *a, |ga| {
                let s = g[0] / ga.len() as f64;
                for x in ga.iter_mut() {
                    *x += s;
                }
            }),
            Op::SumCols(a) => {
                let c = self.value(*a).cols();
                self.accum(grads, *a, |ga| {
                    for (chunk, y) in ga.chunks_mut(c).zip(g) {
                        for x in chunk {
                            *x += y;
                        }
                    }
                });
            }
            Op::SegmentSum(a, segments) => {
                let c = out.cols();
                self.accum(grads, *a, |ga| {
                    for (seg, gs) in segments.iter().zip(g.chunks(c)) {
                        for row in seg.clone() {
                            add_into(&mut ga[row * c..(row + 1) * c], gs);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    self.accum(grads, p, |gp| {
                        for (dst, src) in gp.chunks_mut(pc).zip(g.chunks(total)) {
                            add_into(dst, &src[off..off + pc]);
                        }
                    });
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accum(grads, p, |gp| add_into(gp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::GatherRows(a, idx) => {
                let c = out.cols();
                self.accum(grads, *a, |ga| {
                    for (&i, src) in idx.iter().zip(g.chunks(c)) {
                        add_into(&mut ga[i * c..(i + 1) * c], src);
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let c = self.value(*a).cols();
                let len = out.cols();
                self.accum(grads, *a, |ga| {
                    for (dst, src) in ga.chunks_mut(c).zip(g.chunks(len)) {
                        add_into(&mut dst[*start..*start + len], src);
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                weights,
            } => self.attention_backward(*q, *k, *v, groups, *heads, weights, g, grads),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        groups: &[AttnGroup],
        heads: usize,
        weights: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (dq, dv) = (qt.cols(), vt.cols());
        let (hq, hv) = (dq / heads, dv / heads);
        let scale = 1.0 / (hq as f64).sqrt();
        let mut gq = vec![0.0; qt.len()];
        let mut gk = vec![0.0; kt.len()];
        let mut gv = vec![0.0; vt.len()];
        let (qd, kd, vd) = (qt.data(), kt.data(), vt.data());
        let mut off = 0;
        let mut dscore = Vec::new();
        for grp in groups {
            let nk = grp.keys.len();
            for h in 0..heads {
                for qi in grp.queries.clone() {
                    let w = &weights[off..off + nk];
                    off += nk;
                    let go = &g[qi * dv + h * hv..qi * dv + (h + 1) * hv];
                    // dA_j = dO · V_j ; dV_j += A_j dO
                    dscore.clear();
                    let mut inner = 0.0;
                    for (&wj, &ki) in w.iter().zip(&grp.keys) {
                        let vrow = &vd[ki * dv + h * hv..ki * dv + (h + 1) * hv];
                        let da = dot(go, vrow);
                        inner += wj * da;
                        dscore.push(da);
                        let gvrow = &mut gv[ki * dv + h * hv..ki * dv + (h + 1) * hv];
                        for (x, y) in gvrow.iter_mut().zip(go) {
                            *x += wj * y;
                        }
                    }
                    // softmax Jacobian, then the 1/√d scale
                    let qrow = &qd[qi * dq + h * hq..qi * dq + (h + 1) * hq];
                    for ((ds, &wj), &ki) in dscore.iter().zip(w).zip(&grp.keys) {
                        let s = wj * (ds - inner) * scale;
                        if s == 0.0 {
                            continue;
                        }
                        let krow = &kd[ki * dq + h * hq..ki * dq + (h + 1) * hq];
                        let gqrow = &mut gq[qi * dq + h * hq..qi * dq + (h + 1) * hq];
                        for (x, y) in gqrow.iter_mut().zip(krow) {
                            *x += s * y;
                        }
                        let gkrow = &mut gk[ki * dq + h * hq..ki * dq + (h + 1) * hq];
                        for (x, y) in gkrow.iter_mut().zip(qrow) {
                            *x += s * y;
                        }
                    }
                }
            }
        }
        self.accum(grads, q, |x| add_into(x, &gq));
        self.accum(grads, k, |x| add_into(x, &gk));
        self.accum(grads, v, |x| add_into(x, &gv));
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (x, y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise summation; keeps reassociation error at O(log n · ε).
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Graph, Var) -> Var, x0: Tensor) {
        let mut g = Graph::new();
        let x = g.input(x0.clone());
        let y = build(&mut g, x);
        let analytic = g.backward(y).unwrap().wrt(x);
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut t = x0.clone();
                t.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.input(t);
                let y = build(&mut g, x);
                g.value(y).item()
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((a - num).abs() <= 1e-6 * (1.0 + a.abs()), "elem {i}: {a} vs {num}");
        }
    }

    fn sample(r: usize, c: usize, seed: f64) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|i| ((i as f64 + seed) * 1.37).sin()).collect())
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(&[1.0, -2.0, 0.5]));
        let sq = g.square(x);
        let y = g.sum(sq);
        let gx = g.backward(y).unwrap().wrt(x);
        assert_eq!(gx.data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(&[3.0]));
        let d = g.detach(x);
        let p = g.mul(x, d).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.wrt(x).data(), &[3.0]);
        assert_eq!(grads.wrt(d).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(NnError::NonScalarRoot(_))));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let w = sample(3, 2, 0.3);
        fd_check(
            move |g, x| {
                let wv = g.constant(w.clone());
                let m = g.matmul(x, wv).unwrap();
                let t = g.tanh(m);
                let e = g.exp(t);
                let sq = g.square(e);
                let l = g.affine(sq, 2.0, 3.0);
                let ln = g.ln(l);
                let mn = g.minimum(ln, e).unwrap();
                let sc = g.sum_cols(mn);
                g.mean(sc)
            },
            sample(4, 3, 1.0),
        );
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        fd_check(
            |g, x| {
                let s = g.segment_sum(x, vec![0..2, 2..5, 5..6]).unwrap();
                let gth = g.gather_rows(x, vec![5, 0, 0]).unwrap();
                let cat = g.concat_rows(&[s, gth]).unwrap();
                let sl = g.slice_cols(cat, 1, 2).unwrap();
                let cc = g.concat_cols(&[sl, cat]).unwrap();
                let r = g.relu(cc);
                let row = g.slice_cols(x, 0, 3).unwrap();
                let row = g.gather_rows(row, vec![1]).unwrap();
                let row5 = g.concat_cols(&[row, row]).unwrap();
                let row5 = g.slice_cols(row5, 0, 5).unwrap();
                let ar = g.add_row(r, row5).unwrap();
                let t = g.tanh(ar);
                let sq = g.square(t);
                g.sum(sq)
            },
            sample(6, 3, 2.0),
        );
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let groups = vec![
            AttnGroup {
                queries: 0..2,
                keys: vec![0, 1, 3],
            },
            AttnGroup {
                queries: 2..3,
                keys: vec![2, 4],
            },
        ];
        let kv = sample(5, 4, 0.7);
        for which in 0..3 {
            let kv = kv.clone();
            let groups = groups.clone();
            fd_check(
                move |g, x| {
                    let other = g.constant(kv.clone());
                    let q3 = g.constant(Tensor::matrix(3, 4, kv.data()[..12].to_vec()));
                    let (q, k, v) = match which {
                        0 => (x, other, other),
                        1 => (q3, x, other),
                        _ => (q3, other, x),
                    };
                    let a = g.attention(q, k, v, groups.clone(), 2).unwrap();
                    let t = g.tanh(a);
                    let sq = g.square(t);
                    g.sum(sq)
                },
                if which == 0 {
                    sample(3, 4, 0.1)
                } else {
                    sample(5, 4, 0.9)
                },
            );
        }
    }

    #[test]
    fn attention_rejects_bad_shapes() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(&[2, 4]));
        let k = g.constant(Tensor::zeros(&[3, 3]));
        let group = vec![AttnGroup {
            queries: 0..2,
            keys: vec![0],
        }];
        assert!(g.attention(q, k, k, group.clone(), 1).is_err());
        let k = g.constant(Tensor::zeros(&[3, 4]));
        assert!(g.attention(q, k, k, group, 3).is_err());
        let empty = vec![AttnGroup {
            queries: 0..2,
            keys: vec![],
        }];
        assert!(g.attention(q, k, k, empty, 1).is_err());
    }
}
