//! Reverse-mode tape over two-dimensional values.
//!
//! Nodes live in an arena in creation order, which is a topological order of
//! the graph: a backward pass is a single reverse sweep that visits every node
//! at most once. Parameter leaves read their values straight from the
//! [`ParamStore`] the graph borrows; their gradients are collected separately
//! and handed back with [`Graph::into_param_grads`].

use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::kernels::gemm_rm;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add { a: usize, b: usize, broadcast: bool },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    LogSigmoid(usize),
    Sum(usize),
    Mean(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Lookup { table: usize, ids: Vec<usize> },
    Softmax(usize),
    Transpose(usize),
    ShiftRows { a: usize, offset: isize },
    BroadcastRows(usize),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    // Empty for parameter leaves; their values live in the store.
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Gradients collected for parameter leaves, keyed by parameter id.
#[derive(Debug, Default, Clone)]
pub struct ParamGrads(pub(crate) BTreeMap<ParamId, Vec<f64>>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_nodes: BTreeMap<ParamId, usize>,
    param_grads: BTreeMap<ParamId, Vec<f64>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph without parameters; leaves are created explicitly.
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
            param_grads: BTreeMap::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, parents: &[usize]) -> Var {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        debug_assert!(matches!(op, Op::Param(_)) || data.len() == rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            requires_grad: false,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf holding `t`; with `requires_grad` its gradient is kept after
    /// [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let (rows, cols) = t.matrix_dims();
        let v = self.push(rows, cols, t.into_data(), Op::Leaf, &[]);
        let n = &mut self.nodes[v.0];
        n.requires_grad = requires_grad;
        n.needs_grad = requires_grad;
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        self.push(rows, cols, data, Op::Leaf, &[])
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&n) = self.param_nodes.get(&id) {
            return Var(n);
        }
        let store = self.store.expect("graph created without a parameter store");
        let (rows, cols) = store.value(id).matrix_dims();
        let v = self.push(rows, cols, Vec::new(), Op::Param(id), &[]);
        let n = &mut self.nodes[v.0];
        n.requires_grad = true;
        n.needs_grad = true;
        self.param_nodes.insert(id, v.0);
        v
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.val(v.0)
    }

    fn val(&self, i: usize) -> &[f64] {
        match self.nodes[i].op {
            Op::Param(id) => self.store.expect("store").value(id).data(),
            _ => &self.nodes[i].data,
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("node shape")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Gradient accumulated on a `requires_grad` leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        match self.nodes[v.0].op {
            Op::Param(id) => self.param_grads.get(&id).map(Vec::as_slice),
            _ => self.nodes[v.0].grad.as_deref(),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.param_grads.clear();
    }

    pub fn into_param_grads(self) -> ParamGrads {
        ParamGrads(self.param_grads)
    }

    // ---- operations -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape("matmul", &[m, k], &[kb, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm_rm(self.value(a), ar, ac, ta, self.value(b), br, bc, tb, &mut out, 0.0);
        Ok(self.push(m, n, out, Op::MatMul { a: a.0, b: b.0, ta, tb }, &[a.0, b.0]))
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let broadcast = if (ar, ac) == (br, bc) {
            false
        } else if br == 1 && bc == ac {
            true
        } else {
            return Err(Error::shape("add", &[ar, ac], &[br, bc]));
        };
        let av = self.value(a);
        let bv = self.value(b);
        let out: Vec<f64> = if broadcast {
            av.iter().enumerate().map(|(i, &x)| x + bv[i % ac]).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| x + y).collect()
        };
        Ok(self.push(ar, ac, out, Op::Add { a: a.0, b: b.0, broadcast }, &[a.0, b.0]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::shape(op, &[da.0, da.1], &[db.0, db.1]));
        }
        Ok(da)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        Ok(self.push(r, c, out, Op::Sub { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(r, c, out, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (r, k) = self.dims(a);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push(r, k, out, Op::Scale { a: a.0, c }, &[a.0])
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op, &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    /// `ln σ(x)`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(1, 1, vec![s], Op::Mean(a.0), &[a.0])
    }

    /// Concatenation along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let (r0, c0) = self.dims(parts[0]);
        let (rows, cols, data) = match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for &p in parts {
                    let (r, c) = self.dims(p);
                    if c != c0 {
                        return Err(Error::shape("concat(axis=0)", &[r0, c0], &[r, c]));
                    }
                    rows += r;
                    data.extend_from_slice(self.value(p));
                }
                (rows, c0, data)
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let (r, c) = self.dims(p);
                    if r != r0 {
                        return Err(Error::shape("concat(axis=1)", &[r0, c0], &[r, c]));
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        let c = self.dims(p).1;
                        data.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
                    }
                }
                (r0, cols, data)
            }
            _ => return Err(Error::Contract(format!("concat axis {axis} on a 2-D value"))),
        };
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(rows, cols, data, Op::Concat { parts: idx.clone(), axis }, &idx))
    }

    /// Rows of `table` selected by `ids`; the gradient scatters back into the
    /// selected rows only.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (tr, tc) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::Contract("embedding lookup with no ids".into()));
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * tc);
        for &id in ids {
            if id >= tr {
                return Err(Error::Index { id, len: tr });
            }
            data.extend_from_slice(&tv[id * tc..(id + 1) * tc]);
        }
        Ok(self.push(
            ids.len(),
            tc,
            data,
            Op::Lookup {
                table: table.0,
                ids: ids.to_vec(),
            },
            &[table.0],
        ))
    }

    /// Row-wise softmax over the last axis. `mask`, when given, has either one
    /// entry per column (shared by every row) or one per element; masked
    /// positions come out exactly zero.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(m) = mask {
            if m.len() != c && m.len() != r * c {
                return Err(Error::shape("softmax mask", &[r, c], &[m.len()]));
            }
        }
        let mut out = self.value(a).to_vec();
        for i in 0..r {
            let row_mask = mask.map(|m| if m.len() == c { m } else { &m[i * c..(i + 1) * c] });
            crate::kernels::masked_softmax_in_place(&mut out[i * c..(i + 1) * c], row_mask)
                .ok_or(Error::DegenerateMask("softmax row"))?;
        }
        Ok(self.push(r, c, out, Op::Softmax(a.0), &[a.0]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push(c, r, out, Op::Transpose(a.0), &[a.0])
    }

    /// Row `i` of the result is row `i + offset` of `a`, or zeros where that
    /// falls outside `a`.
    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Var {
        let (r, c) = self.dims(a);
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let src = i as isize + offset;
            if (0..r as isize).contains(&src) {
                let s = src as usize;
                out[i * c..(i + 1) * c].copy_from_slice(&v[s * c..(s + 1) * c]);
            }
        }
        self.push(r, c, out, Op::ShiftRows { a: a.0, offset }, &[a.0])
    }

    /// Repeat a single row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r != 1 {
            return Err(Error::shape("broadcast_rows", &[r, c], &[1, c]));
        }
        let out = self.value(a).repeat(rows);
        Ok(self.push(rows, c, out, Op::BroadcastRows(a.0), &[a.0]))
    }

    // ---- backward ---------------------------------------------------------

    /// Propagate `d loss / d node` to every leaf that requires a gradient.
    /// Gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let (r, c) = self.dims(loss);
        if r * c != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match self.nodes[i].op.clone() {
                Op::Leaf => {
                    if self.nodes[i].requires_grad {
                        accumulate(&mut self.nodes[i].grad, &g);
                    }
                }
                Op::Param(id) => {
                    let slot = self.param_grads.entry(id).or_insert_with(|| vec![0.0; g.len()]);
                    add_into(slot, &g);
                }
                op => self.propagate(i, &op, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], p: usize) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[p].needs_grad {
            return None;
        }
        let n = self.nodes[p].rows * self.nodes[p].cols;
        Some(grads[p].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[i].data;
        match *op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, ta, tb } => {
                let (m, n) = (self.nodes[i].rows, self.nodes[i].cols);
                let (ar, ac) = (self.nodes[a].rows, self.nodes[a].cols);
                let (br, bc) = (self.nodes[b].rows, self.nodes[b].cols);
                let av = self.val(a);
                let bv = self.val(b);
                if let Some(da) = self.grad_slot(grads, a) {
                    if ta {
                        gemm_rm(bv, br, bc, tb, g, m, n, true, da, 1.0);
                    } else {
                        gemm_rm(g, m, n, false, bv, br, bc, !tb, da, 1.0);
                    }
                }
                if let Some(db) = self.grad_slot(grads, b) {
                    if tb {
                        gemm_rm(g, m, n, true, av, ar, ac, ta, db, 1.0);
                    } else {
                        gemm_rm(av, ar, ac, !ta, g, m, n, false, db, 1.0);
                    }
                }
            }
            Op::Add { a, b, broadcast } => {
                if let Some(da) = self.grad_slot(grads, a) {
                    add_into(da, g);
                }
                if let Some(db) = self.grad_slot(grads, b) {
                    if broadcast {
                        let c = db.len();
                        for (k, &x) in g.iter().enumerate() {
                            db[k % c] += x;
                        }
                    } else {
                        add_into(db, g);
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(da) = self.grad_slot(grads, a) {
                    add_into(da, g);
                }
                if let Some(db) = self.grad_slot(grads, b) {
                    for (d, &x) in db.iter_mut().zip(g) {
                        *d -= x;
                    }
                }
            }
            Op::Mul { a, b } => {
                let bv = self.val(b).to_vec();
                if let Some(da) = self.grad_slot(grads, a) {
                    for ((d, &x), &y) in da.iter_mut().zip(g).zip(&bv) {
                        *d += x * y;
                    }
                }
                let av = self.val(a).to_vec();
                if let Some(db) = self.grad_slot(grads, b) {
                    for ((d, &x), &y) in db.iter_mut().zip(g).zip(&av) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(da) = self.grad_slot(grads, a) {
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d += c * x;
                    }
                }
            }
            Op::Tanh(a) => self.unary_back(grads, a, g, |k, _| 1.0 - out[k] * out[k]),
            Op::Sigmoid(a) => self.unary_back(grads, a, g, |k, _| out[k] * (1.0 - out[k])),
            Op::Relu(a) => self.unary_back(grads, a, g, |_, x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Log(a) => self.unary_back(grads, a, g, |_, x| 1.0 / x),
            Op::LogSigmoid(a) => self.unary_back(grads, a, g, |_, x| sigmoid(-x)),
            Op::Sum(a) => {
                if let Some(da) = self.grad_slot(grads, a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(da) = self.grad_slot(grads, a) {
                    let s = g[0] / da.len() as f64;
                    da.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Concat { ref parts, axis } => {
                let cols = self.nodes[i].cols;
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = (self.nodes[p].rows, self.nodes[p].cols);
                    if let Some(dp) = self.grad_slot(grads, p) {
                        if axis == 0 {
                            add_into(dp, &g[offset * cols..(offset + pr) * cols]);
                        } else {
                            for r in 0..pr {
                                let src = &g[r * cols + offset..r * cols + offset + pc];
                                add_into(&mut dp[r * pc..(r + 1) * pc], src);
                            }
                        }
                    }
                    offset += if axis == 0 { pr } else { pc };
                }
            }
            Op::Lookup { table, ref ids } => {
                let c = self.nodes[i].cols;
                if let Some(dt) = self.grad_slot(grads, table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Softmax(a) => {
                let c = self.nodes[i].cols;
                if let Some(da) = self.grad_slot(grads, a) {
                    for r in 0..self.nodes[i].rows {
                        let y = &out[r * c..(r + 1) * c];
                        let gy = &g[r * c..(r + 1) * c];
                        let inner: f64 = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            da[r * c + j] += y[j] * (gy[j] - inner);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
                if let Some(da) = self.grad_slot(grads, a) {
                    for x in 0..r {
                        for y in 0..c {
                            da[x * c + y] += g[y * r + x];
                        }
                    }
                }
            }
            Op::ShiftRows { a, offset } => {
                let (r, c) = (self.nodes[i].rows, self.nodes[i].cols);
                if let Some(da) = self.grad_slot(grads, a) {
                    for row in 0..r {
                        let src = row as isize + offset;
                        if (0..r as isize).contains(&src) {
                            let s = src as usize;
                            add_into(&mut da[s * c..(s + 1) * c], &g[row * c..(row + 1) * c]);
                        }
                    }
                }
            }
            Op::BroadcastRows(a) => {
                let c = self.nodes[i].cols;
                if let Some(da) = self.grad_slot(grads, a) {
                    for row in g.chunks(c) {
                        add_into(da, row);
                    }
                }
            }
        }
    }

    fn unary_back(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: usize,
        g: &[f64],
        deriv: impl Fn(usize, f64) -> f64,
    ) {
        let x = self.val(a).to_vec();
        if let Some(da) = self.grad_slot(grads, a) {
            for (k, (d, &gk)) in da.iter_mut().zip(g).enumerate() {
                *d += gk * deriv(k, x[k]);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(v) => add_into(v, g),
        None => *slot = Some(g.to_vec()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, r: usize, c: usize, data: &[f64]) -> Var {
        g.leaf(Tensor::matrix(r, c, data.to_vec()).unwrap(), true)
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let i = leaf(&mut g, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = leaf(&mut g, 2, 1, &[3.0, 4.0]);
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y), &[3.0, 4.0]);

        let a = leaf(&mut g, 1, 2, &[1.0, 2.0]);
        let z = g.matmul(a, x).unwrap();
        assert_eq!(g.value(z), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = leaf(&mut g, 2, 3, &[0.0; 6]);
        let b = leaf(&mut g, 2, 3, &[0.0; 6]);
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let z = leaf(&mut g, 1, 3, &[0.0, 0.0, 0.0]);
        let s = g.softmax(z, None).unwrap();
        for &p in g.value(s) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let one = leaf(&mut g, 1, 1, &[42.0]);
        let s1 = g.softmax(one, None).unwrap();
        assert_eq!(g.value(s1), &[1.0]);

        let x = leaf(&mut g, 1, 3, &[1.0, 2.0, 3.0]);
        let sm = g.softmax(x, Some(&[true, true, false])).unwrap();
        let e = std::f64::consts::E;
        let v = g.value(sm);
        assert!((v[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((v[1] - e / (1.0 + e)).abs() < 1e-15);
        assert_eq!(v[2], 0.0);

        let bad = g.softmax(x, Some(&[false, false, false]));
        assert!(matches!(bad, Err(Error::DegenerateMask(_))));
    }

    #[test]
    fn masked_softmax_passes_no_gradient_to_masked_inputs() {
        let mut g = Graph::new();
        let x = leaf(&mut g, 2, 3, &[0.3, -1.0, 2.0, 0.5, 0.1, -0.2]);
        let w = g.constant_matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let s = g.softmax(x, Some(&[true, false, true])).unwrap();
        let p = g.mul(s, w).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap();
        let gx = g.grad(x).unwrap();
        assert_eq!(gx[1], 0.0);
        assert_eq!(gx[4], 0.0);
        assert!(gx[0] != 0.0);
    }

    #[test]
    fn sigmoid_and_concat_shapes() {
        let mut g = Graph::new();
        let z = leaf(&mut g, 1, 1, &[0.0]);
        let s = g.sigmoid(z);
        assert_eq!(g.value(s), &[0.5]);
        let a = leaf(&mut g, 2, 3, &[0.0; 6]);
        let b = leaf(&mut g, 2, 5, &[0.0; 10]);
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.dims(c), (2, 8));
    }

    #[test]
    fn lookup_rejects_out_of_range_id() {
        let mut g = Graph::new();
        let t = leaf(&mut g, 4, 2, &[0.0; 8]);
        match g.embedding_lookup(t, &[1, 7]) {
            Err(Error::Index { id: 7, len: 4 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_requires_scalar_and_accumulates() {
        let mut g = Graph::new();
        let w = leaf(&mut g, 1, 2, &[1.0, 2.0]);
        let p = leaf(&mut g, 1, 2, &[5.0, 5.0]);
        let x = g.constant_matrix(2, 1, vec![3.0, -1.0]);
        let y = g.matmul(w, x).unwrap();
        assert!(g.backward(w).is_err());
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[3.0, -1.0]);
        // p is not an ancestor of the loss
        assert!(g.grad(p).is_none_or(|v| v.iter().all(|&x| x == 0.0)));
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[6.0, -2.0]);
        g.zero_grad();
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0) <= 0.0);
    }
}
