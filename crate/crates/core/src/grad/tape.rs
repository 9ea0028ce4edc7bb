//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Forward values are computed eagerly as primitives are recorded. The
//! backward pass walks the tape in reverse and expresses every
//! vector-Jacobian product with the same primitives, so the gradient itself
//! can be recorded on the tape (`create_graph = true`) and differentiated
//! again. That is how the meta-gradient through one inner update step is
//! obtained.
//!
//! ```
//! use dynpop::grad::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let g = tape.backward(y, &[x]).unwrap();
//! assert_eq!(g[0].item(), 6.0);
//! ```

use std::sync::Arc;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type Indices = Arc<[usize]>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulTN(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    Sum(Var),
    BroadcastScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    GatherRows(Var, Indices),
    ScatterRows(Var, Indices),
    PickCols(Var, Indices),
    ScatterCols(Var, Indices),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    PadCols(Var, usize),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf | Const => [None, None],
            MatMul(a, b) | MatMulNT(a, b) | MatMulTN(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b)
            | AddRow(a, b) | ConcatCols(a, b) => [Some(a), Some(b)],
            Transpose(a)
            | Scale(a, _)
            | AddScalar(a)
            | SumRows(a)
            | BroadcastRows(a)
            | SumCols(a)
            | BroadcastCols(a)
            | Sum(a)
            | BroadcastScalar(a)
            | Tanh(a)
            | Sigmoid(a)
            | Exp(a)
            | Softmax(a)
            | LogSoftmax(a)
            | GatherRows(a, _)
            | ScatterRows(a, _)
            | PickCols(a, _)
            | ScatterCols(a, _)
            | SliceCols(a, _)
            | PadCols(a, _)
            | Reshape(a) => [Some(a), None],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitives. Inputs always precede the nodes that use
/// them, so reverse index order is a valid reverse topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    detached: bool,
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

    /// Drop every node recorded after `mark`. Vars pointing past it become
    /// dangling.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Const,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let _ = name;
        let requires_grad = !self.detached
            && op
                .inputs()
                .iter()
                .flatten()
                .any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Const };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(name, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    // ---- primitives ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let v = tensor::matmul(self.value(a), self.value(b));
        self.push("matmul", v, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[1] {
            return Err(Error::shape("matmul_nt", format!("{sa:?} x {sb:?}^T")));
        }
        let v = tensor::matmul_nt(self.value(a), self.value(b));
        self.push("matmul_nt", v, Op::MatMulNT(a, b))
    }

    /// `a^T * b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] {
            return Err(Error::shape("matmul_tn", format!("{sa:?}^T x {sb:?}")));
        }
        let v = tensor::matmul_tn(self.value(a), self.value(b));
        self.push("matmul_tn", v, Op::MatMulTN(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = tensor::transpose(self.value(a));
        self.push("transpose", v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push("add_scalar", v, Op::AddScalar(a))
    }

    /// Add a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (sm, sr) = (self.shape(m), self.shape(row));
        if sr != [1, sm[1]] {
            return Err(Error::shape("add_row", format!("{sm:?} + {sr:?}")));
        }
        let rv = self.value(row).data().to_vec();
        let mut v = self.value(m).clone();
        for r in v.data_mut().chunks_mut(sm[1]) {
            for (x, b) in r.iter_mut().zip(&rv) {
                *x += b;
            }
        }
        self.push("add_row", v, Op::AddRow(m, row))
    }

    /// Column sums: `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols()];
        for r in t.data().chunks(t.cols()) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        self.push("sum_rows", Tensor::row(out), Op::SumRows(a))
    }

    /// Repeat a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a);
        if s[0] != 1 {
            return Err(Error::shape("broadcast_rows", format!("{s:?}")));
        }
        let v = Tensor::new(n, s[1], self.value(a).data().repeat(n))?;
        self.push("broadcast_rows", v, Op::BroadcastRows(a))
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = if t.cols() == 0 {
            vec![0.0; t.rows()]
        } else {
            t.data().chunks(t.cols()).map(|r| r.iter().sum()).collect()
        };
        self.push("sum_cols", Tensor::column(out), Op::SumCols(a))
    }

    /// Repeat an `r x 1` column `n` times.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a);
        if s[1] != 1 {
            return Err(Error::shape("broadcast_cols", format!("{s:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, n))
            .collect();
        let v = Tensor::new(s[0], n, data)?;
        self.push("broadcast_cols", v, Op::BroadcastCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if s != [1, 1] {
            return Err(Error::shape("broadcast_scalar", format!("{s:?}")));
        }
        let v = Tensor::full(rows, cols, self.value(a).item());
        self.push("broadcast_scalar", v, Op::BroadcastScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(tensor::sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = tensor::softmax_rows(self.value(a));
        self.push("softmax", v, Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = tensor::log_softmax_rows(self.value(a));
        self.push("log_softmax", v, Op::LogSoftmax(a))
    }

    /// Embedding lookup: row `idx[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let [rows, cols] = t.shape();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "gather_rows",
                format!("index {bad} out of range for {rows}x{cols}"),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::new(idx.len(), cols, data)?;
        self.push("gather_rows", v, Op::GatherRows(table, idx.into()))
    }

    /// Adjoint of [`Tape::gather_rows`]: row `i` is added into output row `idx[i]`.
    pub fn scatter_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != idx.len() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::shape(
                "scatter_rows",
                format!("{:?} with {} indices into {rows} rows", t.shape(), idx.len()),
            ));
        }
        let cols = t.cols();
        let mut out = Tensor::zeros(rows, cols);
        for (r, &i) in idx.iter().enumerate() {
            let src = t.row_slice(r);
            for (o, x) in out.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                *o += x;
            }
        }
        self.push("scatter_rows", out, Op::ScatterRows(a, idx.into()))
    }

    /// Select column `idx[r]` of each row `r`: `r x c -> r x 1`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let [rows, cols] = t.shape();
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(Error::shape(
                "pick_cols",
                format!("{rows}x{cols} with {} indices", idx.len()),
            ));
        }
        let out = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        self.push("pick_cols", Tensor::column(out), Op::PickCols(a, idx.into()))
    }

    /// Adjoint of [`Tape::pick_cols`].
    pub fn scatter_cols(&mut self, a: Var, idx: &[usize], cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 || t.rows() != idx.len() || idx.iter().any(|&i| i >= cols) {
            return Err(Error::shape(
                "scatter_cols",
                format!("{:?} with {} indices into {cols} cols", t.shape(), idx.len()),
            ));
        }
        let mut out = Tensor::zeros(idx.len(), cols);
        for (r, &c) in idx.iter().enumerate() {
            out.data_mut()[r * cols + c] = t.data()[r];
        }
        self.push("scatter_cols", out, Op::ScatterCols(a, idx.into()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] {
            return Err(Error::shape("concat_cols", format!("{sa:?} | {sb:?}")));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..sa[0] {
            data.extend_from_slice(ta.row_slice(r));
            data.extend_from_slice(tb.row_slice(r));
        }
        let v = Tensor::new(sa[0], sa[1] + sb[1], data)?;
        self.push("concat_cols", v, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("[{start}, {}) of {:?}", start + len, t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let v = Tensor::new(t.rows(), len, data)?;
        self.push("slice_cols", v, Op::SliceCols(a, start))
    }

    /// Embed `a` at column offset `start` of a zero matrix with `total` columns.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let t = self.value(a);
        if start + t.cols() > total {
            return Err(Error::shape(
                "pad_cols",
                format!("{:?} at {start} into {total}", t.shape()),
            ));
        }
        let mut out = Tensor::zeros(t.rows(), total);
        let c = t.cols();
        for r in 0..t.rows() {
            out.data_mut()[r * total + start..r * total + start + c]
                .copy_from_slice(t.row_slice(r));
        }
        self.push("pad_cols", out, Op::PadCols(a, start))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> [{rows}, {cols}]", t.shape()),
            ));
        }
        let v = t.reshaped(rows, cols)?;
        self.push("reshape", v, Op::Reshape(a))
    }

    // ---- reverse mode ----

    /// Gradients of the scalar `output` with respect to `wrt`.
    ///
    /// With `create_graph` the adjoint computation is itself recorded, so the
    /// returned vars can be used in further differentiable expressions.
    /// Without it the adjoints are recorded as constants.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let s = self.shape(output);
        if s != [1, 1] {
            return Err(Error::NonScalarOutput(s.to_vec()));
        }
        let end = output.0 + 1;
        let start = wrt.iter().map(|v| v.0).min().unwrap_or(end).min(end);

        // Nodes that depend on some `wrt` var; only those carry adjoints.
        let mut relevant = vec![false; end - start];
        for w in wrt {
            if w.0 < end {
                relevant[w.0 - start] = true;
            }
        }
        for i in start..end {
            if relevant[i - start] || !self.nodes[i].requires_grad {
                continue;
            }
            relevant[i - start] = self.nodes[i]
                .op
                .inputs()
                .iter()
                .flatten()
                .any(|v| v.0 >= start && relevant[v.0 - start]);
        }

        let was_detached = self.detached;
        self.detached = !create_graph;
        let result = self.accumulate(output, start, end, &relevant);
        self.detached = was_detached;
        let adj = result?;

        let mut out = Vec::with_capacity(wrt.len());
        for w in wrt {
            let g = match adj.get(w.0.wrapping_sub(start)).copied().flatten() {
                Some(g) => g,
                None => {
                    let [r, c] = self.shape(*w);
                    self.constant(Tensor::zeros(r, c))
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    fn accumulate(
        &mut self,
        output: Var,
        start: usize,
        end: usize,
        relevant: &[bool],
    ) -> Result<Vec<Option<Var>>> {
        let mut adj: Vec<Option<Var>> = vec![None; end - start];
        if !relevant[output.0 - start] {
            return Ok(adj);
        }
        adj[output.0 - start] = Some(self.constant(Tensor::scalar(1.0)));
        for i in (start..end).rev() {
            if !relevant[i - start] {
                continue;
            }
            let Some(g) = adj[i - start] else { continue };
            let op = self.nodes[i].op.clone();
            let needs = op
                .inputs()
                .map(|v| v.is_some_and(|v| v.0 >= start && relevant[v.0 - start]));
            if !needs[0] && !needs[1] {
                continue;
            }
            for (input, contrib) in self.vjp(Var(i), &op, g, needs)? {
                let slot = &mut adj[input.0 - start];
                *slot = Some(match *slot {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }
        Ok(adj)
    }

    /// Gradients as plain tensors. The adjoint nodes are discarded afterwards.
    pub fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let mark = self.nodes.len();
        let grads = self.grad(output, wrt, false)?;
        let values = grads.iter().map(|g| self.value(*g).clone()).collect();
        self.truncate(mark);
        Ok(values)
    }

    fn vjp(&mut self, node: Var, op: &Op, g: Var, needs: [bool; 2]) -> Result<Vec<(Var, Var)>> {
        use Op::*;
        let mut out = Vec::with_capacity(2);
        match op {
            Leaf | Const => {}
            MatMul(a, b) => {
                if needs[0] {
                    out.push((*a, self.matmul_nt(g, *b)?));
                }
                if needs[1] {
                    out.push((*b, self.matmul_tn(*a, g)?));
                }
            }
            MatMulNT(a, b) => {
                if needs[0] {
                    out.push((*a, self.matmul(g, *b)?));
                }
                if needs[1] {
                    out.push((*b, self.matmul_tn(g, *a)?));
                }
            }
            MatMulTN(a, b) => {
                if needs[0] {
                    out.push((*a, self.matmul_nt(*b, g)?));
                }
                if needs[1] {
                    out.push((*b, self.matmul(*a, g)?));
                }
            }
            Transpose(a) => out.push((*a, self.transpose(g)?)),
            Add(a, b) => {
                if needs[0] {
                    out.push((*a, g));
                }
                if needs[1] {
                    out.push((*b, g));
                }
            }
            Sub(a, b) => {
                if needs[0] {
                    out.push((*a, g));
                }
                if needs[1] {
                    out.push((*b, self.neg(g)?));
                }
            }
            Mul(a, b) => {
                if needs[0] {
                    out.push((*a, self.mul(g, *b)?));
                }
                if needs[1] {
                    out.push((*b, self.mul(g, *a)?));
                }
            }
            Scale(a, c) => out.push((*a, self.scale(g, *c)?)),
            AddScalar(a) => out.push((*a, g)),
            AddRow(m, row) => {
                if needs[0] {
                    out.push((*m, g));
                }
                if needs[1] {
                    out.push((*row, self.sum_rows(g)?));
                }
            }
            SumRows(a) => {
                let n = self.shape(*a)[0];
                out.push((*a, self.broadcast_rows(g, n)?));
            }
            BroadcastRows(a) => out.push((*a, self.sum_rows(g)?)),
            SumCols(a) => {
                let n = self.shape(*a)[1];
                out.push((*a, self.broadcast_cols(g, n)?));
            }
            BroadcastCols(a) => out.push((*a, self.sum_cols(g)?)),
            Sum(a) => {
                let [r, c] = self.shape(*a);
                out.push((*a, self.broadcast_scalar(g, r, c)?));
            }
            BroadcastScalar(a) => out.push((*a, self.sum(g)?)),
            Tanh(a) => {
                // g * (1 - y^2)
                let y2 = self.mul(node, node)?;
                let d = self.scale(y2, -1.0)?;
                let d = self.add_scalar(d, 1.0)?;
                out.push((*a, self.mul(g, d)?));
            }
            Sigmoid(a) => {
                // g * y * (1 - y)
                let one_minus = self.scale(node, -1.0)?;
                let one_minus = self.add_scalar(one_minus, 1.0)?;
                let d = self.mul(node, one_minus)?;
                out.push((*a, self.mul(g, d)?));
            }
            Exp(a) => out.push((*a, self.mul(g, node)?)),
            Softmax(a) => {
                // y * (g - rowsum(g * y))
                let cols = self.shape(*a)[1];
                let gy = self.mul(g, node)?;
                let s = self.sum_cols(gy)?;
                let s = self.broadcast_cols(s, cols)?;
                let centered = self.sub(g, s)?;
                out.push((*a, self.mul(node, centered)?));
            }
            LogSoftmax(a) => {
                // g - softmax(x) * rowsum(g)
                let cols = self.shape(*a)[1];
                let p = self.exp(node)?;
                let s = self.sum_cols(g)?;
                let s = self.broadcast_cols(s, cols)?;
                let ps = self.mul(p, s)?;
                out.push((*a, self.sub(g, ps)?));
            }
            GatherRows(a, idx) => {
                let rows = self.shape(*a)[0];
                out.push((*a, self.scatter_rows(g, idx, rows)?));
            }
            ScatterRows(a, idx) => out.push((*a, self.gather_rows(g, idx)?)),
            PickCols(a, idx) => {
                let cols = self.shape(*a)[1];
                out.push((*a, self.scatter_cols(g, idx, cols)?));
            }
            ScatterCols(a, idx) => out.push((*a, self.pick_cols(g, idx)?)),
            ConcatCols(a, b) => {
                let ca = self.shape(*a)[1];
                let cb = self.shape(*b)[1];
                if needs[0] {
                    out.push((*a, self.slice_cols(g, 0, ca)?));
                }
                if needs[1] {
                    out.push((*b, self.slice_cols(g, ca, cb)?));
                }
            }
            SliceCols(a, start) => {
                let total = self.shape(*a)[1];
                out.push((*a, self.pad_cols(g, *start, total)?));
            }
            PadCols(a, start) => {
                let len = self.shape(*a)[1];
                out.push((*a, self.slice_cols(g, *start, len)?));
            }
            Reshape(a) => {
                let [r, c] = self.shape(*a);
                out.push((*a, self.reshape(g, r, c)?));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let a = tape.constant(t(2, 2, &[1.0, -2.0, 3.5, 4.0]));
        let y = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(y), tape.value(a));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 3));
        let y = tape.softmax(x).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.backward(y, &[x]).unwrap()[0].item(), 6.0);
    }

    #[test]
    fn sum_of_matrix_vector_product() {
        // loss = sum(W x) => dW[i][j] = x[j]
        let mut tape = Tape::new();
        let w = tape.leaf(t(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]));
        let x = tape.constant(t(3, 1, &[1.0, 2.0, 3.0]));
        let wx = tape.matmul(w, x).unwrap();
        let loss = tape.sum(wx).unwrap();
        let g = tape.backward(loss, &[w]).unwrap();
        assert_eq!(g[0].data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(1, 2, &[1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(5.0));
        let g = tape.backward(c, &[w]).unwrap();
        assert_eq!(g[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(1, 2, &[1.0, 2.0]));
        assert!(matches!(
            tape.backward(w, &[w]),
            Err(Error::NonScalarOutput(_))
        ));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(3, 2));
        assert!(tape.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[cfg(debug_assertions)]
    #[test]
    fn nan_guard_in_debug_builds() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(800.0));
        assert!(matches!(tape.exp(a), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn backward_is_repeatable() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(2, 2, &[0.3, -0.1, 0.7, 0.2]));
        let h = tape.tanh(w).unwrap();
        let s = tape.log_softmax(h).unwrap();
        let loss = tape.sum(s).unwrap();
        let loss = tape.mul(loss, loss).unwrap();
        let g1 = tape.backward(loss, &[w]).unwrap();
        let g2 = tape.backward(loss, &[w]).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn second_derivative_through_recorded_gradient() {
        // f(x) = x^3, f'' = 6x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let x2 = tape.mul(x, x).unwrap();
        let x3 = tape.mul(x2, x).unwrap();
        let g = tape.grad(x3, &[x], true).unwrap()[0];
        assert_eq!(tape.value(g).item(), 12.0);
        let h = tape.backward(g, &[x]).unwrap();
        assert_eq!(h[0].item(), 12.0);
    }
}
