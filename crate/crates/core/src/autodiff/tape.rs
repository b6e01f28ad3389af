use rand::Rng;

use super::tensor::{dot, gemm, gemm_nt, gemm_tn, norm, Tensor};
use crate::{Error, Real, Result};

/// Floor applied to the gold probability before taking its logarithm.
pub const NLL_FLOOR: Real = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    CosineRows { lib: Var, query: Var },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SumRows { table: Var, sets: Vec<Vec<usize>> },
    RowSelect { mask: Vec<bool>, on: Var, off: Var },
    Dropout { x: Var, keep: Vec<Real> },
    NllMean { probs: Var, gold: Vec<usize> },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::CosineRows { .. } => "cosine_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SumRows { .. } => "sum_rows",
            Op::RowSelect { .. } => "row_select",
            Op::Dropout { .. } => "dropout",
            Op::NllMean { .. } => "nll_mean",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of executed operations.
///
/// Every operation appends one node holding its output value plus whatever it
/// needs for the backward pass. [`Tape::backward`] walks the nodes in exact
/// reverse order. Gradients accumulate across calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape().len() != 2 {
            return Err(Error::shape(format!(
                "matmul needs a matrix on the right, got {:?}",
                tb.shape()
            )));
        }
        let (m, n) = ta.dims2();
        let (n2, p) = tb.dims2();
        if n != n2 || ta.shape().is_empty() {
            return Err(Error::shape(format!(
                "matmul mismatch {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = gemm(ta.data(), tb.data(), m, n, p);
        let shape = if ta.shape().len() == 1 {
            vec![p]
        } else {
            vec![m, p]
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what} mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let cols = ta.cols();
        if tb.shape() != [cols] || ta.shape().is_empty() {
            return Err(Error::shape(format!(
                "add_row mismatch {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Var {
        let value = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(Real::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Softmax along the last axis (row-wise for matrices).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().is_empty() || ta.cols() == 0 {
            return Err(Error::shape(format!(
                "softmax over empty axis {:?}",
                ta.shape()
            )));
        }
        let cols = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Cosine similarity of each query row against every row of `lib`.
    ///
    /// `lib` is `N×k`. A query vector `[k]` yields `[N]`; a query matrix `m×k`
    /// yields `m×N`. Zero-norm rows on either side are rejected.
    pub fn cosine_rows(&mut self, lib: Var, query: Var) -> Result<Var> {
        let (tl, tq) = (self.value(lib), self.value(query));
        if tl.shape().len() != 2 || tq.shape().is_empty() || tl.cols() != tq.cols() {
            return Err(Error::shape(format!(
                "cosine_rows mismatch {:?} vs {:?}",
                tl.shape(),
                tq.shape()
            )));
        }
        let (n, k) = tl.dims2();
        let m = tq.rows();
        let lib_norms = row_norms(tl);
        if let Some(j) = lib_norms.iter().position(|&v| v == 0.0) {
            return Err(Error::Degenerate(format!("library row {j} has zero norm")));
        }
        let q_norms = row_norms(tq);
        if let Some(i) = q_norms.iter().position(|&v| v == 0.0) {
            return Err(Error::Degenerate(format!("query row {i} has zero norm")));
        }
        let mut data = gemm_nt(tq.data(), tl.data(), m, k, n);
        for i in 0..m {
            for j in 0..n {
                let c = data[i * n + j] / (lib_norms[j] * q_norms[i]);
                data[i * n + j] = c.clamp(-1.0, 1.0);
            }
        }
        let shape = if tq.shape().len() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        let rg = self.rg(&[lib, query]);
        Ok(self.push(Tensor::new(shape, data)?, Op::CosineRows { lib, query }, rg))
    }

    /// Horizontal concatenation; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of nothing"));
        }
        let rows = self.value(parts[0]).rows();
        let all_vectors = parts.iter().all(|&p| self.value(p).shape().len() == 1);
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows || t.shape().is_empty() {
                return Err(Error::shape(format!(
                    "concat_cols row mismatch {:?}",
                    t.shape()
                )));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if all_vectors {
            vec![total]
        } else {
            vec![rows, total]
        };
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Vertical concatenation; all parts need the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of nothing"));
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols || t.shape().is_empty() {
                return Err(Error::shape(format!(
                    "concat_rows column mismatch {:?}",
                    t.shape()
                )));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        if start + len > cols || t.shape().is_empty() {
            return Err(Error::shape(format!(
                "slice {start}..{} out of {:?}",
                start + len,
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let shape = if t.shape().len() == 1 {
            vec![len]
        } else {
            vec![rows, len]
        };
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceCols { x, start }, rg))
    }

    /// Row `i` of the output is the sum of `table` rows listed in `sets[i]`.
    /// An empty set yields a zero row.
    pub fn sum_rows(&mut self, table: Var, sets: Vec<Vec<usize>>) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::shape(format!(
                "sum_rows needs a matrix, got {:?}",
                t.shape()
            )));
        }
        let (rows, cols) = t.dims2();
        let mut data = vec![0.0; sets.len() * cols];
        for (i, set) in sets.iter().enumerate() {
            let out = &mut data[i * cols..(i + 1) * cols];
            for &j in set {
                if j >= rows {
                    return Err(Error::Index(format!("row {j} of {rows}")));
                }
                for (o, v) in out.iter_mut().zip(t.row(j)) {
                    *o += v;
                }
            }
        }
        let rg = self.rg(&[table]);
        let value = Tensor::new(vec![sets.len(), cols], data)?;
        Ok(self.push(value, Op::SumRows { table, sets }, rg))
    }

    /// Row gather: output row `i` is `x[indices[i]]`.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.sum_rows(x, indices.iter().map(|&i| vec![i]).collect())
    }

    /// Row-wise choice between two equally shaped matrices: rows where `mask`
    /// is true come from `on`, the rest from `off`. No arithmetic is involved,
    /// so masked rows are reproduced bit for bit.
    pub fn row_select(&mut self, mask: &[bool], on: Var, off: Var) -> Result<Var> {
        self.same_shape(on, off, "row_select")?;
        let t_on = self.value(on);
        if t_on.rows() != mask.len() {
            return Err(Error::shape(format!(
                "row_select mask of {} rows for {:?}",
                mask.len(),
                t_on.shape()
            )));
        }
        let t_off = self.value(off);
        let mut data = Vec::with_capacity(t_on.len());
        for (r, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { t_on.row(r) } else { t_off.row(r) });
        }
        let value = Tensor::new(t_on.shape().to_vec(), data)?;
        let rg = self.rg(&[on, off]);
        Ok(self.push(
            value,
            Op::RowSelect {
                mask: mask.to_vec(),
                on,
                off,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity (returns `x` itself) outside training or at
    /// rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: Real,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let keep: Vec<Real> = (0..t.len())
            .map(|_| if rng.gen::<Real>() < rate { 0.0 } else { scale })
            .collect();
        let data = t.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Dropout { x, keep }, rg))
    }

    /// Mean of `-ln(max(p[gold], floor))` over rows of a probability matrix
    /// (or the single row of a probability vector).
    pub fn nll_mean(&mut self, probs: Var, gold: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        if t.shape().is_empty() {
            return Err(Error::shape("nll over a scalar"));
        }
        let (rows, cols) = t.dims2();
        if rows != gold.len() {
            return Err(Error::shape(format!(
                "{} gold labels for {rows} rows",
                gold.len()
            )));
        }
        if let Some(&g) = gold.iter().find(|&&g| g >= cols) {
            return Err(Error::Index(format!("gold class {g} of {cols}")));
        }
        let total: Real = gold
            .iter()
            .enumerate()
            .map(|(r, &g)| -t.row(r)[g].max(NLL_FLOOR).ln())
            .sum();
        let loss = if rows == 0 { 0.0 } else { total / rows as Real };
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::NllMean {
                probs,
                gold: gold.to_vec(),
            },
            rg,
        ))
    }

    /// Negative log-likelihood of a single probability vector.
    pub fn nll_loss(&mut self, probs: Var, gold: usize) -> Result<Var> {
        self.nll_mean(probs, &[gold])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Adds the gradient of `loss` into every node that requires one (nodes the
    /// loss does not depend on receive zeros). Returns the node indices in the
    /// order they were visited, which is strictly decreasing.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<usize>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut visited = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            visited.push(i);
            self.propagate(i, &g, &mut local);
            local[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                continue;
            }
            let g = local
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(visited)
    }

    fn propagate(&self, i: usize, g: &Tensor, local: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut send = |v: Var, grad: Vec<Real>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let shape = self.nodes[v.0].value.shape();
            let grad = Tensor::new(shape.to_vec(), grad).expect("gradient shape");
            match &mut local[v.0] {
                Some(acc) => acc.add_assign(&grad),
                slot => *slot = Some(grad),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, n) = ta.dims2();
                let p = tb.cols();
                if self.requires_grad(*a) {
                    send(*a, gemm_nt(gd, tb.data(), m, p, n));
                }
                if self.requires_grad(*b) {
                    send(*b, gemm_tn(ta.data(), gd, m, n, p));
                }
            }
            Op::Add(a, b) => {
                send(*a, gd.to_vec());
                send(*b, gd.to_vec());
            }
            Op::AddRow(a, bias) => {
                send(*a, gd.to_vec());
                let cols = out.cols();
                let mut gb = vec![0.0; cols];
                for row in gd.chunks(cols.max(1)) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                send(*bias, gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                send(*a, gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect());
                send(*b, gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, c) => send(*a, gd.iter().map(|g| g * c).collect()),
            Op::Tanh(a) => send(
                *a,
                gd.iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect(),
            ),
            Op::Sigmoid(a) => send(
                *a,
                gd.iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect(),
            ),
            Op::Softmax(a) => {
                let cols = out.cols();
                let mut dx = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(cols).zip(out.data().chunks(cols)) {
                    let inner = dot(grow, yrow);
                    dx.extend(grow.iter().zip(yrow).map(|(g, y)| y * (g - inner)));
                }
                send(*a, dx);
            }
            Op::CosineRows { lib, query } => {
                let (tl, tq) = (self.value(*lib), self.value(*query));
                let (n, k) = tl.dims2();
                let m = tq.rows();
                let ln = row_norms(tl);
                let qn = row_norms(tq);
                let mut dl = vec![0.0; n * k];
                let mut dq = vec![0.0; m * k];
                for r in 0..m {
                    let q = tq.row(r);
                    for j in 0..n {
                        let gij = gd[r * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let e = tl.row(j);
                        let c = out.data()[r * n + j];
                        let denom = ln[j] * qn[r];
                        for t in 0..k {
                            dq[r * k + t] += gij * (e[t] / denom - c * q[t] / (qn[r] * qn[r]));
                            dl[j * k + t] += gij * (q[t] / denom - c * e[t] / (ln[j] * ln[j]));
                        }
                    }
                }
                send(*lib, dl);
                send(*query, dq);
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    send(p, gp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    send(p, gd[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (rows, cols) = tx.dims2();
                let w = out.cols();
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    gx[r * cols + start..r * cols + start + w]
                        .copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                send(*x, gx);
            }
            Op::SumRows { table, sets } => {
                let tt = self.value(*table);
                let cols = tt.cols();
                let mut gt = vec![0.0; tt.len()];
                for (i, set) in sets.iter().enumerate() {
                    let grow = &gd[i * cols..(i + 1) * cols];
                    for &j in set {
                        for (acc, v) in gt[j * cols..(j + 1) * cols].iter_mut().zip(grow) {
                            *acc += v;
                        }
                    }
                }
                send(*table, gt);
            }
            Op::RowSelect { mask, on, off } => {
                let cols = out.cols();
                let mut g_on = vec![0.0; gd.len()];
                let mut g_off = vec![0.0; gd.len()];
                for (r, &m) in mask.iter().enumerate() {
                    let dst = if m { &mut g_on } else { &mut g_off };
                    dst[r * cols..(r + 1) * cols].copy_from_slice(&gd[r * cols..(r + 1) * cols]);
                }
                send(*on, g_on);
                send(*off, g_off);
            }
            Op::Dropout { x, keep } => {
                send(*x, gd.iter().zip(keep).map(|(g, k)| g * k).collect());
            }
            Op::NllMean { probs, gold } => {
                let tp = self.value(*probs);
                let cols = tp.cols();
                let rows = gold.len();
                let mut gp = vec![0.0; tp.len()];
                for (r, &c) in gold.iter().enumerate() {
                    let p = tp.data()[r * cols + c];
                    if p > NLL_FLOOR {
                        gp[r * cols + c] = -gd[0] / (rows as Real * p);
                    }
                }
                send(*probs, gp);
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                send(*x, vec![gd[0]; len]);
            }
        }
    }
}

pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over one slice.
pub fn softmax_in_place(row: &mut [Real]) {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn row_norms(t: &Tensor) -> Vec<Real> {
    (0..t.rows()).map(|r| norm(t.row(r))).collect()
}
