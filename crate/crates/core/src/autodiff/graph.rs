use thiserror::Error;

use super::tensor::{gemm, MatRef, Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Abs(Var),
    Exp(Var),
    Scale(Var, T),
    AddScalar(Var),
    MeanAll(Var),
    SumAll(Var),
    ConcatRows(Var, Var),
    SliceRows { x: Var, start: usize },
    // `src[k]` is the flat input index each output element was taken from.
    MaxPoolPairs { x: Var, src: Vec<u32> },
    GlobalMaxPool { x: Var, src: Vec<u32> },
    RepeatCols(Var),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    needs_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so every
/// node's inputs precede it.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::Dimension { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn slot<T: Real>(adj: &mut [Option<Vec<T>>], len: usize, idx: usize) -> &mut Vec<T> {
    adj[idx].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, requires_grad: false, needs_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            needs_grad: requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, `None` until a backward pass reaches it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// `out[o, n] = sum_i w[o, i] * x[i, n] + b[o]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[0] {
            return Err(dim_err("affine_pointwise", ws, xs));
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(dim_err("affine_pointwise", ws, bs));
        }
        let (c_out, c_in, n) = (ws[0], ws[1], xs[1]);
        let mut out = vec![T::zero(); c_out * n];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for (o, row) in out.chunks_mut(n.max(1)).enumerate().take(c_out) {
                row.iter_mut().for_each(|v| *v = bv[o]);
            }
            gemm(MatRef::new(wv, c_out, c_in), MatRef::new(xv, c_in, n), &mut out, true);
        }
        Ok(self.push(Tensor::new(vec![c_out, n], out), Op::Affine { x, w, b }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    fn zip(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err(op_name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::new(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(AutodiffError::Contract { op: "mean_all", msg: "empty tensor".into() });
        }
        let n = T::from_usize(v.len()).unwrap();
        let s: T = v.data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s / n), Op::MeanAll(x), &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    /// Stacks `[ra, n]` on top of `[rb, n]`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(dim_err("concat_rows", sa, sb));
        }
        let shape = vec![sa[0] + sb[0], sa[1]];
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        Ok(self.push(Tensor::new(shape, data), Op::ConcatRows(a, b), &[a, b]))
    }

    /// Rows `start..end` of a 2-d tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 2 || start > end || end > s[0] {
            return Err(AutodiffError::Contract {
                op: "slice_rows",
                msg: format!("rows {start}..{end} out of range for shape {s:?}"),
            });
        }
        let cols = s[1];
        let data = v.data()[start * cols..end * cols].to_vec();
        Ok(self.push(Tensor::new(vec![end - start, cols], data), Op::SliceRows { x, start }, &[x]))
    }

    /// Kernel-2, stride-1 max over neighbouring columns; the last column is
    /// passed through so the length is preserved. Ties resolve to the lower
    /// index.
    pub fn maxpool_pairs(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 2 || s[1] == 0 {
            return Err(AutodiffError::Contract {
                op: "maxpool_pairs",
                msg: format!("expected [C, N>=1], got {s:?}"),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let d = v.data();
        let mut out = Vec::with_capacity(d.len());
        let mut src = Vec::with_capacity(d.len());
        for r in 0..rows {
            let base = r * cols;
            for c in 0..cols {
                let i = base + c;
                let pick = if c + 1 < cols && d[i + 1] > d[i] { i + 1 } else { i };
                out.push(d[pick]);
                src.push(pick as u32);
            }
        }
        let t = Tensor::new(vec![rows, cols], out);
        Ok(self.push(t, Op::MaxPoolPairs { x, src }, &[x]))
    }

    /// Max over all columns: `[C, N] -> [C]`, ties to the lower index.
    pub fn global_maxpool(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 2 || s[1] == 0 {
            return Err(AutodiffError::Contract {
                op: "global_maxpool",
                msg: format!("expected [C, N>=1], got {s:?}"),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let d = v.data();
        let mut out = Vec::with_capacity(rows);
        let mut src = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &d[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (c, &val) in row.iter().enumerate().skip(1) {
                if val > row[best] {
                    best = c;
                }
            }
            out.push(row[best]);
            src.push((r * cols + best) as u32);
        }
        Ok(self.push(Tensor::new(vec![rows], out), Op::GlobalMaxPool { x, src }, &[x]))
    }

    /// Replicates a `[C]` vector into `n` columns: `[C] -> [C, n]`.
    pub fn repeat_cols(&mut self, x: Var, n: usize) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 1 {
            return Err(dim_err("repeat_cols", v.shape(), &[n]));
        }
        let c = v.shape()[0];
        let mut data = Vec::with_capacity(c * n);
        for &val in v.data() {
            data.extend(std::iter::repeat_n(val, n));
        }
        Ok(self.push(Tensor::new(vec![c, n], data), Op::RepeatCols(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(dim_err("reshape", v.shape(), shape));
        }
        let t = v.clone().reshaped(shape.to_vec());
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Reverse pass from a scalar loss; gradients add into leaf `grad` fields.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_scaled(loss, T::one())
    }

    /// As [`Graph::backward`] with the seed adjoint set to `seed` instead of 1.
    pub fn backward_scaled(&mut self, loss: Var, seed: T) -> Result<()> {
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(ls.to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![seed]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                if node.requires_grad {
                    match &mut node.grad {
                        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &d)| *a += d),
                        None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)),
                    }
                }
                continue;
            }
            let nodes = &self.nodes;
            let wants = |v: &Var| nodes[v.0].needs_grad;
            let len = |v: &Var| nodes[v.0].value.len();
            let val = |v: &Var| nodes[v.0].value.data();
            match &nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::Affine { x, w, b } => {
                    let ws = nodes[w.0].value.shape();
                    let (c_out, c_in) = (ws[0], ws[1]);
                    let n = nodes[x.0].value.shape()[1];
                    let gm = MatRef::new(&g[..], c_out, n);
                    if wants(w) {
                        let dw = slot(&mut adj, len(w), w.0);
                        gemm(gm, MatRef::new(val(x), c_in, n).t(), dw, true);
                    }
                    if wants(b) {
                        let db = slot(&mut adj, len(b), b.0);
                        for (o, acc) in db.iter_mut().enumerate() {
                            *acc += g[o * n..(o + 1) * n].iter().copied().sum::<T>();
                        }
                    }
                    if wants(x) {
                        let dx = slot(&mut adj, len(x), x.0);
                        gemm(MatRef::new(val(w), c_out, c_in).t(), gm, dx, true);
                    }
                }
                Op::Relu(x) => {
                    let xv = val(x);
                    let dx = slot(&mut adj, len(x), x.0);
                    for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(xv) {
                        if xi > T::zero() {
                            *d += gi;
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(nodes[i].op, Op::Sub(..)) { -T::one() } else { T::one() };
                    if wants(a) {
                        let da = slot(&mut adj, len(a), a.0);
                        da.iter_mut().zip(&g).for_each(|(d, &gi)| *d += gi);
                    }
                    if wants(b) {
                        let db = slot(&mut adj, len(b), b.0);
                        db.iter_mut().zip(&g).for_each(|(d, &gi)| *d += sign * gi);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        let bv = val(b);
                        let da = slot(&mut adj, len(a), a.0);
                        for ((d, &gi), &bi) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * bi;
                        }
                    }
                    if wants(b) {
                        let av = val(a);
                        let db = slot(&mut adj, len(b), b.0);
                        for ((d, &gi), &ai) in db.iter_mut().zip(&g).zip(av) {
                            *d += gi * ai;
                        }
                    }
                }
                Op::Square(x) => {
                    let xv = val(x);
                    let two = T::lit(2.0);
                    let dx = slot(&mut adj, len(x), x.0);
                    for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(xv) {
                        *d += two * xi * gi;
                    }
                }
                Op::Abs(x) => {
                    let xv = val(x);
                    let dx = slot(&mut adj, len(x), x.0);
                    for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(xv) {
                        if xi > T::zero() {
                            *d += gi;
                        } else if xi < T::zero() {
                            *d -= gi;
                        }
                    }
                }
                Op::Exp(x) => {
                    let out = nodes[i].value.data();
                    let dx = slot(&mut adj, len(x), x.0);
                    for ((d, &gi), &oi) in dx.iter_mut().zip(&g).zip(out) {
                        *d += gi * oi;
                    }
                }
                Op::Scale(x, c) => {
                    let dx = slot(&mut adj, len(x), x.0);
                    dx.iter_mut().zip(&g).for_each(|(d, &gi)| *d += *c * gi);
                }
                Op::AddScalar(x) | Op::Reshape(x) => {
                    let dx = slot(&mut adj, len(x), x.0);
                    dx.iter_mut().zip(&g).for_each(|(d, &gi)| *d += gi);
                }
                Op::MeanAll(x) => {
                    let n = len(x);
                    let share = g[0] / T::from_usize(n).unwrap();
                    slot(&mut adj, n, x.0).iter_mut().for_each(|d| *d += share);
                }
                Op::SumAll(x) => {
                    slot(&mut adj, len(x), x.0).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::ConcatRows(a, b) => {
                    let na = len(a);
                    if wants(a) {
                        let da = slot(&mut adj, na, a.0);
                        da.iter_mut().zip(&g[..na]).for_each(|(d, &gi)| *d += gi);
                    }
                    if wants(b) {
                        let db = slot(&mut adj, len(b), b.0);
                        db.iter_mut().zip(&g[na..]).for_each(|(d, &gi)| *d += gi);
                    }
                }
                Op::SliceRows { x, start } => {
                    let cols = nodes[x.0].value.shape()[1];
                    let offset = start * cols;
                    let dx = slot(&mut adj, len(x), x.0);
                    dx[offset..offset + g.len()].iter_mut().zip(&g).for_each(|(d, &gi)| *d += gi);
                }
                Op::MaxPoolPairs { x, src } | Op::GlobalMaxPool { x, src } => {
                    let dx = slot(&mut adj, len(x), x.0);
                    for (&s, &gi) in src.iter().zip(&g) {
                        dx[s as usize] += gi;
                    }
                }
                Op::RepeatCols(x) => {
                    let c = len(x);
                    let n = g.len() / c.max(1);
                    let dx = slot(&mut adj, c, x.0);
                    for (r, d) in dx.iter_mut().enumerate() {
                        *d += g[r * n..(r + 1) * n].iter().copied().sum::<T>();
                    }
                }
            }
        }
        Ok(())
    }
}
