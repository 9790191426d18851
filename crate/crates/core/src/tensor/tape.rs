use std::collections::HashMap;

use super::{ParamId, ParamSet, Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`]. Every value is a 2-D matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    BroadcastRows(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Sum(Var),
    MeanRows(Var),
    Transpose(Var),
}

#[derive(Debug)]
enum Store<T> {
    Own(Vec<T>),
    Param(ParamId),
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    store: Store<T>,
    op: Op<T>,
}

/// Records a forward computation over borrowed parameters.
pub struct Tape<'p, T: Real> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

/// Per-parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn new(num_params: usize) -> Self {
        Gradients { grads: vec![None; num_params] }
    }

    pub fn add(&mut self, id: ParamId, g: &[T]) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &x)| *a = *a + x),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    /// Sums another gradient set into this one.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (id, g) in other.iter() {
            self.add(id, g);
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub fn l2_norm(&self) -> T {
        self.grads.iter().flatten().flatten().map(|&x| x * x).fold(T::zero(), |a, b| a + b).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().flatten().all(|x| x.is_finite())
    }
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> TensorError {
    TensorError::ShapeMismatch { op, left: vec![a.0, a.1], right: vec![b.0, b.1] }
}

fn total<T: Real>(it: impl Iterator<Item = T>) -> T {
    it.fold(T::zero(), |a, b| a + b)
}

fn add_into<T: Real>(acc: &mut [T], g: &[T]) {
    acc.iter_mut().zip(g).for_each(|(a, &x)| *a = *a + x);
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn gemm<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &x)| *o = *o + s * x);
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
fn gemm_nt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot = arow.iter().zip(brow).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            out[i * n + j] = out[i * n + j] + dot;
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`
fn gemm_tn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &x)| *o = *o + s * x);
        }
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape { params, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, store: Store::Own(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].store {
            Store::Own(x) => x,
            Store::Param(id) => self.params.get(*id).data(),
        }
    }

    pub fn row(&self, v: Var, r: usize) -> &[T] {
        let cols = self.nodes[v.0].cols;
        &self.value(v)[r * cols..(r + 1) * cols]
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shape(v);
        Tensor::new(vec![r, c], self.value(v).to_vec()).expect("consistent node shape")
    }

    /// A constant with no gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, TensorError> {
        if rows * cols != data.len() {
            return Err(TensorError::ShapeMismatch { op: "constant", left: vec![rows, cols], right: vec![data.len()] });
        }
        Ok(self.push(rows, cols, data, Op::Leaf))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let (rows, cols) = self.params.get(id).dims2();
        self.nodes.push(Node { rows, cols, store: Store::Param(id), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, TensorError> {
        let id = self.params.require(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(mismatch("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ((m, k), (n, k2)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(mismatch("matmul_t", (m, k), (n, k2)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMulT(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Vec<T>), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok((sa.0, sa.1, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(r, c, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(r, c, out, Op::Mul(a, b)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let ((m, n), (one, n2)) = (self.shape(a), self.shape(row));
        if one != 1 || n != n2 {
            return Err(mismatch("add_row", (m, n), (one, n2)));
        }
        let rv = self.value(row);
        let out = self.value(a).chunks(n.max(1)).flat_map(|r| r.iter().zip(rv).map(|(&x, &y)| x + y)).collect();
        Ok(self.push(m, n, out, Op::AddRow(a, row)))
    }

    /// `s * a`
    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        self.push(r, c, out, Op::Affine(a, s))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let neg = self.scale(a, -T::one());
        let ones = self.push(r, c, vec![T::one(); r * c], Op::Leaf);
        self.add(ones, neg).expect("same shape")
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, T::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = parts.first().map(|&p| self.shape(p).1).unwrap_or(0);
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(mismatch("concat_rows", (rows, cols), s));
            }
            rows += s.0;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(mismatch("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.row(p, r));
            }
        }
        Ok(self.push(rows, cols, out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.shape(a);
        if start + len > m {
            return Err(TensorError::IndexOutOfRange { index: start + len, len: m });
        }
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        Ok(self.push(len, n, out, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.shape(a);
        if start + len > n {
            return Err(TensorError::IndexOutOfRange { index: start + len, len: n });
        }
        let out = (0..m).flat_map(|r| self.row(a, r)[start..start + len].to_vec()).collect();
        Ok(self.push(m, len, out, Op::SliceCols(a, start)))
    }

    /// Embedding lookup: one output row per id.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.shape(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(TensorError::IndexOutOfRange { index: id, len: m });
            }
            out.extend_from_slice(self.row(table, id));
        }
        Ok(self.push(ids.len(), n, out, Op::Gather(table, ids.to_vec())))
    }

    /// Repeats a `1 x n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, TensorError> {
        let (one, n) = self.shape(a);
        if one != 1 {
            return Err(mismatch("broadcast_rows", (one, n), (1, n)));
        }
        let out = self.value(a).repeat(rows);
        Ok(self.push(rows, n, out, Op::BroadcastRows(a)))
    }

    /// Row-wise softmax; masked-out entries are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let (m, n) = self.shape(a);
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(TensorError::ShapeMismatch { op: "masked_softmax", left: vec![m, n], right: vec![mask.len()] });
            }
        }
        let x = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let keep = |c: usize| mask.is_none_or(|mk| mk[r * n + c]);
            let mx = (0..n).filter(|&c| keep(c)).map(|c| x[r * n + c]).fold(None, |acc: Option<T>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            });
            let Some(mx) = mx else {
                return Err(TensorError::AllMaskedRow(r));
            };
            let mut z = T::zero();
            for c in (0..n).filter(|&c| keep(c)) {
                let e = (x[r * n + c] - mx).exp();
                out[r * n + c] = e;
                z = z + e;
            }
            out[r * n..(r + 1) * n].iter_mut().for_each(|v| *v = *v / z);
        }
        Ok(self.push(m, n, out, Op::Softmax(a)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        self.masked_softmax(a, None)
    }

    /// Per-row normalization followed by `gain` and `bias` (both `1 x n`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let (m, n) = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != (1, n) {
                return Err(mismatch("layer_norm", (m, n), self.shape(p)));
            }
        }
        let eps = T::from_f64_lossy(eps);
        let nn = T::from_usize(n).expect("small dims");
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mu = total(row.iter().copied()) / nn;
            let var = total(row.iter().map(|&v| (v - mu) * (v - mu))) / nn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mu) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(m, n, out, Op::LayerNorm { x, gain, bias, xhat, rstd }))
    }

    /// Summed negative log-likelihood of `targets[r]` under `softmax(logits[r])`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.shape(logits);
        if targets.len() != m {
            return Err(TensorError::ShapeMismatch { op: "cross_entropy", left: vec![m, n], right: vec![targets.len()] });
        }
        let x = self.value(logits);
        let mut probs = vec![T::zero(); m * n];
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(TensorError::IndexOutOfRange { index: t, len: n });
            }
            let row = &x[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z = total(row.iter().map(|&v| (v - mx).exp()));
            let lz = z.ln() + mx;
            loss = loss + lz - row[t];
            for c in 0..n {
                probs[r * n + c] = (row[c] - lz).exp();
            }
        }
        Ok(self.push(1, 1, vec![loss], Op::CrossEntropy { logits, targets: targets.to_vec(), probs }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = total(self.value(a).iter().copied());
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = vec![T::zero(); n];
        for r in 0..m {
            add_into(&mut out, self.row(a, r));
        }
        let mm = T::from_usize(m.max(1)).expect("small dims");
        out.iter_mut().for_each(|v| *v = *v / mm);
        self.push(1, n, out, Op::MeanRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let x = self.value(a);
        let out = (0..n).flat_map(|c| (0..m).map(move |r| x[r * n + c])).collect();
        self.push(n, m, out, Op::Transpose(a))
    }

    /// Reverse sweep from a scalar `loss`; every parameter in the set gets a
    /// gradient, zero when it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarLoss(vec![r, c]));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new(self.params.len());
        for (i, (_, t)) in self.params.iter().enumerate() {
            out.grads[i] = Some(vec![T::zero(); t.len()]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (m, n) = (node.rows, node.cols);
            let mut acc = |v: Var, delta: Vec<T>| match &mut grads[v.0] {
                Some(x) => add_into(x, &delta),
                slot @ None => *slot = Some(delta),
            };
            let zeros = |v: Var| vec![T::zero(); self.value(v).len()];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.add(*id, &g),
                Op::MatMul(a, b) => {
                    let k = self.shape(*a).1;
                    let mut da = zeros(*a);
                    gemm_nt(&g, self.value(*b), &mut da, m, n, k);
                    let mut db = zeros(*b);
                    gemm_tn(self.value(*a), &g, &mut db, m, k, n);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::MatMulT(a, b) => {
                    let k = self.shape(*a).1;
                    let mut da = zeros(*a);
                    gemm(&g, self.value(*b), &mut da, m, n, k);
                    let mut db = zeros(*b);
                    gemm_tn(&g, self.value(*a), &mut db, m, n, k);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.iter().map(|&x| -x).collect());
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
                    acc(*b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
                }
                Op::AddRow(a, row) => {
                    let mut dr = vec![T::zero(); n];
                    for r in 0..m {
                        add_into(&mut dr, &g[r * n..(r + 1) * n]);
                    }
                    acc(*row, dr);
                    acc(*a, g);
                }
                Op::Affine(a, s) => acc(*a, g.iter().map(|&d| d * *s).collect()),
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i));
                    acc(*a, g.iter().zip(y).map(|(&d, &y)| d * y * (T::one() - y)).collect());
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    acc(*a, g.iter().zip(y).map(|(&d, &y)| d * (T::one() - y * y)).collect());
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(*a, g.iter().zip(x).map(|(&d, &x)| if x > T::zero() { d } else { T::zero() }).collect());
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        acc(p, g[off..off + len].to_vec());
                        off += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        let d = (0..m).flat_map(|r| g[r * n + off..r * n + off + pc].to_vec()).collect();
                        acc(p, d);
                        off += pc;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = zeros(*a);
                    d[start * n..(start + m) * n].copy_from_slice(&g);
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let an = self.shape(*a).1;
                    let mut d = zeros(*a);
                    for r in 0..m {
                        d[r * an + start..r * an + start + n].copy_from_slice(&g[r * n..(r + 1) * n]);
                    }
                    acc(*a, d);
                }
                Op::Gather(table, ids) => {
                    let mut d = zeros(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                    acc(*table, d);
                }
                Op::BroadcastRows(a) => {
                    let mut d = vec![T::zero(); n];
                    for r in 0..m {
                        add_into(&mut d, &g[r * n..(r + 1) * n]);
                    }
                    acc(*a, d);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i));
                    let mut d = vec![T::zero(); m * n];
                    for r in 0..m {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot = total(yr.iter().zip(gr).map(|(&a, &b)| a * b));
                        for c in 0..n {
                            d[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let gv = self.value(*gain);
                    let nn = T::from_usize(n).expect("small dims");
                    let mut dg = vec![T::zero(); n];
                    let mut db = vec![T::zero(); n];
                    let mut dx = vec![T::zero(); m * n];
                    for r in 0..m {
                        let (gr, hr) = (&g[r * n..(r + 1) * n], &xhat[r * n..(r + 1) * n]);
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for c in 0..n {
                            dg[c] = dg[c] + gr[c] * hr[c];
                            db[c] = db[c] + gr[c];
                            let dh = gr[c] * gv[c];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hr[c];
                        }
                        for c in 0..n {
                            let dh = gr[c] * gv[c];
                            dx[r * n + c] = rstd[r] / nn * (nn * dh - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                    acc(*x, dx);
                    acc(*gain, dg);
                    acc(*bias, db);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let n = self.shape(*logits).1;
                    let mut d: Vec<T> = probs.iter().map(|&p| p * g[0]).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * n + t] = d[r * n + t] - g[0];
                    }
                    acc(*logits, d);
                }
                Op::Sum(a) => acc(*a, vec![g[0]; self.value(*a).len()]),
                Op::MeanRows(a) => {
                    let am = self.shape(*a).0;
                    let mm = T::from_usize(am.max(1)).expect("small dims");
                    let row: Vec<T> = g.iter().map(|&x| x / mm).collect();
                    acc(*a, row.repeat(am));
                }
                Op::Transpose(a) => {
                    let d = (0..n).flat_map(|c| (0..m).map(move |r| (r, c))).map(|(r, c)| g[r * n + c]).collect();
                    acc(*a, d);
                }
            }
        }
        Ok(out)
    }
}
