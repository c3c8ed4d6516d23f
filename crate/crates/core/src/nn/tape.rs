use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::{ParamId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::seed;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    /// Row-wise L2 normalization with the clamped row norms.
    Concat(Vec<Var>),
    RowGather(Var, Arc<[u32]>),
    SegmentMean {
        input: Var,
        ids: Arc<[u32]>,
        inv_counts: Vec<T>,
    },
    Dropout(Var, Vec<T>),
    Sum(Var),
    Mean(Var),
    /// Cached d(loss)/d(logit) for the two losses.
    Loss(Var, Vec<T>),
}

struct Node<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    /// `(rows, cols)` of a recorded value.
    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(vec![n.rows, n.cols], n.data.clone()).expect("dims match")
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        let (r, c) = t.matrix_dims();
        self.push(r, c, t.data().to_vec(), Op::Constant, false)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::Shape {
                op: "matrix",
                lhs: vec![rows, cols],
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(rows, cols, data, Op::Constant, false))
    }

    /// Read a parameter onto the tape. Reading the same parameter twice
    /// returns the same handle.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = &params.get(id).tensor;
        let (r, c) = t.matrix_dims();
        let v = self.push(r, c, t.data().to_vec(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn param_named(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let id = params.id(name)?;
        Ok(self.param(params, id))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        Error::Shape {
            op,
            lhs: vec![ar, ac],
            rhs: vec![br, bc],
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    /// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let broadcast = if (ar, ac) == (br, bc) {
            false
        } else if br == 1 && bc == ac {
            true
        } else {
            return Err(self.shape_err("add", a, b));
        };
        let av = self.value(a);
        let bv = self.value(b);
        let out: Vec<T> = if broadcast {
            av.chunks(ac.max(1))
                .flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y))
                .collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| x + y).collect()
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(ar, ac, out, Op::Add { a, b, broadcast }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let (r, c) = self.dims(a);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let (r, c) = self.dims(a);
        let ng = self.needs(a);
        self.push(r, c, out, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(T::zero())).collect();
        let (r, c) = self.dims(a);
        let ng = self.needs(a);
        self.push(r, c, out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = self.dims(a);
        let ng = self.needs(a);
        self.push(r, c, out, Op::Sigmoid(a), ng)
    }

    /// Concatenate along the last (column) dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidInput("concat of zero tensors".into()));
        };
        let rows = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != rows {
                return Err(self.shape_err("concat", first, p));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(rows, cols, out, Op::Concat(parts.to_vec()), ng))
    }

    /// `out[i] = a[indices[i]]`.
    pub fn row_gather(&mut self, a: Var, indices: Arc<[u32]>) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= rows) {
            return Err(Error::Shape {
                op: "row_gather",
                lhs: vec![rows, cols],
                rhs: vec![bad as usize],
            });
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices.iter() {
            let i = i as usize;
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let ng = self.needs(a);
        Ok(self.push(indices.len(), cols, out, Op::RowGather(a, indices), ng))
    }

    /// Mean of the rows of `a` grouped by `segment_ids`; empty segments give
    /// a zero row.
    pub fn segment_mean(&mut self, a: Var, segment_ids: Arc<[u32]>, n_segments: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if segment_ids.len() != rows {
            return Err(Error::Shape {
                op: "segment_mean",
                lhs: vec![rows, cols],
                rhs: vec![segment_ids.len()],
            });
        }
        if let Some(&bad) = segment_ids.iter().find(|&&s| s as usize >= n_segments) {
            return Err(Error::Shape {
                op: "segment_mean",
                lhs: vec![n_segments],
                rhs: vec![bad as usize],
            });
        }
        let mut acc = vec![0f64; n_segments * cols];
        let mut counts = vec![0usize; n_segments];
        let src = self.value(a);
        for (r, &s) in segment_ids.iter().enumerate() {
            let s = s as usize;
            counts[s] += 1;
            let dst = &mut acc[s * cols..(s + 1) * cols];
            for (d, &x) in dst.iter_mut().zip(&src[r * cols..(r + 1) * cols]) {
                *d += x.as_f64();
            }
        }
        let inv_counts: Vec<T> = counts
            .iter()
            .map(|&c| if c == 0 { T::zero() } else { T::of(1.0 / c as f64) })
            .collect();
        let out = acc
            .chunks(cols.max(1))
            .zip(&counts)
            .flat_map(|(row, &c)| {
                let inv = if c == 0 { 0.0 } else { 1.0 / c as f64 };
                row.iter().map(move |&x| T::of(x * inv))
            })
            .take(n_segments * cols)
            .collect();
        let ng = self.needs(a);
        Ok(self.push(
            n_segments,
            cols,
            out,
            Op::SegmentMean {
                input: a,
                ids: segment_ids,
                inv_counts,
            },
            ng,
        ))
    }

    /// Inverted dropout. Identity when not training or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut seed::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let (r, c) = self.dims(a);
        let ng = self.needs(a);
        Ok(self.push(r, c, out, Op::Dropout(a, mask), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().map(|x| x.as_f64()).sum();
        let ng = self.needs(a);
        self.push(1, 1, vec![T::of(s)], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::InvalidInput("mean of empty tensor".into()));
        }
        let s: f64 = self.value(a).iter().map(|x| x.as_f64()).sum();
        let ng = self.needs(a);
        Ok(self.push(1, 1, vec![T::of(s / n as f64)], Op::Mean(a), ng))
    }

    /// Mean binary cross-entropy on logits, `softplus(x) - y·x` per element.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let x = self.value(logits);
        if x.is_empty() {
            return Err(Error::InvalidInput("bce_with_logits on empty batch".into()));
        }
        if x.len() != targets.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: vec![x.len()],
                rhs: vec![targets.len()],
            });
        }
        let n = x.len() as f64;
        let mut total = 0f64;
        let mut grad = Vec::with_capacity(x.len());
        for (&xi, &yi) in x.iter().zip(targets) {
            let (xi, yi) = (xi.as_f64(), yi.as_f64());
            total += softplus(xi) - yi * xi;
            grad.push(T::of((sigmoid(xi) - yi) / n));
        }
        let ng = self.needs(logits);
        Ok(self.push(1, 1, vec![T::of(total / n)], Op::Loss(logits, grad), ng))
    }

    /// Mean softmax cross-entropy of `n × k` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = self.dims(logits);
        if n == 0 {
            return Err(Error::InvalidInput("cross_entropy on empty batch".into()));
        }
        if targets.len() != n {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: vec![n, k],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::InvalidInput(format!(
                "class index {bad} out of range for {k} classes"
            )));
        }
        let x = self.value(logits);
        let inv_n = 1.0 / n as f64;
        let mut total = 0f64;
        let mut grad = Vec::with_capacity(n * k);
        for (row, &t) in x.chunks(k).zip(targets) {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[t].as_f64();
            for (j, v) in row.iter().enumerate() {
                let p = (v.as_f64() - lse).exp();
                let y = if j == t { 1.0 } else { 0.0 };
                grad.push(T::of((p - y) * inv_n));
            }
        }
        let ng = self.needs(logits);
        Ok(self.push(1, 1, vec![T::of(total * inv_n)], Op::Loss(logits, grad), ng))
    }

    /// Back-propagate from a scalar `loss`, adding gradients into `params`.
    /// Every parameter of the set ends up with a gradient buffer; unused
    /// ones receive zeros.
    pub fn backward(&self, loss: Var, params: &mut ParamSet<T>) -> Result<()> {
        let ln = self.node(loss);
        if ln.data.len() != 1 {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                lhs: vec![ln.rows, ln.cols],
                rhs: vec![1, 1],
            });
        }
        for p in params.iter_mut() {
            if p.tensor.grad.is_none() {
                p.tensor.zero_grad();
            }
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                let p = params.get_mut(id);
                let buf = p.tensor.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
                for (b, &x) in buf.iter_mut().zip(&g) {
                    *b = *b + x;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.needs(*a) {
                    let da = slot(grads, *a, m * k);
                    T::gemm(m, n, k, g, false, self.value(*b), true, da, true);
                }
                if self.needs(*b) {
                    let db = slot(grads, *b, k * n);
                    T::gemm(k, m, n, self.value(*a), true, g, false, db, true);
                }
            }
            Op::Add { a, b, broadcast } => {
                if self.needs(*a) {
                    axpy(slot(grads, *a, g.len()), g, T::one());
                }
                if self.needs(*b) {
                    if *broadcast {
                        let db = slot(grads, *b, cols);
                        let mut acc = vec![0f64; cols];
                        for row in g.chunks(cols.max(1)) {
                            for (s, &x) in acc.iter_mut().zip(row) {
                                *s += x.as_f64();
                            }
                        }
                        for (d, s) in db.iter_mut().zip(acc) {
                            *d = *d + T::of(s);
                        }
                    } else {
                        axpy(slot(grads, *b, g.len()), g, T::one());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let da = slot(grads, *a, g.len());
                    for ((d, &x), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d = *d + x * y;
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let db = slot(grads, *b, g.len());
                    for ((d, &x), &y) in db.iter_mut().zip(g).zip(av) {
                        *d = *d + x * y;
                    }
                }
            }
            Op::Scale(a, s) => axpy(slot(grads, *a, g.len()), g, *s),
            Op::Relu(a) => {
                let da = slot(grads, *a, g.len());
                for ((d, &x), &y) in da.iter_mut().zip(g).zip(&node.data) {
                    if y > T::zero() {
                        *d = *d + x;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let da = slot(grads, *a, g.len());
                for ((d, &x), &y) in da.iter_mut().zip(g).zip(&node.data) {
                    *d = *d + x * y * (T::one() - y);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pc = self.dims(*p).1;
                    if self.needs(*p) {
                        let dp = slot(grads, *p, rows * pc);
                        for r in 0..rows {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            axpy(&mut dp[r * pc..(r + 1) * pc], src, T::one());
                        }
                    }
                    offset += pc;
                }
            }
            Op::RowGather(a, indices) => {
                let (ar, _) = self.dims(*a);
                let da = slot(grads, *a, ar * cols);
                for (r, &i) in indices.iter().enumerate() {
                    let i = i as usize;
                    axpy(
                        &mut da[i * cols..(i + 1) * cols],
                        &g[r * cols..(r + 1) * cols],
                        T::one(),
                    );
                }
            }
            Op::SegmentMean { input, ids, inv_counts } => {
                let (ar, _) = self.dims(*input);
                let da = slot(grads, *input, ar * cols);
                for (r, &s) in ids.iter().enumerate() {
                    let s = s as usize;
                    axpy(
                        &mut da[r * cols..(r + 1) * cols],
                        &g[s * cols..(s + 1) * cols],
                        inv_counts[s],
                    );
                }
            }
            Op::Dropout(a, mask) => {
                let da = slot(grads, *a, g.len());
                for ((d, &x), &m) in da.iter_mut().zip(g).zip(mask) {
                    *d = *d + x * m;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let da = slot(grads, *a, n);
                da.iter_mut().for_each(|d| *d = *d + g[0]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let s = g[0] / T::of(n as f64);
                let da = slot(grads, *a, n);
                da.iter_mut().for_each(|d| *d = *d + s);
            }
            Op::Loss(a, cached) => axpy(slot(grads, *a, cached.len()), cached, g[0]),
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], s: T) {
    for (d, &x) in dst.iter_mut().zip(src) {
        *d = *d + s * x;
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
