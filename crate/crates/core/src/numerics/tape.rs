use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::attention::{self, AttnMask, Plan};
use super::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc};
use super::{NumericsError, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<T>, rstd: Vec<T> },
    Attention { q: Var, k: Var, v: Var, heads: usize, mask: AttnMask, probs: Vec<T> },
    GatherRows { src: Var, idx: Vec<Option<usize>> },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    BceLogits { logits: Var, targets: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of a forward computation, replayed in reverse by [`Tape::backward`].
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    score_evals: u64,
}

/// Gradients of a scalar with respect to every recorded value that needs one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dim_err(op: &'static str, detail: alloc::string::String) -> NumericsError {
    NumericsError::Dimension { op, detail }
}

#[inline]
fn gelu_f64(x: f64) -> (f64, f64) {
    const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = INV_SQRT_2PI * libm::exp(-0.5 * x * x);
    (x * cdf, cdf + x * pdf)
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), score_evals: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attention scores evaluated so far: one per (query, key) pair of the
    /// attention pattern, independent of head count.
    pub fn score_evaluations(&self) -> u64 {
        self.score_evals
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        if k != k2 {
            return Err(dim_err("matmul", format!("[{}x{}]·[{}x{}]", m, k, k2, n)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// `x·w + b` with `w` stored `[in×out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (m, k, k2, n) = (xv.rows(), xv.cols(), wv.rows(), wv.cols());
        if k != k2 {
            return Err(dim_err("linear", format!("input width {} vs weight [{}x{}]", k, k2, n)));
        }
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != n {
                return Err(dim_err("linear", format!("bias {} vs width {}", bv.len(), n)));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm_acc(xv.data(), wv.data(), &mut out, m, k, n);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Linear { x, w, b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| T::of(gelu_f64(x.f64()).0));
        let ng = self.ng(a);
        self.push(t, Op::Gelu(a), ng)
    }

    /// Row-wise layer normalization with gain `g` and bias `b`.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(g), self.value(b));
        if gv.len() != n || bv.len() != n {
            return Err(dim_err("layer_norm", format!("gain {} / bias {} vs width {}", gv.len(), bv.len(), n)));
        }
        let eps = T::of(LN_EPS);
        let inv_n = T::one() / T::of(n as f64);
        let mut out = vec![T::zero(); m * n];
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let ng = self.ng(x) || self.ng(g) || self.ng(b);
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(t, Op::LayerNorm { x, g, b, xhat, rstd }, ng))
    }

    /// Multi-head scaled dot-product attention, `softmax(q·kᵀ/√d_k)·v` per head
    /// with `d_k = D / heads`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &AttnMask,
        heads: usize,
    ) -> Result<Var, NumericsError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (sq, d) = (qv.rows(), qv.cols());
        let sk = kv.rows();
        if heads == 0 || d % heads != 0 {
            return Err(dim_err("attention", format!("width {} not divisible by {} heads", d, heads)));
        }
        if kv.cols() != d || vv.cols() != d || vv.rows() != sk {
            return Err(dim_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        let plan = Plan::new(mask, sq, sk, heads)?;
        let (out, probs) = attention::forward(&plan, qv.data(), kv.data(), vv.data(), sq, d)?;
        self.score_evals += plan.scores;
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let t = Tensor::matrix(sq, d, out)?;
        Ok(self.push(t, Op::Attention { q, k, v, heads, mask: mask.clone(), probs }, ng))
    }

    /// Rows of `src` by index; `None` yields a zero row.
    pub fn gather_rows(&mut self, src: Var, idx: &[Option<usize>]) -> Result<Var, NumericsError> {
        let sv = self.value(src);
        let (r, c) = (sv.rows(), sv.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            match i {
                Some(i) if i < r => data.extend_from_slice(sv.row(i)),
                Some(i) => return Err(dim_err("gather_rows", format!("row {} of {}", i, r))),
                None => data.extend(core::iter::repeat_n(T::zero(), c)),
            }
        }
        let ng = self.ng(src);
        let t = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(t, Op::GatherRows { src, idx: idx.to_vec() }, ng))
    }

    pub fn select_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let idx: Vec<Option<usize>> = idx.iter().map(|&i| Some(i)).collect();
        self.gather_rows(src, &idx)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let c = parts.first().map(|&p| self.value(p).cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != c {
                return Err(dim_err("concat_rows", format!("width {} vs {}", pv.cols(), c)));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let t = Tensor::matrix(rows, c, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Sum over rows of softmax cross-entropy against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        let (m, c) = (lv.rows(), lv.cols());
        if labels.len() != m {
            return Err(dim_err("cross_entropy", format!("{} labels for {} rows", labels.len(), m)));
        }
        let mut probs = vec![T::zero(); m * c];
        let mut total = T::zero();
        for i in 0..m {
            if labels[i] >= c {
                return Err(NumericsError::Label { label: labels[i], classes: c });
            }
            let row = lv.row(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                probs[i * c + j] = probs[i * c + j] / z;
            }
            total += z.ln() + mx - row[labels[i]];
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            ng,
        ))
    }

    /// Sum over rows of the mean per-column binary cross-entropy with logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        if targets.len() != lv.len() {
            return Err(dim_err("bce", format!("{} targets for {} logits", targets.len(), lv.len())));
        }
        let c = T::of(lv.cols() as f64);
        let mut total = T::zero();
        for (&x, &y) in lv.data().iter().zip(targets) {
            // max(x,0) - x*y + ln(1 + e^{-|x|})
            total += x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p();
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(total / c),
            Op::BceLogits { logits, targets: targets.to_vec() },
            ng,
        ))
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()])?);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(node, &g, &mut grads);
            // only leaf gradients are kept past their use
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, mut g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let shape = self.value(v).shape();
                if g.shape() != shape {
                    g = g.reshaped(shape).expect("gradient size matches value");
                }
                *slot = Some(g);
            }
        }
    }

    fn acc_data(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) {
        if !self.ng(v) {
            return;
        }
        let t = Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient size matches value");
        self.acc(grads, v, t);
    }

    fn backprop(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.ng(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_bt_acc(gd, bv.data(), &mut da, m, n, k);
                    self.acc_data(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_at_acc(av.data(), gd, &mut db, m, k, n);
                    self.acc_data(grads, *b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); m * k];
                    gemm_bt_acc(gd, wv.data(), &mut dx, m, n, k);
                    self.acc_data(grads, *x, dx);
                }
                if self.ng(*w) {
                    let mut dw = vec![T::zero(); k * n];
                    gemm_at_acc(xv.data(), gd, &mut dw, m, k, n);
                    self.acc_data(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let mut db = vec![T::zero(); n];
                        for row in gd.chunks(n) {
                            for (d, &r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                        self.acc_data(grads, *b, db);
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, g.map(|x| x * *s));
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let data = av.data().iter().zip(gd).map(|(&x, &gy)| gy * T::of(gelu_f64(x.f64()).1)).collect();
                self.acc_data(grads, *a, data);
            }
            Op::LayerNorm { x, g: gain, b, xhat, rstd } => {
                let xv = self.value(*x);
                let (m, n) = (xv.rows(), xv.cols());
                let gv = self.value(*gain).data();
                if self.ng(*gain) || self.ng(*b) {
                    let mut dg = vec![T::zero(); n];
                    let mut db = vec![T::zero(); n];
                    for i in 0..m {
                        for j in 0..n {
                            dg[j] += gd[i * n + j] * xhat[i * n + j];
                            db[j] += gd[i * n + j];
                        }
                    }
                    self.acc_data(grads, *gain, dg);
                    self.acc_data(grads, *b, db);
                }
                if self.ng(*x) {
                    let inv_n = T::one() / T::of(n as f64);
                    let mut dx = vec![T::zero(); m * n];
                    for i in 0..m {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..n {
                            let dh = gd[i * n + j] * gv[j];
                            s1 += dh;
                            s2 += dh * xhat[i * n + j];
                        }
                        for j in 0..n {
                            let dh = gd[i * n + j] * gv[j];
                            dx[i * n + j] = rstd[i] * (dh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
                        }
                    }
                    self.acc_data(grads, *x, dx);
                }
            }
            Op::Attention { q, k, v, heads, mask, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (sq, d, sk) = (qv.rows(), qv.cols(), kv.rows());
                let plan = Plan::new(mask, sq, sk, *heads).expect("validated in forward");
                let (dq, dk, dv) =
                    attention::backward(&plan, qv.data(), kv.data(), vv.data(), probs, gd, sq, sk, d);
                self.acc_data(grads, *q, dq);
                self.acc_data(grads, *k, dk);
                self.acc_data(grads, *v, dv);
            }
            Op::GatherRows { src, idx } => {
                if self.ng(*src) {
                    let sv = self.value(*src);
                    let c = sv.cols();
                    let mut ds = vec![T::zero(); sv.len()];
                    for (r, i) in idx.iter().enumerate() {
                        if let Some(i) = i {
                            for j in 0..c {
                                ds[i * c + j] += gd[r * c + j];
                            }
                        }
                    }
                    self.acc_data(grads, *src, ds);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.ng(p) {
                        self.acc_data(grads, p, gd[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::Reshape(a) => {
                self.acc_data(grads, *a, gd.to_vec());
            }
            Op::Sum(a) => {
                let s = gd[0];
                let n = self.value(*a).len();
                self.acc_data(grads, *a, vec![s; n]);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).cols();
                let s = gd[0];
                let mut dl = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    dl[i * c + y] -= T::one();
                }
                for x in &mut dl {
                    *x *= s;
                }
                self.acc_data(grads, *logits, dl);
            }
            Op::BceLogits { logits, targets } => {
                let lv = self.value(*logits);
                let s = gd[0] / T::of(lv.cols() as f64);
                let dl = lv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| (T::one() / (T::one() + (-x).exp()) - y) * s)
                    .collect();
                self.acc_data(grads, *logits, dl);
            }
        }
    }
}
