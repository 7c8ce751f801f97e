use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Layout};
use super::{numel, ParamId, ParamStore, Real};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by a train-mode batchnorm, to be folded
/// into the running estimates once the step is done.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<T>,
    /// Unbiased batch variance.
    pub batch_var: Vec<T>,
}

const BN_EPS: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-12;

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    GlobalAvgPool(Var),
    ChannelScale {
        x: Var,
        s: Var,
    },
    Concat(Vec<Var>),
    L2Normalize {
        x: Var,
        norms: Vec<T>,
    },
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    GroupMean {
        x: Var,
        groups: Vec<Vec<usize>>,
    },
    PairwiseDistance {
        a: Var,
        b: Var,
    },
    TripletHinge {
        dist: Var,
        terms: Vec<(usize, usize, bool)>,
    },
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of every node reached by a backward pass.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Reverse-mode autodiff tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bn_updates: Vec<BnUpdate<T>>,
    underflows: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch<V>(msg: String) -> Result<V> {
    Err(Error::ShapeMismatch(msg))
}

fn im2col<T: Real>(
    x: &[T],
    ci: usize,
    l: usize,
    k: usize,
    stride: usize,
    pad: usize,
    lo: usize,
    cols: &mut [T],
) {
    for c in 0..ci {
        let xc = &x[c * l..(c + 1) * l];
        for j in 0..k {
            let row = &mut cols[(c * k + j) * lo..(c * k + j + 1) * lo];
            for (t, out) in row.iter_mut().enumerate() {
                let idx = (t * stride + j) as isize - pad as isize;
                *out = if idx >= 0 && (idx as usize) < l {
                    xc[idx as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

fn col2im_add<T: Real>(
    cols: &[T],
    ci: usize,
    l: usize,
    k: usize,
    stride: usize,
    pad: usize,
    lo: usize,
    dx: &mut [T],
) {
    for c in 0..ci {
        let dxc = &mut dx[c * l..(c + 1) * l];
        for j in 0..k {
            let row = &cols[(c * k + j) * lo..(c * k + j + 1) * lo];
            for (t, &v) in row.iter().enumerate() {
                let idx = (t * stride + j) as isize - pad as isize;
                if idx >= 0 && (idx as usize) < l {
                    dxc[idx as usize] += v;
                }
            }
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bn_updates: Vec::new(),
            underflows: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        assert_eq!(self.nodes[v.0].value.len(), 1, "not a scalar");
        self.nodes[v.0].value[0]
    }

    /// Number of rows `l2_normalize` zeroed because their norm underflowed.
    pub fn underflows(&self) -> usize {
        self.underflows
    }

    pub fn bn_updates(&self) -> &[BnUpdate<T>] {
        &self.bn_updates
    }

    /// Fold recorded batch statistics into the running estimates.
    pub fn apply_bn_updates(&self, store: &mut ParamStore<T>, momentum: f64) {
        let mo = T::of(momentum);
        let keep = T::one() - mo;
        for u in &self.bn_updates {
            for (r, &b) in store.get_mut(u.mean).data.iter_mut().zip(&u.batch_mean) {
                *r = keep * *r + mo * b;
            }
            for (r, &b) in store.get_mut(u.var).data.iter_mut().zip(&u.batch_var) {
                *r = keep * *r + mo * b;
            }
        }
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        let parents = self.parents(&op);
        let idx = self.nodes.len();
        // parents precede children, so the tape is acyclic by construction
        assert!(parents.iter().all(|p| p.0 < idx), "graph cycle");
        let requires_grad = match op {
            Op::Param(_) => true,
            Op::Leaf => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(idx)
    }

    fn parents(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Conv1d { x, w, .. } => vec![*x, *w],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::ChannelScale { x, s } => vec![*x, *s],
            Op::Concat(xs) => xs.clone(),
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::PairwiseDistance { a, b } => vec![*a, *b],
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::GlobalAvgPool(x)
            | Op::Softmax(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::L2Normalize { x, .. }
            | Op::GatherRows { x, .. }
            | Op::GroupMean { x, .. } => vec![*x],
            Op::TripletHinge { dist, .. } => vec![*dist],
        }
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&mut self, data: Vec<T>, shape: &[usize]) -> Var {
        assert_eq!(data.len(), numel(shape), "input data does not match shape");
        self.push(data, shape.to_vec(), Op::Leaf)
    }

    /// Input whose gradient is wanted (read it back through [`Grads::get`]).
    pub fn leaf(&mut self, data: Vec<T>, shape: &[usize]) -> Var {
        let v = self.input(data, shape);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.data.clone(), p.shape.clone(), Op::Param(id))
    }

    /// Cross-correlation of `x` [B, C_in, L] with `w` [C_out, C_in, k].
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || stride == 0 {
            return mismatch(format!("conv1d input {xs:?} weight {ws:?} stride {stride}"));
        }
        let (b, ci, l) = (xs[0], xs[1], xs[2]);
        let (co, k) = (ws[0], ws[2]);
        if l + 2 * pad < k {
            return mismatch(format!(
                "conv1d kernel {k} longer than padded input {}",
                l + 2 * pad
            ));
        }
        let lo = (l + 2 * pad - k) / stride + 1;
        let ck = ci * k;
        let direct = k == 1 && stride == 1 && pad == 0;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![T::zero(); b * co * lo];
        let mut cols = vec![T::zero(); if direct { 0 } else { ck * lo }];
        for bi in 0..b {
            let xb = &xv[bi * ci * l..(bi + 1) * ci * l];
            let src: &[T] = if direct {
                xb
            } else {
                im2col(xb, ci, l, k, stride, pad, lo, &mut cols);
                &cols
            };
            gemm(
                co,
                ck,
                lo,
                T::one(),
                wv,
                Layout::row_major(ck),
                src,
                Layout::row_major(lo),
                T::zero(),
                &mut out[bi * co * lo..(bi + 1) * co * lo],
                Layout::row_major(lo),
            );
        }
        Ok(self.push(out, vec![b, co, lo], Op::Conv1d { x, w, stride, pad }))
    }

    /// Batch normalization over every axis except 1 (channels).
    /// Train mode normalizes with batch statistics and records them for
    /// [`apply_bn_updates`](Self::apply_bn_updates); eval mode uses the
    /// running estimates held in `store`.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        store: &ParamStore<T>,
        running_mean: ParamId,
        running_var: ParamId,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return mismatch(format!("batchnorm input {xs:?}"));
        }
        let (b, c) = (xs[0], xs[1]);
        let inner = numel(&xs[2..]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return mismatch(format!("batchnorm affine params for {c} channels"));
        }
        let m = b * inner;
        if mode == Mode::Train && m < 2 {
            return mismatch("train-mode batchnorm needs more than one value per channel".into());
        }
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let eps = T::of(BN_EPS);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                let mf = T::of(m as f64);
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        s += xv[(bi * c + ch) * inner..(bi * c + ch + 1) * inner]
                            .iter()
                            .copied()
                            .sum::<T>();
                    }
                    let mu = s / mf;
                    let mut v = T::zero();
                    for bi in 0..b {
                        for &e in &xv[(bi * c + ch) * inner..(bi * c + ch + 1) * inner] {
                            v += (e - mu) * (e - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = v / mf;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(&store.get(running_mean).data);
                var.copy_from_slice(&store.get(running_var).data);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * inner..(bi * c + ch + 1) * inner;
                for ((h, o), &e) in xhat[r.clone()]
                    .iter_mut()
                    .zip(&mut out[r.clone()])
                    .zip(&xv[r])
                {
                    *h = (e - mean[ch]) * inv_std[ch];
                    *o = gv[ch] * *h + bv[ch];
                }
            }
        }
        let train = mode == Mode::Train;
        if train {
            let unbias = T::of(m as f64 / (m as f64 - 1.0));
            self.bn_updates.push(BnUpdate {
                mean: running_mean,
                var: running_var,
                batch_mean: mean,
                batch_var: var.iter().map(|&v| v * unbias).collect(),
            });
        }
        Ok(self.push(
            out,
            xs,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Sigmoid(x))
    }

    /// `x` [B, D_in] · `w`ᵀ (`w` is [D_out, D_in]) plus optional bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return mismatch(format!("linear input {xs:?} weight {ws:?}"));
        }
        let (bsz, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(bias) = b {
            if self.shape(bias) != [dout] {
                return mismatch(format!(
                    "linear bias {:?} for {dout} outputs",
                    self.shape(bias)
                ));
            }
        }
        let mut out = vec![T::zero(); bsz * dout];
        gemm(
            bsz,
            din,
            dout,
            T::one(),
            self.value(x),
            Layout::row_major(din),
            self.value(w),
            Layout::transposed(din),
            T::zero(),
            &mut out,
            Layout::row_major(dout),
        );
        if let Some(bias) = b {
            let bv = self.value(bias);
            for row in out.chunks_mut(dout) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        Ok(self.push(out, vec![bsz, dout], Op::Linear { x, w, b }))
    }

    /// Mean over the last axis: [B, C, L] → [B, C].
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[2] == 0 {
            return mismatch(format!("global_avg_pool input {xs:?}"));
        }
        let (b, c, l) = (xs[0], xs[1], xs[2]);
        let len = T::of(l as f64);
        let out = self
            .value(x)
            .chunks(l)
            .map(|row| row.iter().copied().sum::<T>() / len)
            .collect();
        Ok(self.push(out, vec![b, c], Op::GlobalAvgPool(x)))
    }

    /// Scale each channel of `x` [B, C, L] by `s` [B, C].
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xs, ss) = (self.shape(x).to_vec(), self.shape(s));
        if xs.len() != 3 || ss != [xs[0], xs[1]] {
            return mismatch(format!("channel_scale input {xs:?} gates {ss:?}"));
        }
        let l = xs[2];
        let sv = self.value(s);
        let out = self
            .value(x)
            .chunks(l)
            .zip(sv)
            .flat_map(|(row, &g)| row.iter().map(move |&v| v * g))
            .collect();
        Ok(self.push(out, xs, Op::ChannelScale { x, s }))
    }

    /// Concatenate along axis 1; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = match xs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return mismatch("concat of nothing".into()),
        };
        if first.len() < 2 {
            return mismatch(format!("concat input {first:?}"));
        }
        let b = first[0];
        let rest = &first[2..];
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s[0] != b || &s[2..] != rest {
                return mismatch(format!("concat {s:?} with {first:?}"));
            }
            total += s[1];
        }
        let inner = numel(rest);
        let mut out = Vec::with_capacity(b * total * inner);
        for bi in 0..b {
            for &v in xs {
                let c = self.shape(v)[1];
                out.extend_from_slice(&self.value(v)[bi * c * inner..(bi + 1) * c * inner]);
            }
        }
        let mut shape = first.clone();
        shape[1] = total;
        Ok(self.push(out, shape, Op::Concat(xs.to_vec())))
    }

    /// Row-wise L2 normalization of [B, D]. Rows with norm below 1e-12
    /// map to zero with zero gradient and are counted in
    /// [`underflows`](Self::underflows).
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return mismatch(format!("l2_normalize input {xs:?}"));
        }
        let d = xs[1];
        let mut norms = Vec::with_capacity(xs[0]);
        let mut out = vec![T::zero(); numel(&xs)];
        for (row, o) in self.value(x).chunks(d).zip(out.chunks_mut(d)) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n.as_f64() < NORM_FLOOR {
                norms.push(T::zero());
                continue;
            }
            norms.push(n);
            for (oo, &v) in o.iter_mut().zip(row) {
                *oo = v / n;
            }
        }
        self.underflows += norms.iter().filter(|n| **n == T::zero()).count();
        Ok(self.push(out, xs, Op::L2Normalize { x, norms }))
    }

    /// Row-wise softmax of [B, D].
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return mismatch(format!("softmax input {xs:?}"));
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(xs[1]) {
            softmax_in_place(row);
        }
        Ok(self.push(out, xs, Op::Softmax(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&p, &q)| p * q)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![s], vec![1], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.value(x).iter().copied().sum::<T>() / T::of(n as f64);
        self.push(vec![s], vec![1], Op::Mean(x))
    }

    /// Select rows (first axis) of `x`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || rows.iter().any(|&r| r >= xs[0]) {
            return mismatch(format!("gather_rows {rows:?} from {xs:?}"));
        }
        let inner = numel(&xs[1..]);
        let v = self.value(x);
        let out = rows
            .iter()
            .flat_map(|&r| v[r * inner..(r + 1) * inner].iter().copied())
            .collect();
        let mut shape = xs;
        shape[0] = rows.len();
        Ok(self.push(
            out,
            shape,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Mean of each group of rows of `x` [B, D] → [G, D].
    pub fn group_mean(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2
            || groups
                .iter()
                .any(|g| g.is_empty() || g.iter().any(|&r| r >= xs[0]))
        {
            return mismatch(format!("group_mean over {xs:?}"));
        }
        let d = xs[1];
        let v = self.value(x);
        let mut out = vec![T::zero(); groups.len() * d];
        for (g, o) in groups.iter().zip(out.chunks_mut(d)) {
            for &r in g {
                for (oo, &e) in o.iter_mut().zip(&v[r * d..(r + 1) * d]) {
                    *oo += e;
                }
            }
            let inv = T::of(1.0 / g.len() as f64);
            o.iter_mut().for_each(|e| *e *= inv);
        }
        Ok(self.push(
            out,
            vec![groups.len(), d],
            Op::GroupMean {
                x,
                groups: groups.to_vec(),
            },
        ))
    }

    /// Euclidean distances between rows of `a` [M, D] and `b` [G, D].
    pub fn pairwise_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return mismatch(format!("pairwise_distance {sa:?} vs {sb:?}"));
        }
        let (m, g, d) = (sa[0], sb[0], sa[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(m * g);
        for i in 0..m {
            for j in 0..g {
                let s: T = av[i * d..(i + 1) * d]
                    .iter()
                    .zip(&bv[j * d..(j + 1) * d])
                    .map(|(&p, &q)| (p - q) * (p - q))
                    .sum();
                out.push(s.sqrt());
            }
        }
        Ok(self.push(out, vec![m, g], Op::PairwiseDistance { a, b }))
    }

    /// Mean hinge `max(0, d_pos − d_neg + margin)` over the rows of a
    /// distance matrix [M, G]. The positive column is `labels[i]`; the
    /// negative is the closest other column (hard negative).
    pub fn triplet_hinge(&mut self, dist: Var, labels: &[usize], margin: f64) -> Result<Var> {
        let ds = self.shape(dist).to_vec();
        if ds.len() != 2 || ds[0] != labels.len() || ds[0] == 0 {
            return mismatch(format!(
                "triplet_hinge distances {ds:?} for {} labels",
                labels.len()
            ));
        }
        let g = ds[1];
        if g < 2 {
            return mismatch("triplet_hinge needs at least two prototypes".into());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= g) {
            return Err(Error::MissingPrototype(bad));
        }
        let dv = self.value(dist);
        let m = T::of(margin);
        let mut total = T::zero();
        let mut terms = Vec::with_capacity(labels.len());
        for (i, &pos) in labels.iter().enumerate() {
            let row = &dv[i * g..(i + 1) * g];
            let neg = (0..g)
                .filter(|&j| j != pos)
                .min_by(|&p, &q| {
                    row[p]
                        .partial_cmp(&row[q])
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .expect("at least two prototypes");
            let h = row[pos] - row[neg] + m;
            let active = h > T::zero();
            if active {
                total += h;
            }
            terms.push((pos, neg, active));
        }
        let loss = total / T::of(labels.len() as f64);
        Ok(self.push(vec![loss], vec![1], Op::TripletHinge { dist, terms }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return mismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    /// Reverse pass from a scalar. Parameter gradients are added to the
    /// store (so repeated calls accumulate); all node gradients are
    /// returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Grads<T> {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            if let Op::Param(id) = self.nodes[i].op {
                let p = store.get_mut(id);
                if p.trainable {
                    for (acc, &v) in p.grad.iter_mut().zip(&g) {
                        *acc += v;
                    }
                }
            }
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::Conv1d { x, w, stride, pad } => {
                let (xs, ws) = (self.shape(x), self.shape(w));
                let (b, ci, l) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[0], ws[2]);
                let lo = node.shape[2];
                let ck = ci * k;
                let direct = k == 1 && stride == 1 && pad == 0;
                let xv = self.value(x);
                let wv = self.value(w);
                let mut cols = vec![T::zero(); if direct { 0 } else { ck * lo }];
                if let Some(dw) = self.grad_buf(grads, w) {
                    for bi in 0..b {
                        let xb = &xv[bi * ci * l..(bi + 1) * ci * l];
                        let src: &[T] = if direct {
                            xb
                        } else {
                            im2col(xb, ci, l, k, stride, pad, lo, &mut cols);
                            &cols
                        };
                        gemm(
                            co,
                            lo,
                            ck,
                            T::one(),
                            &g[bi * co * lo..(bi + 1) * co * lo],
                            Layout::row_major(lo),
                            src,
                            Layout::transposed(lo),
                            T::one(),
                            dw,
                            Layout::row_major(ck),
                        );
                    }
                }
                if let Some(dx) = self.grad_buf(grads, x) {
                    for bi in 0..b {
                        let gy = &g[bi * co * lo..(bi + 1) * co * lo];
                        let dxb = &mut dx[bi * ci * l..(bi + 1) * ci * l];
                        if direct {
                            gemm(
                                ck,
                                co,
                                lo,
                                T::one(),
                                wv,
                                Layout::transposed(ck),
                                gy,
                                Layout::row_major(lo),
                                T::one(),
                                dxb,
                                Layout::row_major(lo),
                            );
                        } else {
                            gemm(
                                ck,
                                co,
                                lo,
                                T::one(),
                                wv,
                                Layout::transposed(ck),
                                gy,
                                Layout::row_major(lo),
                                T::zero(),
                                &mut cols,
                                Layout::row_major(lo),
                            );
                            col2im_add(&cols, ci, l, k, stride, pad, lo, dxb);
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (b, c) = (node.shape[0], node.shape[1]);
                let inner = numel(&node.shape[2..]);
                let gv = self.value(*gamma);
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let r = (bi * c + ch) * inner..(bi * c + ch + 1) * inner;
                        for (&dy, &h) in g[r.clone()].iter().zip(&xhat[r]) {
                            sum_dy[ch] += dy;
                            sum_dy_xhat[ch] += dy * h;
                        }
                    }
                }
                if let Some(dg) = self.grad_buf(grads, *gamma) {
                    for (a, &v) in dg.iter_mut().zip(&sum_dy_xhat) {
                        *a += v;
                    }
                }
                if let Some(db) = self.grad_buf(grads, *beta) {
                    for (a, &v) in db.iter_mut().zip(&sum_dy) {
                        *a += v;
                    }
                }
                if let Some(dx) = self.grad_buf(grads, *x) {
                    let mf = T::of((b * inner) as f64);
                    for bi in 0..b {
                        for ch in 0..c {
                            let r = (bi * c + ch) * inner..(bi * c + ch + 1) * inner;
                            let scale = gv[ch] * inv_std[ch];
                            for ((d, &dy), &h) in
                                dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r])
                            {
                                *d += if *train {
                                    scale / mf * (mf * dy - sum_dy[ch] - h * sum_dy_xhat[ch])
                                } else {
                                    scale * dy
                                };
                            }
                        }
                    }
                }
            }
            &Op::Relu(x) => {
                if let Some(dx) = self.grad_buf(grads, x) {
                    for ((d, &gy), &y) in dx.iter_mut().zip(g).zip(&node.value) {
                        if y > T::zero() {
                            *d += gy;
                        }
                    }
                }
            }
            &Op::Sigmoid(x) => {
                if let Some(dx) = self.grad_buf(grads, x) {
                    for ((d, &gy), &y) in dx.iter_mut().zip(g).zip(&node.value) {
                        *d += gy * y * (T::one() - y);
                    }
                }
            }
            &Op::Linear { x, w, b } => {
                let (bsz, din) = (self.shape(x)[0], self.shape(x)[1]);
                let dout = self.shape(w)[0];
                let xv = self.value(x);
                let wv = self.value(w);
                if let Some(dx) = self.grad_buf(grads, x) {
                    gemm(
                        bsz,
                        dout,
                        din,
                        T::one(),
                        g,
                        Layout::row_major(dout),
                        wv,
                        Layout::row_major(din),
                        T::one(),
                        dx,
                        Layout::row_major(din),
                    );
                }
                if let Some(dw) = self.grad_buf(grads, w) {
                    gemm(
                        dout,
                        bsz,
                        din,
                        T::one(),
                        g,
                        Layout::transposed(dout),
                        xv,
                        Layout::row_major(din),
                        T::one(),
                        dw,
                        Layout::row_major(din),
                    );
                }
                if let Some(bias) = b {
                    if let Some(db) = self.grad_buf(grads, bias) {
                        for row in g.chunks(dout) {
                            for (a, &v) in db.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            &Op::GlobalAvgPool(x) => {
                let l = self.shape(x)[2];
                let inv = T::of(1.0 / l as f64);
                if let Some(dx) = self.grad_buf(grads, x) {
                    for (row, &gy) in dx.chunks_mut(l).zip(g) {
                        row.iter_mut().for_each(|d| *d += gy * inv);
                    }
                }
            }
            &Op::ChannelScale { x, s } => {
                let l = self.shape(x)[2];
                let xv = self.value(x);
                let sv = self.value(s);
                if let Some(dx) = self.grad_buf(grads, x) {
                    for ((row, grow), &gate) in dx.chunks_mut(l).zip(g.chunks(l)).zip(sv) {
                        for (d, &gy) in row.iter_mut().zip(grow) {
                            *d += gy * gate;
                        }
                    }
                }
                if let Some(ds) = self.grad_buf(grads, s) {
                    for ((d, grow), xrow) in ds.iter_mut().zip(g.chunks(l)).zip(xv.chunks(l)) {
                        *d += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
            Op::Concat(xs) => {
                let b = node.shape[0];
                let inner = numel(&node.shape[2..]);
                let total = node.shape[1];
                let mut offset = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if let Some(dx) = self.grad_buf(grads, v) {
                        for bi in 0..b {
                            let src = &g
                                [(bi * total + offset) * inner..(bi * total + offset + c) * inner];
                            for (d, &gy) in
                                dx[bi * c * inner..(bi + 1) * c * inner].iter_mut().zip(src)
                            {
                                *d += gy;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::L2Normalize { x, norms } => {
                let d = node.shape[1];
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (((drow, grow), yrow), &n) in dx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(node.value.chunks(d))
                        .zip(norms)
                    {
                        if n == T::zero() {
                            continue;
                        }
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((dd, &gy), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dd += (gy - y * dot) / n;
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                let d = node.shape[1];
                if let Some(dx) = self.grad_buf(grads, x) {
                    for ((drow, grow), yrow) in
                        dx.chunks_mut(d).zip(g.chunks(d)).zip(node.value.chunks(d))
                    {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((dd, &gy), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dd += y * (gy - dot);
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.grad_buf(grads, v) {
                        d.iter_mut().zip(g).for_each(|(dd, &gy)| *dd += gy);
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if let Some(d) = self.grad_buf(grads, a) {
                    for ((dd, &gy), &o) in d.iter_mut().zip(g).zip(bv) {
                        *dd += gy * o;
                    }
                }
                if let Some(d) = self.grad_buf(grads, b) {
                    for ((dd, &gy), &o) in d.iter_mut().zip(g).zip(av) {
                        *dd += gy * o;
                    }
                }
            }
            &Op::Scale(x, c) => {
                if let Some(d) = self.grad_buf(grads, x) {
                    d.iter_mut().zip(g).for_each(|(dd, &gy)| *dd += gy * c);
                }
            }
            &Op::Sum(x) => {
                if let Some(d) = self.grad_buf(grads, x) {
                    d.iter_mut().for_each(|dd| *dd += g[0]);
                }
            }
            &Op::Mean(x) => {
                let n = T::of(self.value(x).len().max(1) as f64);
                if let Some(d) = self.grad_buf(grads, x) {
                    d.iter_mut().for_each(|dd| *dd += g[0] / n);
                }
            }
            Op::GatherRows { x, rows } => {
                let inner = numel(&node.shape[1..]);
                if let Some(d) = self.grad_buf(grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        for (dd, &gy) in d[r * inner..(r + 1) * inner]
                            .iter_mut()
                            .zip(&g[k * inner..(k + 1) * inner])
                        {
                            *dd += gy;
                        }
                    }
                }
            }
            Op::GroupMean { x, groups } => {
                let d = node.shape[1];
                if let Some(dx) = self.grad_buf(grads, *x) {
                    for (grp, grow) in groups.iter().zip(g.chunks(d)) {
                        let inv = T::of(1.0 / grp.len() as f64);
                        for &r in grp {
                            for (dd, &gy) in dx[r * d..(r + 1) * d].iter_mut().zip(grow) {
                                *dd += gy * inv;
                            }
                        }
                    }
                }
            }
            &Op::PairwiseDistance { a, b } => {
                let (m, gcount) = (node.shape[0], node.shape[1]);
                let d = self.shape(a)[1];
                let (av, bv) = (self.value(a), self.value(b));
                let coeff = |i: usize, j: usize| {
                    let dist = node.value[i * gcount + j];
                    if dist > T::zero() {
                        g[i * gcount + j] / dist
                    } else {
                        T::zero()
                    }
                };
                if let Some(da) = self.grad_buf(grads, a) {
                    for i in 0..m {
                        for j in 0..gcount {
                            let c = coeff(i, j);
                            for k in 0..d {
                                da[i * d + k] += c * (av[i * d + k] - bv[j * d + k]);
                            }
                        }
                    }
                }
                if let Some(db) = self.grad_buf(grads, b) {
                    for i in 0..m {
                        for j in 0..gcount {
                            let c = coeff(i, j);
                            for k in 0..d {
                                db[j * d + k] -= c * (av[i * d + k] - bv[j * d + k]);
                            }
                        }
                    }
                }
            }
            Op::TripletHinge { dist, terms } => {
                let gcount = self.shape(*dist)[1];
                let w = g[0] / T::of(terms.len() as f64);
                if let Some(d) = self.grad_buf(grads, *dist) {
                    for (i, &(pos, neg, active)) in terms.iter().enumerate() {
                        if active {
                            d[i * gcount + pos] += w;
                            d[i * gcount + neg] -= w;
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
