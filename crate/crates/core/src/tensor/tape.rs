use super::{Gradients, ParamId, Real, Tensor, TensorError};

type Res<T> = Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Concat(Vec<usize>),
    Relu(usize),
    Sigmoid(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SegmentMax {
        x: usize,
        // selected source row per output cell, u32::MAX for empty segments
        argmax: Vec<u32>,
    },
    SegmentMean {
        x: usize,
        seg: Box<[u32]>,
        counts: Vec<u32>,
    },
    GatherRows {
        x: usize,
        idx: Box<[u32]>,
    },
    ScatterRows {
        x: usize,
        idx: Box<[u32]>,
    },
    LogSumExp {
        x: usize,
    },
    Dot(usize, usize),
    RowScale {
        s: usize,
        x: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Records operations in execution order; [`Tape::backward`] replays them
/// in reverse. One tape per thread; share parameters, not tapes.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

fn shape_err(op: &'static str, lhs: [usize; 2], rhs: [usize; 2]) -> TensorError {
    TensorError::Shape { op, lhs, rhs }
}

// f64-accumulating kernels

fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[i * k + p].f64();
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (acc_j, bv) in acc.iter_mut().zip(brow) {
                *acc_j += av * bv.f64();
            }
        }
        for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = T::of(*v);
        }
    }
    out
}

/// `a (m x k) * b^T` with `b (n x k)`.
fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let s: f64 = arow.iter().zip(brow).map(|(x, y)| x.f64() * y.f64()).sum();
            out[i * n + j] = T::of(s);
        }
    }
    out
}

/// `a^T * b` with `a (k x m)`, `b (k x n)`.
fn matmul_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, av) in arow.iter().enumerate() {
            let av = av.f64();
            if av == 0.0 {
                continue;
            }
            for (acc_ij, bv) in acc[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *acc_ij += av * bv.f64();
            }
        }
    }
    acc.into_iter().map(T::of).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant)
    }

    /// Leaf whose gradient is reported under `id` by [`Tape::backward`].
    pub fn param(&mut self, id: ParamId, t: &Tensor<T>) -> Var {
        self.push(t.clone(), Op::Param(id))
    }

    /// `a * b`, or `a * b^T` when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Res<Var> {
        let [m, k] = self.shape(a);
        let [br, bc] = self.shape(b);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(shape_err("matmul", [m, k], [br, bc]));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out = if trans_b {
            matmul_nt(ad, bd, m, k, n)
        } else {
            matmul_nn(ad, bd, m, k, n)
        };
        let value = Tensor::from_vec(m, n, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a: a.0,
                b: b.0,
                trans_b,
            },
        ))
    }

    /// `x * w^T`: the usual dense layer with `w` stored as `out x in`.
    pub fn linear(&mut self, x: Var, w: Var) -> Res<Var> {
        self.matmul(x, w, true)
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Res<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::from_vec(sa[0], sa[1], data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Res<Var> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| T::of(x.f64() * s)).collect();
        let v = Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape");
        self.push(v, Op::Scale(a.0, s))
    }

    /// Concatenation along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Res<Var> {
        let rows = match parts.first() {
            Some(p) => self.shape(*p)[0],
            None => {
                return Err(TensorError::Invalid {
                    op: "concat",
                    msg: "no inputs".into(),
                })
            }
        };
        for p in parts {
            if self.shape(*p)[0] != rows {
                return Err(shape_err("concat", self.shape(parts[0]), self.shape(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect())))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .map(|&x| if x > T::ZERO { x } else { T::ZERO })
            .collect();
        let v = Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape");
        self.push(v, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| T::of(sigmoid(x.f64()))).collect();
        let v = Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape");
        self.push(v, Op::Sigmoid(a.0))
    }

    /// Row-wise layer normalization with affine `gain`, `bias` (`1 x cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Res<Var> {
        let [rows, cols] = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != [1, cols] {
                return Err(shape_err("layer_norm", [rows, cols], self.shape(p)));
            }
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0f64; rows * cols];
        let mut rstd = vec![0.0f64; rows];
        let mut out = vec![T::ZERO; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c].f64() - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = T::of(h * g[c].f64() + b[c].f64());
            }
        }
        let v = Tensor::from_vec(rows, cols, out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                rstd,
            },
        ))
    }

    fn check_segments(&self, op: &'static str, x: Var, seg: &[u32], n: usize) -> Res<()> {
        if seg.len() != self.shape(x)[0] {
            return Err(TensorError::Invalid {
                op,
                msg: format!("{} segment ids for {} rows", seg.len(), self.shape(x)[0]),
            });
        }
        if let Some(&bad) = seg.iter().find(|&&s| s as usize >= n) {
            return Err(TensorError::Index {
                op,
                index: bad as usize,
                limit: n,
            });
        }
        Ok(())
    }

    /// Column-wise max of the rows of `x` grouped by `seg` into `n`
    /// segments. Empty segments give zero rows; ties go to the earliest row.
    pub fn segment_max(&mut self, x: Var, seg: &[u32], n: usize) -> Res<Var> {
        self.check_segments("segment_max", x, seg, n)?;
        let t = self.value(x);
        let cols = t.cols();
        let mut out = vec![T::ZERO; n * cols];
        let mut argmax = vec![u32::MAX; n * cols];
        for (i, &s) in seg.iter().enumerate() {
            let s = s as usize;
            let row = t.row(i);
            for (c, &v) in row.iter().enumerate() {
                let slot = s * cols + c;
                if argmax[slot] == u32::MAX || v > out[slot] {
                    out[slot] = v;
                    argmax[slot] = i as u32;
                }
            }
        }
        let v = Tensor::from_vec(n, cols, out)?;
        Ok(self.push(v, Op::SegmentMax { x: x.0, argmax }))
    }

    /// Row mean per segment; empty segments give zero rows.
    pub fn segment_mean(&mut self, x: Var, seg: &[u32], n: usize) -> Res<Var> {
        self.check_segments("segment_mean", x, seg, n)?;
        let t = self.value(x);
        let cols = t.cols();
        let mut acc = vec![0.0f64; n * cols];
        let mut counts = vec![0u32; n];
        for (i, &s) in seg.iter().enumerate() {
            let s = s as usize;
            counts[s] += 1;
            for (a, v) in acc[s * cols..(s + 1) * cols].iter_mut().zip(t.row(i)) {
                *a += v.f64();
            }
        }
        let mut out = vec![T::ZERO; n * cols];
        for s in 0..n {
            if counts[s] > 0 {
                let inv = 1.0 / counts[s] as f64;
                for c in 0..cols {
                    out[s * cols + c] = T::of(acc[s * cols + c] * inv);
                }
            }
        }
        let v = Tensor::from_vec(n, cols, out)?;
        Ok(self.push(
            v,
            Op::SegmentMean {
                x: x.0,
                seg: seg.into(),
                counts,
            },
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[u32]) -> Res<Var> {
        let t = self.value(x);
        let cols = t.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i as usize >= t.rows() {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i as usize,
                    limit: t.rows(),
                });
            }
            data.extend_from_slice(t.row(i as usize));
        }
        let v = Tensor::from_vec(idx.len(), cols, data)?;
        Ok(self.push(
            v,
            Op::GatherRows {
                x: x.0,
                idx: idx.into(),
            },
        ))
    }

    /// `n x cols` zeros with row `i` of `x` added into row `idx[i]`.
    pub fn scatter_rows(&mut self, x: Var, idx: &[u32], n: usize) -> Res<Var> {
        let t = self.value(x);
        if idx.len() != t.rows() {
            return Err(TensorError::Invalid {
                op: "scatter_rows",
                msg: format!("{} indices for {} rows", idx.len(), t.rows()),
            });
        }
        let cols = t.cols();
        let mut out = Tensor::zeros(n, cols);
        for (i, &j) in idx.iter().enumerate() {
            if j as usize >= n {
                return Err(TensorError::Index {
                    op: "scatter_rows",
                    index: j as usize,
                    limit: n,
                });
            }
            for (o, v) in out.row_mut(j as usize).iter_mut().zip(t.row(i)) {
                *o = *o + *v;
            }
        }
        Ok(self.push(
            out,
            Op::ScatterRows {
                x: x.0,
                idx: idx.into(),
            },
        ))
    }

    /// `log(sum(exp(x)) + extra_zeros)`: the log-sum-exp over every entry of
    /// `x` plus `extra_zeros` implicit entries equal to zero. Returns `1 x 1`.
    pub fn reduce_logsumexp(&mut self, x: Var, extra_zeros: usize) -> Res<Var> {
        let t = self.value(x);
        if t.is_empty() && extra_zeros == 0 {
            return Err(TensorError::Invalid {
                op: "reduce_logsumexp",
                msg: "empty input".into(),
            });
        }
        let mut m = t
            .data()
            .iter()
            .map(|v| v.f64())
            .fold(f64::NEG_INFINITY, f64::max);
        if extra_zeros > 0 {
            m = m.max(0.0);
        }
        let s: f64 = t.data().iter().map(|v| (v.f64() - m).exp()).sum::<f64>()
            + extra_zeros as f64 * (-m).exp();
        let v = Tensor::scalar(T::of(m + s.ln()));
        Ok(self.push(v, Op::LogSumExp { x: x.0 }))
    }

    /// Sum of the elementwise product, `1 x 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Res<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("dot", sa, sb));
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x.f64() * y.f64())
            .sum();
        Ok(self.push(Tensor::scalar(T::of(s)), Op::Dot(a.0, b.0)))
    }

    /// Scales row `i` of `x` by the scalar `s[i]` (`s` is `rows x 1`).
    pub fn row_scale(&mut self, s: Var, x: Var) -> Res<Var> {
        let (ss, sx) = (self.shape(s), self.shape(x));
        if ss != [sx[0], 1] {
            return Err(shape_err("row_scale", ss, sx));
        }
        let sv = self.value(s).data();
        let t = self.value(x);
        let cols = t.cols();
        let mut data = Vec::with_capacity(t.len());
        for (r, &k) in sv.iter().enumerate() {
            data.extend(t.row(r).iter().map(|v| T::of(k.f64() * v.f64())));
        }
        let v = Tensor::from_vec(sx[0], cols, data)?;
        Ok(self.push(v, Op::RowScale { s: s.0, x: x.0 }))
    }

    /// Fingerprint of every non-smooth branch taken on this tape (relu
    /// signs and segment-max selections). Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for x in self.nodes[*a].value.data() {
                        feed((*x > T::ZERO) as u64);
                    }
                }
                Op::SegmentMax { argmax, .. } => {
                    for &i in argmax {
                        feed(i as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }

    fn backward_nodes(&self, loss: Var) -> Res<Vec<Option<Tensor<T>>>> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) {
            match &mut grads[i] {
                Some(a) => a.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let [m, k] = av.shape();
                    let n = node.value.cols();
                    if *trans_b {
                        // C = A B^T, B: n x k
                        let da = matmul_nn(g.data(), bv.data(), m, n, k);
                        let db = matmul_tn(g.data(), av.data(), m, n, k);
                        acc(&mut grads, *a, Tensor::from_vec(m, k, da)?);
                        acc(&mut grads, *b, Tensor::from_vec(n, k, db)?);
                    } else {
                        // C = A B, B: k x n
                        let da = matmul_nt(g.data(), bv.data(), m, n, k);
                        let db = matmul_tn(av.data(), g.data(), m, k, n);
                        acc(&mut grads, *a, Tensor::from_vec(m, k, da)?);
                        acc(&mut grads, *b, Tensor::from_vec(k, n, db)?);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().map(|v| -*v).collect(),
                    )?;
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, neg);
                }
                Op::Scale(a, s) => {
                    let data = g.data().iter().map(|v| T::of(v.f64() * s)).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let mut off = 0;
                    for &p in parts {
                        let c = self.nodes[p].value.cols();
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[off..off + c]);
                        }
                        acc(&mut grads, p, Tensor::from_vec(rows, c, data)?);
                        off += c;
                    }
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv > T::ZERO { *gv } else { T::ZERO })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| {
                            let y = yv.f64();
                            T::of(gv.f64() * y * (1.0 - y))
                        })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let [rows, cols] = node.value.shape();
                    let gv = self.nodes[*gain].value.data();
                    let mut dx = vec![T::ZERO; rows * cols];
                    let mut dg = vec![0.0f64; cols];
                    let mut db = vec![0.0f64; cols];
                    let mut dxhat = vec![0.0f64; cols];
                    for r in 0..rows {
                        let grow = g.row(r);
                        let hrow = &xhat[r * cols..(r + 1) * cols];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for c in 0..cols {
                            let dy = grow[c].f64();
                            dg[c] += dy * hrow[c];
                            db[c] += dy;
                            dxhat[c] = dy * gv[c].f64();
                            sum_d += dxhat[c];
                            sum_dh += dxhat[c] * hrow[c];
                        }
                        let mean_d = sum_d / cols as f64;
                        let mean_dh = sum_dh / cols as f64;
                        for c in 0..cols {
                            dx[r * cols + c] =
                                T::of(rstd[r] * (dxhat[c] - mean_d - hrow[c] * mean_dh));
                        }
                    }
                    acc(&mut grads, *x, Tensor::from_vec(rows, cols, dx)?);
                    acc(
                        &mut grads,
                        *gain,
                        Tensor::from_vec(1, cols, dg.into_iter().map(T::of).collect())?,
                    );
                    acc(
                        &mut grads,
                        *bias,
                        Tensor::from_vec(1, cols, db.into_iter().map(T::of).collect())?,
                    );
                }
                Op::SegmentMax { x, argmax } => {
                    let xs = self.nodes[*x].value.shape();
                    let cols = xs[1];
                    let mut dx = Tensor::zeros(xs[0], cols);
                    for (slot, &src) in argmax.iter().enumerate() {
                        if src != u32::MAX {
                            let c = slot % cols;
                            let d = &mut dx.data_mut()[src as usize * cols + c];
                            *d = *d + g.data()[slot];
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SegmentMean { x, seg, counts } => {
                    let xs = self.nodes[*x].value.shape();
                    let cols = xs[1];
                    let mut data = Vec::with_capacity(xs[0] * cols);
                    for &s in seg.iter() {
                        let inv = 1.0 / counts[s as usize] as f64;
                        data.extend(g.row(s as usize).iter().map(|v| T::of(v.f64() * inv)));
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xs[0], cols, data)?);
                }
                Op::GatherRows { x, idx } => {
                    let xs = self.nodes[*x].value.shape();
                    let mut dx = Tensor::zeros(xs[0], xs[1]);
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, v) in dx.row_mut(src as usize).iter_mut().zip(g.row(r)) {
                            *d = *d + *v;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ScatterRows { x, idx } => {
                    let cols = g.cols();
                    let mut data = Vec::with_capacity(idx.len() * cols);
                    for &j in idx.iter() {
                        data.extend_from_slice(g.row(j as usize));
                    }
                    acc(&mut grads, *x, Tensor::from_vec(idx.len(), cols, data)?);
                }
                Op::LogSumExp { x } => {
                    let out = node.value.item().f64();
                    let gs = g.item().f64();
                    let xv = &self.nodes[*x].value;
                    let data = xv
                        .data()
                        .iter()
                        .map(|v| T::of(gs * (v.f64() - out).exp()))
                        .collect();
                    acc(
                        &mut grads,
                        *x,
                        Tensor::from_vec(xv.rows(), xv.cols(), data)?,
                    );
                }
                Op::Dot(a, b) => {
                    let gs = g.item().f64();
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let scale = |t: &Tensor<T>| {
                        Tensor::from_vec(
                            t.rows(),
                            t.cols(),
                            t.data().iter().map(|v| T::of(gs * v.f64())).collect(),
                        )
                    };
                    let (da, db) = (scale(bv)?, scale(av)?);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::RowScale { s, x } => {
                    let sv = self.nodes[*s].value.data();
                    let xv = &self.nodes[*x].value;
                    let cols = xv.cols();
                    let mut ds = Vec::with_capacity(sv.len());
                    let mut dx = Vec::with_capacity(xv.len());
                    for (r, k) in sv.iter().enumerate() {
                        let grow = g.row(r);
                        let xrow = xv.row(r);
                        ds.push(T::of(
                            grow.iter().zip(xrow).map(|(a, b)| a.f64() * b.f64()).sum(),
                        ));
                        dx.extend(grow.iter().map(|v| T::of(v.f64() * k.f64())));
                    }
                    acc(&mut grads, *s, Tensor::from_vec(sv.len(), 1, ds)?);
                    acc(&mut grads, *x, Tensor::from_vec(xv.rows(), cols, dx)?);
                }
            }
        }
        Ok(grads)
    }

    /// Gradients of `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Res<Gradients<T>> {
        let node_grads = self.backward_nodes(loss)?;
        let mut out = Gradients::empty(0);
        for (i, g) in node_grads.into_iter().enumerate() {
            if let (Some(g), Op::Param(id)) = (g, &self.nodes[i].op) {
                out.accumulate(*id, g);
            }
        }
        Ok(out)
    }

    /// Gradients of `loss` with respect to arbitrary recorded values; zero
    /// where `loss` does not depend on them.
    pub fn backward_vars(&self, loss: Var, vars: &[Var]) -> Res<Vec<Tensor<T>>> {
        let mut node_grads = self.backward_nodes(loss)?;
        Ok(vars
            .iter()
            .map(|v| {
                node_grads
                    .get_mut(v.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| {
                        let [r, c] = self.shape(*v);
                        Tensor::zeros(r, c)
                    })
            })
            .collect())
    }
}
