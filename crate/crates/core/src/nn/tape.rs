//! Reverse-mode automatic differentiation over batched matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse. Parameters are read from a [`ParamStore`] and their
//! gradients come back keyed by [`ParamId`].

use std::collections::HashMap;
use std::sync::Arc;

use super::mat::{dot, Mat};
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    RowNormalize(Var, Vec<f64>),
    Transpose(Var),
    SoftmaxRows(Var),
    CrossEntropy(Var, Vec<usize>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        tokens: usize,
        weights: Vec<f64>,
    },
    SelectDot {
        q: Var,
        keys: Arc<Mat>,
        idx: Vec<usize>,
    },
    SelectCombine {
        w: Var,
        values: Arc<Mat>,
        idx: Vec<usize>,
    },
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    values: Vec<Mat>,
    ops: Vec<Op>,
    param_vars: HashMap<ParamId, Var>,
    var_params: HashMap<usize, ParamId>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    per_var: Vec<Option<Mat>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn var(&self, v: Var) -> Option<&Mat> {
        self.per_var[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(&id).and_then(|v| self.per_var[v.0].as_ref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.params
            .iter()
            .filter_map(|(&id, v)| self.per_var[v.0].as_ref().map(|g| (id, g)))
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            values: Vec::with_capacity(256),
            ops: Vec::with_capacity(256),
            param_vars: HashMap::new(),
            var_params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param);
        self.param_vars.insert(id, v);
        self.var_params.insert(v.0, id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].matmul(&self.values[b.0]);
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds a `1×m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (&self.values[a.0], &self.values[bias.0]);
        assert_eq!(bv.rows, 1);
        assert_eq!(av.cols, bv.cols, "add_row width");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Multiplies each row of `a` (n×m) by the matching entry of `col` (n×1).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (&self.values[a.0], &self.values[col.0]);
        assert_eq!((cv.rows, cv.cols), (av.rows, 1), "mul_col shape");
        let mut out = av.clone();
        for r in 0..out.rows {
            let c = cv.data[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= c);
        }
        self.push(out, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.values[a.0].map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Multiplies row `r` by the constant `coeffs[r]`.
    pub fn scale_rows(&mut self, a: Var, coeffs: Vec<f64>) -> Var {
        let mut out = self.values[a.0].clone();
        assert_eq!(coeffs.len(), out.rows, "scale_rows length");
        for (r, &c) in coeffs.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|x| *x *= c);
        }
        self.push(out, Op::ScaleRows(a, coeffs))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    /// Clamps elementwise; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.values[a.0].map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.values[parts[0].0].rows;
        let cols: usize = parts.iter().map(|p| self.values[p.0].cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let pv = &self.values[p.0];
                assert_eq!(pv.rows, rows, "concat rows");
                out.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = &self.values[a.0];
        assert!(start + len <= av.cols, "slice_cols bounds");
        let mut out = Mat::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::Slice(a, start))
    }

    /// Row lookup (embedding table gather).
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let out = self.values[table.0].select_rows(&idx);
        self.push(out, Op::Gather(table, idx))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data.iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let s = av.data.iter().sum::<f64>() / av.data.len() as f64;
        self.push(Mat::from_vec(1, 1, vec![s]), Op::MeanAll(a))
    }

    /// Row sums as an n×1 column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let data = (0..av.rows).map(|r| av.row(r).iter().sum()).collect();
        self.push(Mat::from_vec(av.rows, 1, data), Op::SumCols(a))
    }

    /// Scales each row to unit norm; zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let mut out = av.clone();
        let mut norms = Vec::with_capacity(av.rows);
        for r in 0..av.rows {
            let n = super::mat::norm(av.row(r));
            norms.push(n);
            if n > 0.0 {
                out.row_mut(r).iter_mut().for_each(|x| *x /= n);
            }
        }
        self.push(out, Op::RowNormalize(a, norms))
    }

    /// Row-wise cosine similarity as an n×1 column.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        let an = self.row_normalize(a);
        let bn = self.row_normalize(b);
        let prod = self.mul(an, bn);
        self.sum_cols(prod)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.values[a.0].transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Mean cross-entropy of row-wise logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let lv = &self.values[logits.0];
        assert_eq!(labels.len(), lv.rows, "cross_entropy labels");
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let out = Mat::from_vec(1, 1, vec![total / labels.len() as f64]);
        self.push(out, Op::CrossEntropy(logits, labels))
    }

    /// Single-head attention of one query row over `tokens` key/value rows
    /// per sample. `q` is n×h; `k` and `v` are n×(tokens·h).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, tokens: usize) -> Var {
        let (qv, kv, vv) = (&self.values[q.0], &self.values[k.0], &self.values[v.0]);
        let h = qv.cols;
        assert_eq!(kv.cols, tokens * h, "attention key width");
        assert_eq!(vv.cols, tokens * h, "attention value width");
        let scale = 1.0 / (h as f64).sqrt();
        let mut weights = vec![0.0; qv.rows * tokens];
        let mut out = Mat::zeros(qv.rows, h);
        for r in 0..qv.rows {
            let w = &mut weights[r * tokens..(r + 1) * tokens];
            for (j, wj) in w.iter_mut().enumerate() {
                *wj = dot(qv.row(r), &kv.row(r)[j * h..(j + 1) * h]) * scale;
            }
            softmax_in_place(w);
            let o = out.row_mut(r);
            for (j, &wj) in w.iter().enumerate() {
                for (oi, vi) in o.iter_mut().zip(&vv.row(r)[j * h..(j + 1) * h]) {
                    *oi += wj * vi;
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                tokens,
                weights,
            },
        )
    }

    /// For each row `r` of `q`, dot products with `keys[idx[r*k + j]]`,
    /// giving an n×k score matrix with `k = idx.len() / n`.
    pub fn select_dot(&mut self, q: Var, keys: Arc<Mat>, idx: Vec<usize>) -> Var {
        let qv = &self.values[q.0];
        let k = idx.len() / qv.rows.max(1);
        assert_eq!(k * qv.rows, idx.len(), "select_dot index count");
        let mut out = Mat::zeros(qv.rows, k);
        for r in 0..qv.rows {
            for j in 0..k {
                out.data[r * k + j] = dot(qv.row(r), keys.row(idx[r * k + j]));
            }
        }
        self.push(out, Op::SelectDot { q, keys, idx })
    }

    /// Row `r` of the output is `Σ_j w[r,j] · values[idx[r*k + j]]`.
    pub fn select_combine(&mut self, w: Var, values: Arc<Mat>, idx: Vec<usize>) -> Var {
        let wv = &self.values[w.0];
        let k = wv.cols;
        assert_eq!(k * wv.rows, idx.len(), "select_combine index count");
        let mut out = Mat::zeros(wv.rows, values.cols);
        for r in 0..wv.rows {
            for j in 0..k {
                let wj = wv.data[r * k + j];
                let src = values.row(idx[r * k + j]);
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += wj * s;
                }
            }
        }
        self.push(out, Op::SelectCombine { w, values, idx })
    }

    /// Backpropagates from a scalar (1×1) node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.values[loss.0].data.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            per_var: grads,
            params: self.param_vars.clone(),
        }
    }

    fn backprop_node(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let val = |v: &Var| &self.values[v.0];
        match &self.ops[i] {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_nt(val(b));
                let gb = val(a).matmul_tn(g);
                accumulate(&mut grads[a.0], ga);
                accumulate(&mut grads[b.0], gb);
            }
            Op::AddRow(a, b) => {
                let mut gb = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (o, x) in gb.data.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], gb);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(&mut grads[a.0], g.zip_map(val(b), |x, y| x * y));
                accumulate(&mut grads[b.0], g.zip_map(val(a), |x, y| x * y));
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (val(a), val(c));
                let mut ga = g.clone();
                let mut gc = Mat::zeros(cv.rows, 1);
                for r in 0..g.rows {
                    let cr = cv.data[r];
                    gc.data[r] = dot(g.row(r), av.row(r));
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= cr);
                }
                accumulate(&mut grads[a.0], ga);
                accumulate(&mut grads[c.0], gc);
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], g.map(|x| x * s)),
            Op::ScaleRows(a, coeffs) => {
                let mut ga = g.clone();
                for (r, &c) in coeffs.iter().enumerate() {
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= c);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Tanh(a) => {
                let y = &self.values[i];
                accumulate(&mut grads[a.0], g.zip_map(y, |gx, yx| gx * (1.0 - yx * yx)));
            }
            Op::Exp(a) => {
                let y = &self.values[i];
                accumulate(&mut grads[a.0], g.zip_map(y, |gx, yx| gx * yx));
            }
            Op::Square(a) => {
                accumulate(&mut grads[a.0], g.zip_map(val(a), |gx, x| 2.0 * gx * x));
            }
            Op::Abs(a) => {
                accumulate(&mut grads[a.0], g.zip_map(val(a), |gx, x| gx * sign(x)));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                accumulate(
                    &mut grads[a.0],
                    g.zip_map(val(a), |gx, x| if x < lo || x > hi { 0.0 } else { gx }),
                );
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.values[p.0].cols;
                    let mut gp = Mat::zeros(g.rows, w);
                    for r in 0..g.rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    accumulate(&mut grads[p.0], gp);
                    off += w;
                }
            }
            Op::Slice(a, start) => {
                let av = val(a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                for r in 0..g.rows {
                    ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Gather(t, idx) => {
                let tv = val(t);
                let mut gt = Mat::zeros(tv.rows, tv.cols);
                for (o, &src) in idx.iter().enumerate() {
                    for (d, s) in gt.row_mut(src).iter_mut().zip(g.row(o)) {
                        *d += s;
                    }
                }
                accumulate(&mut grads[t.0], gt);
            }
            Op::SumAll(a) => {
                let av = val(a);
                accumulate(&mut grads[a.0], Mat::from_vec(av.rows, av.cols, vec![g.scalar(); av.data.len()]));
            }
            Op::MeanAll(a) => {
                let av = val(a);
                let s = g.scalar() / av.data.len() as f64;
                accumulate(&mut grads[a.0], Mat::from_vec(av.rows, av.cols, vec![s; av.data.len()]));
            }
            Op::SumCols(a) => {
                let av = val(a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    let gr = g.data[r];
                    ga.row_mut(r).iter_mut().for_each(|x| *x = gr);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::RowNormalize(a, norms) => {
                let y = &self.values[i];
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let n = norms[r];
                    if n == 0.0 {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj = dot(yr, gr);
                    for ((o, &gy), &yy) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = (gy - yy * proj) / n;
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()),
            Op::SoftmaxRows(a) => {
                let y = &self.values[i];
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = dot(yr, gr);
                    for ((o, &yy), &gy) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yy * (gy - s);
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::CrossEntropy(logits, labels) => {
                let lv = val(logits);
                let scale = g.scalar() / labels.len() as f64;
                let mut gl = lv.clone();
                for (r, &y) in labels.iter().enumerate() {
                    let row = gl.row_mut(r);
                    softmax_in_place(row);
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|x| *x *= scale);
                }
                accumulate(&mut grads[logits.0], gl);
            }
            Op::Attention {
                q,
                k,
                v,
                tokens,
                weights,
            } => {
                let (qv, kv, vv) = (val(q), val(k), val(v));
                let h = qv.cols;
                let scale = 1.0 / (h as f64).sqrt();
                let mut gq = Mat::zeros(qv.rows, h);
                let mut gk = Mat::zeros(kv.rows, kv.cols);
                let mut gv = Mat::zeros(vv.rows, vv.cols);
                for r in 0..qv.rows {
                    let w = &weights[r * tokens..(r + 1) * tokens];
                    let gr = g.row(r);
                    // d out / d w_j = <g, v_j>
                    let gw: Vec<f64> = (0..*tokens)
                        .map(|j| dot(gr, &vv.row(r)[j * h..(j + 1) * h]))
                        .collect();
                    let s = dot(w, &gw);
                    for j in 0..*tokens {
                        let gs = w[j] * (gw[j] - s) * scale;
                        let krow = &kv.row(r)[j * h..(j + 1) * h];
                        for (o, kx) in gq.row_mut(r).iter_mut().zip(krow) {
                            *o += gs * kx;
                        }
                        let qrow = qv.row(r);
                        for (o, qx) in gk.row_mut(r)[j * h..(j + 1) * h].iter_mut().zip(qrow) {
                            *o += gs * qx;
                        }
                        for (o, gx) in gv.row_mut(r)[j * h..(j + 1) * h].iter_mut().zip(gr) {
                            *o += w[j] * gx;
                        }
                    }
                }
                accumulate(&mut grads[q.0], gq);
                accumulate(&mut grads[k.0], gk);
                accumulate(&mut grads[v.0], gv);
            }
            Op::SelectDot { q, keys, idx } => {
                let qv = val(q);
                let k = g.cols;
                let mut gq = Mat::zeros(qv.rows, qv.cols);
                for r in 0..qv.rows {
                    for j in 0..k {
                        let gs = g.data[r * k + j];
                        for (o, kx) in gq.row_mut(r).iter_mut().zip(keys.row(idx[r * k + j])) {
                            *o += gs * kx;
                        }
                    }
                }
                accumulate(&mut grads[q.0], gq);
            }
            Op::SelectCombine { w, values, idx } => {
                let wv = val(w);
                let k = wv.cols;
                let mut gw = Mat::zeros(wv.rows, k);
                for r in 0..wv.rows {
                    for j in 0..k {
                        gw.data[r * k + j] = dot(g.row(r), values.row(idx[r * k + j]));
                    }
                }
                accumulate(&mut grads[w.0], gw);
            }
        }
    }

    /// Parameter id behind a node, if it is a parameter leaf.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        self.var_params.get(&v.0).copied()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream, Domain};

    fn rand_mat(seed: u64, r: usize, c: usize) -> Mat {
        let mut rng = stream(seed, Domain::Test, r as u64 * 1000 + c as u64);
        Mat::from_vec(r, c, normal_vec(&mut rng, r * c))
    }

    /// Central-difference check of d(loss)/d(input) for every input entry.
    fn check(inputs: Vec<Mat>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let store = ParamStore::default();
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss);
        let eval = |ins: &[Mat]| {
            let mut t = Tape::new(&store);
            let vs: Vec<Var> = ins.iter().map(|m| t.constant(m.clone())).collect();
            let l = f(&mut t, &vs);
            t.value(l).scalar()
        };
        let h = 1e-5;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.var(vars[k]).cloned().unwrap_or(Mat::zeros(m.rows, m.cols));
            for e in 0..m.data.len() {
                let mut plus = inputs.clone();
                plus[k].data[e] += h;
                let mut minus = inputs.clone();
                minus[k].data[e] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data[e];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-5 || (a - numeric).abs() < 1e-8,
                    "input {k} entry {e}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matmul_bias_tanh_gradients() {
        check(
            vec![rand_mat(1, 3, 4), rand_mat(2, 4, 2), rand_mat(3, 1, 2)],
            |t, v| {
                let m = t.matmul(v[0], v[1]);
                let b = t.add_row(m, v[2]);
                let y = t.tanh(b);
                let s = t.square(y);
                t.sum_all(s)
            },
        );
    }

    #[test]
    fn cosine_and_normalize_gradients() {
        check(vec![rand_mat(4, 3, 5), rand_mat(5, 3, 5)], |t, v| {
            let c = t.row_cosine(v[0], v[1]);
            let e = t.exp(c);
            t.mean_all(e)
        });
    }

    #[test]
    fn softmax_cross_entropy_gradients() {
        check(vec![rand_mat(6, 4, 7)], |t, v| t.cross_entropy(v[0], vec![0, 3, 6, 2]));
        check(vec![rand_mat(7, 3, 4), rand_mat(8, 3, 4)], |t, v| {
            let s = t.softmax_rows(v[0]);
            let p = t.mul(s, v[1]);
            t.sum_all(p)
        });
    }

    #[test]
    fn attention_gradients() {
        check(
            vec![rand_mat(9, 2, 3), rand_mat(10, 2, 12), rand_mat(11, 2, 12)],
            |t, v| {
                let a = t.attention(v[0], v[1], v[2], 4);
                let s = t.square(a);
                t.sum_all(s)
            },
        );
    }

    #[test]
    fn structural_op_gradients() {
        check(vec![rand_mat(12, 3, 2), rand_mat(13, 3, 3), rand_mat(14, 5, 3)], |t, v| {
            let c = t.concat(&[v[0], v[1]]);
            let s = t.slice_cols(c, 1, 3);
            let g = t.gather_rows(v[2], vec![4, 0, 4]);
            let m = t.mul(s, g);
            let tr = t.transpose(m);
            let sc = t.scale_rows(tr, vec![0.5, -2.0, 3.0]);
            let col = t.sum_cols(sc);
            let sq = t.abs(col);
            let cl = t.clamp(sq, -10.0, 10.0);
            t.sum_all(cl)
        });
        check(vec![rand_mat(15, 3, 4), rand_mat(16, 3, 1)], |t, v| {
            let m = t.mul_col(v[0], v[1]);
            let d = t.sub(m, v[0]);
            let s = t.scale(d, 0.3);
            let sq = t.square(s);
            t.mean_all(sq)
        });
    }

    #[test]
    fn select_ops_gradients() {
        let keys = Arc::new(rand_mat(17, 6, 4));
        let vals = Arc::new(rand_mat(18, 6, 3));
        check(vec![rand_mat(19, 2, 4)], move |t, v| {
            let s = t.select_dot(v[0], keys.clone(), vec![0, 5, 2, 1, 1, 3]);
            let w = t.softmax_rows(s);
            let e = t.select_combine(w, vals.clone(), vec![0, 5, 2, 1, 1, 3]);
            let sq = t.square(e);
            t.sum_all(sq)
        });
    }

    #[test]
    fn param_leaf_is_shared() {
        let mut store = ParamStore::default();
        let id = store.add("w", Mat::from_vec(1, 2, vec![1.0, 2.0]));
        let mut tape = Tape::new(&store);
        let a = tape.param(id);
        let b = tape.param(id);
        assert_eq!(a, b);
        let s = tape.add(a, b);
        let l = tape.sum_all(s);
        let g = tape.backward(l);
        assert_eq!(g.param(id).unwrap().data, vec![2.0, 2.0]);
        assert_eq!(tape.param_of(a), Some(id));
    }
}
