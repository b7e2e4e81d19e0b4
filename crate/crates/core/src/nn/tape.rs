//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records one forward evaluation. Parameters are read in place
//! from a borrowed [`ParamSet`]; [`Tape::backward`] returns one gradient
//! matrix per parameter.

use super::mat::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Mat};
use super::params::{ParamId, ParamSet};

/// Node handle on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
pub const LN_EPS: f64 = 1e-5;

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MaskedMeanRows(Var, Vec<bool>),
    SmoothL1 {
        x: Var,
        target: Mat,
        beta: f64,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    /// `None` for parameters, whose value lives in the parameter set.
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(512),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols,
            bv.rows,
            "matmul {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = Mat::zeros(av.rows, bv.cols);
        matmul_acc(av, bv, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols,
            bv.cols,
            "matmul_t {:?} x {:?}^T",
            av.shape(),
            bv.shape()
        );
        let mut out = Mat::zeros(av.rows, bv.rows);
        matmul_nt_acc(av, bv, &mut out);
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let mut out = av.clone();
        out.add_assign(bv);
        self.push(out, Op::Add(a, b))
    }

    /// Adds the `1 x n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!((1, av.cols), rv.shape(), "add_row shape mismatch");
        let mut out = av.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, r))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a, s))
    }

    /// `x * w + b` with `w: in x out`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|&x| gelu(x)).collect());
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 x n`).
    pub fn layer_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> Var {
        let gamma = self.param(gamma);
        let beta = self.param(beta);
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(&g.data).zip(&b.data) {
                *o = *o * gv + bv;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows, rows, "concat_cols height mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols].copy_from_slice(v.row(r));
            }
            off += v.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.rows, "slice_rows out of range");
        let out = Mat::from_vec(
            len,
            av.cols,
            av.data[start * av.cols..(start + len) * av.cols].to_vec(),
        );
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "slice_cols out of range");
        let mut out = Mat::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r)
                .copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Mean of the rows whose mask entry is set, as a `1 x n` row.
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let av = self.value(a);
        assert_eq!(mask.len(), av.rows, "mask length");
        let count = mask.iter().filter(|m| **m).count();
        assert!(count > 0, "empty mask");
        let mut out = Mat::zeros(1, av.cols);
        for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
            for (o, v) in out.data.iter_mut().zip(av.row(r)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / count as f64);
        self.push(out, Op::MaskedMeanRows(a, mask.to_vec()))
    }

    /// Mean elementwise smooth-L1 against a constant target.
    pub fn smooth_l1(&mut self, x: Var, target: Mat, beta: f64) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape());
        let loss = smooth_l1_value(&xv.data, &target.data, beta);
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::SmoothL1 { x, target, beta },
        )
    }

    /// Cross-entropy of a `1 x C` logit row against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, 1);
        assert!(label < lv.cols);
        let m = lv.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = lv.data.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        let probs = lv.data.iter().map(|v| (v - lse).exp()).collect();
        let loss = lse - lv.data[label];
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        )
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    /// Gradient of the scalar `loss` with respect to every parameter
    /// (zeros for parameters not reached).
    pub fn backward(&self, loss: Var) -> Vec<Mat> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut param_grads = self.params.zeros_like();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => param_grads[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, av.rows, av.cols);
                    matmul_nt_acc(&g, bv, ga);
                    let gb = acc(&mut grads, *b, bv.rows, bv.cols);
                    matmul_tn_acc(av, &g, gb);
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, av.rows, av.cols);
                    matmul_acc(&g, bv, ga);
                    let gb = acc(&mut grads, *b, bv.rows, bv.cols);
                    matmul_tn_acc(&g, av, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    acc(&mut grads, *b, g.rows, g.cols).add_assign(&g);
                }
                Op::AddRow(a, r) => {
                    acc(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    let gr = acc(&mut grads, *r, 1, g.cols);
                    for i in 0..g.rows {
                        for (o, v) in gr.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads, *a, g.rows, g.cols);
                    for (o, v) in ga.data.iter_mut().zip(&g.data) {
                        *o += s * v;
                    }
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut grads, *a, g.rows, g.cols);
                    for ((o, gv), x) in ga.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *o += gv * gelu_grad(*x);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma).data.clone();
                    let (rows, cols) = xhat.shape();
                    {
                        let gg = acc(&mut grads, *gamma, 1, cols);
                        for r in 0..rows {
                            for ((o, dy), xh) in gg.data.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                                *o += dy * xh;
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, *beta, 1, cols);
                        for r in 0..rows {
                            for (o, dy) in gb.data.iter_mut().zip(g.row(r)) {
                                *o += dy;
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let dxhat: Vec<f64> =
                            g.row(r).iter().zip(&gv).map(|(dy, gm)| dy * gm).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xhat.row(r)).map(|(d, xh)| d * xh).sum();
                        let inv = inv_std[r];
                        for ((o, d), xh) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r)) {
                            *o += inv / n * (n * d - sum_d - xh * sum_dx);
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let ga = acc(&mut grads, *a, g.rows, g.cols);
                    for r in 0..g.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (pr, pc) = self.value(*p).shape();
                        let gp = acc(&mut grads, *p, pr, pc);
                        for (o, v) in gp.data.iter_mut().zip(&g.data[off * pc..(off + pr) * pc]) {
                            *o += v;
                        }
                        off += pr;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (pr, pc) = self.value(*p).shape();
                        let gp = acc(&mut grads, *p, pr, pc);
                        for r in 0..pr {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + pc]) {
                                *o += v;
                            }
                        }
                        off += pc;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (ar, ac) = self.value(*a).shape();
                    let ga = acc(&mut grads, *a, ar, ac);
                    for (o, v) in ga.data[start * ac..(start + g.rows) * ac]
                        .iter_mut()
                        .zip(&g.data)
                    {
                        *o += v;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (ar, ac) = self.value(*a).shape();
                    let ga = acc(&mut grads, *a, ar, ac);
                    for r in 0..ar {
                        for (o, v) in ga.row_mut(r)[*start..start + g.cols]
                            .iter_mut()
                            .zip(g.row(r))
                        {
                            *o += v;
                        }
                    }
                }
                Op::MaskedMeanRows(a, mask) => {
                    let (ar, ac) = self.value(*a).shape();
                    let count = mask.iter().filter(|m| **m).count() as f64;
                    let ga = acc(&mut grads, *a, ar, ac);
                    for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *o += v / count;
                        }
                    }
                }
                Op::SmoothL1 { x, target, beta } => {
                    let xv = self.value(*x);
                    let n = xv.len() as f64;
                    let up = g.data[0];
                    let gx = acc(&mut grads, *x, xv.rows, xv.cols);
                    for ((o, a), t) in gx.data.iter_mut().zip(&xv.data).zip(&target.data) {
                        let e = a - t;
                        let d = if e.abs() < *beta {
                            e / beta
                        } else {
                            e.signum()
                        };
                        *o += up * d / n;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let up = g.data[0];
                    let gl = acc(&mut grads, *logits, 1, probs.len());
                    for (c, (o, p)) in gl.data.iter_mut().zip(probs).enumerate() {
                        let y = if c == *label { 1.0 } else { 0.0 };
                        *o += up * (p - y);
                    }
                }
            }
        }
        param_grads
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, rows: usize, cols: usize) -> &mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(rows, cols))
}

/// Mean of `0.5 e^2 / beta` where `|e| < beta`, else `|e| - 0.5 beta`.
pub fn smooth_l1_value(x: &[f64], y: &[f64], beta: f64) -> f64 {
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = (a - b).abs();
            if e < beta {
                0.5 * e * e / beta
            } else {
                e - 0.5 * beta
            }
        })
        .sum();
    total / x.len() as f64
}
