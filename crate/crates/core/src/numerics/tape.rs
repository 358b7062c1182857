//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Operations are recorded in execution order on a [`Tape`]; calling
//! [`Tape::backward`] on a `1 × 1` result walks the tape in reverse and
//! accumulates gradients for every node that depends on a trainable leaf.
//! Values are 2-D (`rows × cols`); vectors are single rows.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, matmul_grad_left, matmul_grad_right, Tensor};
use crate::exec::Execution;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Cos(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>, Var),
    SumAll(Var),
    MeanAll(Var),
    SegmentSum(Var, Vec<usize>),
    BlockSum(Var, usize),
    RepeatCols(Var, usize),
    GatedSoftmax(Var, Var, Vec<usize>),
    StraightThrough(Var),
    Concrete(Var, f64),
    KlBernoulli(Var, f64),
    KlGaussian(Var, Var),
    BceLogits(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    aux: Vec<f64>,
}

/// Records operations for one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    exec: Execution,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new(Execution::Sequential)
    }
}

impl Tape {
    pub fn new(exec: Execution) -> Self {
        Tape {
            nodes: Vec::new(),
            exec,
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, !p.frozen);
        self.params.insert(id, v);
        v
    }

    /// Parameters bound on this tape with their handles, sorted by id.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        let mut v: Vec<_> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        v.sort_by_key(|(k, _)| k.index());
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b), self.exec);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            (ta.rows(), ta.cols()),
            (tb.rows(), tb.cols()),
            "elementwise shape mismatch"
        );
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::matrix(ta.rows(), ta.cols(), data);
        let ng = self.ng(&[a, b]);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        assert_eq!((tr.rows(), tr.cols()), (1, c), "add_row width");
        let r = tr.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % c])
            .collect();
        let t = Tensor::matrix(ta.rows(), c, data);
        let ng = self.ng(&[a, row]);
        self.push(t, Op::AddRow(a, row), ng)
    }

    /// Multiplies row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (ta, tc) = (self.value(a), self.value(col));
        let c = ta.cols();
        assert_eq!((tc.rows(), tc.cols()), (ta.rows(), 1), "mul_col height");
        let s = tc.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * s[i / c.max(1)])
            .collect();
        let t = Tensor::matrix(ta.rows(), c, data);
        let ng = self.ng(&[a, col]);
        self.push(t, Op::MulCol(a, col), ng)
    }

    fn unary_with(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op, aux: Vec<f64>) -> Var {
        let t = self.value(a).map(f);
        let t = Tensor::matrix(self.value(a).rows(), self.value(a).cols(), t.into_data());
        let ng = self.ng(&[a]);
        let v = self.push(t, op, ng);
        self.nodes[v.0].aux = aux;
        v
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        self.unary_with(a, f, op, Vec::new())
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(t.row_slice(r));
            }
        }
        let ng = self.ng(parts);
        self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows width mismatch");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = self.ng(parts);
        self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let t = self.value(a);
        assert!(start + width <= t.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(t.rows() * width);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..start + width]);
        }
        let t = Tensor::matrix(t.rows(), width, data);
        let ng = self.ng(&[a]);
        self.push(t, Op::SliceCols(a, start), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let t = Tensor::matrix(idx.len(), c, data);
        let ng = self.ng(&[a]);
        self.push(t, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Copy of `base` with `base[rows[i]]` replaced by `updates[i]`. Rows must be distinct.
    pub fn scatter_rows(&mut self, base: Var, rows: &[usize], updates: Var) -> Var {
        let mut t = self.value(base).clone();
        let u = self.value(updates);
        let c = t.cols();
        assert_eq!((u.rows(), u.cols()), (rows.len(), c), "scatter_rows shape");
        for (i, &r) in rows.iter().enumerate() {
            t.data_mut()[r * c..(r + 1) * c].copy_from_slice(u.row_slice(i));
        }
        let ng = self.ng(&[base, updates]);
        self.push(t, Op::ScatterRows(base, rows.to_vec(), updates), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    /// Mean of all entries; zero for an empty input.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = if t.is_empty() {
            0.0
        } else {
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::MeanAll(a), ng)
    }

    /// Sums rows within each segment `offsets[s]..offsets[s + 1]`.
    pub fn segment_sum(&mut self, a: Var, offsets: &[usize]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let nseg = offsets.len() - 1;
        let mut data = vec![0.0; nseg * c];
        for s in 0..nseg {
            let out = &mut data[s * c..(s + 1) * c];
            for r in offsets[s]..offsets[s + 1] {
                for (o, &x) in out.iter_mut().zip(t.row_slice(r)) {
                    *o += x;
                }
            }
        }
        let ng = self.ng(&[a]);
        self.push(Tensor::matrix(nseg, c, data), Op::SegmentSum(a, offsets.to_vec()), ng)
    }

    /// Sums each consecutive run of `block` columns: `n × (h·block) → n × h`.
    pub fn block_sum(&mut self, a: Var, block: usize) -> Var {
        let t = self.value(a);
        assert!(block > 0 && t.cols().is_multiple_of(block), "block_sum width");
        let h = t.cols() / block;
        let mut data = Vec::with_capacity(t.rows() * h);
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            for b in 0..h {
                data.push(row[b * block..(b + 1) * block].iter().sum());
            }
        }
        let t = Tensor::matrix(t.rows(), h, data);
        let ng = self.ng(&[a]);
        self.push(t, Op::BlockSum(a, block), ng)
    }

    /// Repeats each column `block` times: `n × h → n × (h·block)`.
    pub fn repeat_cols(&mut self, a: Var, block: usize) -> Var {
        let t = self.value(a);
        let h = t.cols();
        let mut data = Vec::with_capacity(t.rows() * h * block);
        for r in 0..t.rows() {
            for &x in t.row_slice(r) {
                data.extend(std::iter::repeat_n(x, block));
            }
        }
        let t = Tensor::matrix(t.rows(), h * block, data);
        let ng = self.ng(&[a]);
        self.push(t, Op::RepeatCols(a, block), ng)
    }

    /// Per-segment softmax over rows of `scores` (`E × heads`), with each row
    /// weighted by `gates` (`E × 1`): `w = g·exp(s) / Σ g·exp(s)`.
    /// A segment whose gates are all zero yields zero weights.
    pub fn gated_softmax(&mut self, scores: Var, gates: Var, offsets: &[usize]) -> Var {
        let (ts, tg) = (self.value(scores), self.value(gates));
        let (e, h) = (ts.rows(), ts.cols());
        assert_eq!((tg.rows(), tg.cols()), (e, 1), "gate shape");
        assert_eq!(*offsets.last().unwrap_or(&0), e, "segment offsets");
        let (sd, gd) = (ts.data(), tg.data());
        let mut w = vec![0.0; e * h];
        let mut ratio = vec![0.0; e * h];
        for s in 0..offsets.len() - 1 {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            for head in 0..h {
                let m = (lo..hi)
                    .map(|r| sd[r * h + head])
                    .fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = (lo..hi).map(|r| gd[r] * (sd[r * h + head] - m).exp()).sum();
                if denom <= 0.0 {
                    continue;
                }
                for r in lo..hi {
                    let a = (sd[r * h + head] - m).exp() / denom;
                    ratio[r * h + head] = a;
                    w[r * h + head] = gd[r] * a;
                }
            }
        }
        let ng = self.ng(&[scores, gates]);
        let v = self.push(
            Tensor::matrix(e, h, w),
            Op::GatedSoftmax(scores, gates, offsets.to_vec()),
            ng,
        );
        self.nodes[v.0].aux = ratio;
        v
    }

    /// Forward value `hard`, backward gradient passed unchanged to `relaxed`.
    pub fn straight_through(&mut self, relaxed: Var, hard: Vec<f64>) -> Var {
        let t = self.value(relaxed);
        assert_eq!(t.len(), hard.len(), "straight_through length");
        let t = Tensor::matrix(t.rows(), t.cols(), hard);
        let ng = self.ng(&[relaxed]);
        self.push(t, Op::StraightThrough(relaxed), ng)
    }

    /// Concrete relaxation `σ((logit π + noise_logit) / τ)`, noise held constant.
    pub fn concrete(&mut self, pi: Var, noise_logit: Vec<f64>, tau: f64) -> Var {
        let t = self.value(pi);
        assert_eq!(t.len(), noise_logit.len(), "concrete noise length");
        let data = t
            .data()
            .iter()
            .zip(&noise_logit)
            .map(|(&p, &l)| sigmoid((logit(p) + l) / tau))
            .collect();
        let t = Tensor::matrix(t.rows(), t.cols(), data);
        let ng = self.ng(&[pi]);
        self.push(t, Op::Concrete(pi, tau), ng)
    }

    /// Elementwise `KL(Ber(π) ‖ Ber(π₀))`.
    pub fn kl_bernoulli(&mut self, pi: Var, pi0: f64) -> Var {
        self.unary(pi, |p| super::nn::kl_bernoulli(p, pi0), Op::KlBernoulli(pi, pi0))
    }

    /// Row-wise `KL(N(μ, σ²) ‖ N(0, I))` from `μ` and `log σ`, giving `n × 1`.
    pub fn kl_gaussian(&mut self, mu: Var, log_sigma: Var) -> Var {
        let (tm, ts) = (self.value(mu), self.value(log_sigma));
        assert_eq!(tm.shape(), ts.shape(), "kl_gaussian shapes");
        let data = (0..tm.rows())
            .map(|r| super::nn::kl_gaussian_std(tm.row_slice(r), ts.row_slice(r)))
            .collect();
        let t = Tensor::column(data);
        let ng = self.ng(&[mu, log_sigma]);
        self.push(t, Op::KlGaussian(mu, log_sigma), ng)
    }

    /// Mean binary cross-entropy of logits `n × 1` against `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Vec<f64>) -> Var {
        let t = self.value(logits);
        assert_eq!(t.len(), labels.len(), "bce length");
        let n = labels.len().max(1) as f64;
        let s: f64 = t
            .data()
            .iter()
            .zip(&labels)
            .map(|(&x, &y)| softplus(x) - y * x)
            .sum();
        let ng = self.ng(&[logits]);
        self.push(Tensor::scalar(s / n), Op::BceLogits(logits, labels), ng)
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let gt = Tensor::matrix(node.value.rows(), node.value.cols(), g.to_vec());
                if self.nodes[a.0].needs_grad {
                    let ga = matmul_grad_left(&gt, val(*b), self.exec);
                    acc(*a, &mut |s| add_into(s, &ga));
                }
                if self.nodes[b.0].needs_grad {
                    let gb = matmul_grad_right(val(*a), &gt, self.exec);
                    acc(*b, &mut |s| add_into(s, &gb));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(o, &x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::AddRow(a, r) => {
                let c = node.value.cols();
                acc(*a, &mut |s| add_into(s, g));
                acc(*r, &mut |s| {
                    for (i, &x) in g.iter().enumerate() {
                        s[i % c] += x;
                    }
                });
            }
            Op::MulCol(a, col) => {
                let c = node.value.cols().max(1);
                let (va, vc) = (val(*a).data(), val(*col).data());
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vc[i / c];
                    }
                });
                acc(*col, &mut |s| {
                    for i in 0..g.len() {
                        s[i / c] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(o, &x)| *o += k * x)),
            Op::AddScalar(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Sigmoid(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }),
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if x[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                })
            }
            Op::Exp(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * y[i];
                }
            }),
            Op::Ln(a) => {
                let x = val(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / x[i];
                    }
                })
            }
            Op::Cos(a) => {
                let x = val(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] -= g[i] * x[i].sin();
                    }
                })
            }
            Op::Softplus(a) => {
                let x = val(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * sigmoid(x[i]);
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if x[i] >= *lo && x[i] <= *hi {
                            s[i] += g[i];
                        }
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &mut |s| {
                        for r in 0..node.value.rows() {
                            for j in 0..w {
                                s[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(p, &mut |s| add_into(s, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let w = node.value.cols();
                let c = val(*a).cols();
                acc(*a, &mut |s| {
                    for r in 0..node.value.rows() {
                        for j in 0..w {
                            s[r * c + start + j] += g[r * w + j];
                        }
                    }
                })
            }
            Op::GatherRows(a, idx) => {
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            s[i * c + j] += g[r * c + j];
                        }
                    }
                })
            }
            Op::ScatterRows(base, rows, upd) => {
                let c = node.value.cols();
                acc(*base, &mut |s| {
                    add_into(s, g);
                    for &r in rows {
                        for j in 0..c {
                            s[r * c + j] -= g[r * c + j];
                        }
                    }
                });
                acc(*upd, &mut |s| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            s[i * c + j] += g[r * c + j];
                        }
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |s| s.iter_mut().for_each(|o| *o += g[0])),
            Op::MeanAll(a) => {
                let n = val(*a).len().max(1) as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|o| *o += g[0] / n))
            }
            Op::SegmentSum(a, offsets) => {
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    for seg in 0..offsets.len() - 1 {
                        for r in offsets[seg]..offsets[seg + 1] {
                            for j in 0..c {
                                s[r * c + j] += g[seg * c + j];
                            }
                        }
                    }
                })
            }
            Op::BlockSum(a, block) => {
                let h = node.value.cols();
                acc(*a, &mut |s| {
                    for (i, o) in s.iter_mut().enumerate() {
                        let (r, col) = (i / (h * block), (i % (h * block)) / block);
                        *o += g[r * h + col];
                    }
                })
            }
            Op::RepeatCols(a, block) => {
                let wide = node.value.cols();
                acc(*a, &mut |s| {
                    for (i, &x) in g.iter().enumerate() {
                        let (r, col) = (i / wide, (i % wide) / block);
                        s[r * (wide / block) + col] += x;
                    }
                })
            }
            Op::GatedSoftmax(scores, gates, offsets) => {
                let h = node.value.cols();
                let ratio = &node.aux;
                let mut gs = vec![0.0; y.len()];
                let mut gg = vec![0.0; node.value.rows()];
                for seg in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[seg], offsets[seg + 1]);
                    for head in 0..h {
                        let dot: f64 = (lo..hi).map(|r| g[r * h + head] * y[r * h + head]).sum();
                        for r in lo..hi {
                            let k = r * h + head;
                            gs[k] = y[k] * (g[k] - dot);
                            gg[r] += ratio[k] * (g[k] - dot);
                        }
                    }
                }
                acc(*scores, &mut |s| add_into(s, &gs));
                acc(*gates, &mut |s| add_into(s, &gg));
            }
            Op::StraightThrough(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Concrete(pi, tau) => {
                let p = val(*pi).data();
                acc(*pi, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i] * (1.0 - y[i]) / (tau * p[i] * (1.0 - p[i]));
                    }
                })
            }
            Op::KlBernoulli(pi, pi0) => {
                let p = val(*pi).data();
                acc(*pi, &mut |s| {
                    for i in 0..s.len() {
                        let d = (p[i] / pi0).ln() - ((1.0 - p[i]) / (1.0 - pi0)).ln();
                        s[i] += g[i] * d;
                    }
                })
            }
            Op::KlGaussian(mu, ls) => {
                let c = val(*mu).cols();
                let (vm, vs) = (val(*mu).data(), val(*ls).data());
                acc(*mu, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i / c] * vm[i];
                    }
                });
                acc(*ls, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i / c] * ((2.0 * vs[i]).exp() - 1.0);
                    }
                });
            }
            Op::BceLogits(a, labels) => {
                let x = val(*a).data();
                let n = labels.len().max(1) as f64;
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[0] * (sigmoid(x[i]) - labels[i]) / n;
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
