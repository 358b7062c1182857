//! Differentiable building blocks: time encoding, MLPs, multi-head attention,
//! and the closed-form KL terms used by the regularizers.

use super::params::{ParamId, ParamStore};
use super::rng::Rng;
use super::tape::{logit, sigmoid, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 10.0;
pub const PI_EPS: f64 = 1e-6;

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| (2.0 * rng.uniform() - 1.0) * limit).collect(),
    )
}

/// Affine map `x W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Self> {
        let w = store.add(format!("{name}.w"), xavier(fan_in, fan_out, rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros_matrix(1, fan_out))?;
        Ok(Linear { w, b, fan_in, fan_out })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        debug_assert_eq!(tape.shape(x).1, self.fan_in, "linear input width");
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }

    pub fn zero_init(&self, store: &mut ParamStore) {
        store.value_mut(self.w).data_mut().fill(0.0);
        store.value_mut(self.b).data_mut().fill(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    fn value(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Stack of linear layers with `act` between them; the last layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], act: Activation, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("an MLP needs at least input and output widths".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, act })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, store, x);
            if i < last {
                x = self.act.tape(tape, x);
            }
        }
        x
    }

    /// Zeroes the final layer so the output starts at exactly zero.
    pub fn zero_last(&self, store: &mut ParamStore) {
        if let Some(l) = self.layers.last() {
            l.zero_init(store);
        }
    }
}

/// Geometric frequency ladder `ω_m = 10^(−2m/dim)`.
pub fn time_frequencies(dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|m| 10f64.powf(-2.0 * m as f64 / dim as f64))
        .collect()
}

/// `cos(dt·ω + φ)` componentwise.
pub fn time_encode(dt: f64, omega: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("time delta {dt} must be non-negative")));
    }
    if omega.len() != phi.len() || omega.is_empty() || !omega.len().is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "time encoding needs equal, even-length ω and φ (got {} and {})",
            omega.len(),
            phi.len()
        )));
    }
    Ok(omega.iter().zip(phi).map(|(w, p)| (dt * w + p).cos()).collect())
}

/// Trainable functional time encoding.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    pub omega: ParamId,
    pub phi: ParamId,
    pub dim: usize,
}

impl TimeEncoder {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("time encoding width {dim} must be even and positive")));
        }
        let omega = store.add(format!("{name}.omega"), Tensor::row(time_frequencies(dim)))?;
        let phi = store.add(format!("{name}.phi"), Tensor::zeros_matrix(1, dim))?;
        Ok(TimeEncoder { omega, phi, dim })
    }

    /// Encodes each delta as one row: `n × dim`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, dts: &[f64]) -> Var {
        debug_assert!(dts.iter().all(|&d| d >= 0.0), "negative time delta");
        let dt = tape.constant(Tensor::column(dts.to_vec()));
        let w = tape.param(store, self.omega);
        let p = tape.param(store, self.phi);
        let a = tape.matmul(dt, w);
        let a = tape.add_row(a, p);
        tape.cos(a)
    }
}

/// Evaluates an MLP given explicit `(W, b)` pairs on a single input vector.
pub fn mlp_forward(x: &[f64], layers: &[(Tensor, Tensor)], act: Activation) -> Result<Vec<f64>> {
    let mut h = x.to_vec();
    for (i, (w, b)) in layers.iter().enumerate() {
        if w.rows() != h.len() || b.len() != w.cols() {
            return Err(Error::Shape(format!(
                "layer {i}: input {} vs weight {}×{}, bias {}",
                h.len(),
                w.rows(),
                w.cols(),
                b.len()
            )));
        }
        let mut out = b.data().to_vec();
        for (k, &hk) in h.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(w.row_slice(k)) {
                *o += hk * wv;
            }
        }
        if i + 1 < layers.len() {
            out.iter_mut().for_each(|v| *v = act.value(*v));
        }
        h = out;
    }
    Ok(h)
}

/// Multi-head scaled dot-product attention over variable-size key sets.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        proj_dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || !proj_dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "{heads} heads do not divide projection width {proj_dim}"
            )));
        }
        Ok(Attention {
            q: Linear::new(store, &format!("{name}.q"), query_dim, proj_dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), key_dim, proj_dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), key_dim, proj_dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), proj_dim, proj_dim, rng)?,
            heads,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.out.fan_out
    }

    /// `queries: T × dq`; keys/values: `E × dk` grouped into `T` segments by
    /// `offsets`. Optional `gates: E × 1` reweight the softmax. A target whose
    /// segment is empty (or fully gated off) falls back to its projected query.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        values: Var,
        offsets: &[usize],
        gates: Option<Var>,
    ) -> Var {
        let targets = offsets.len() - 1;
        let edges = offsets[targets];
        let proj = self.q.fan_out;
        let head_dim = proj / self.heads;
        let q = self.q.forward(tape, store, queries);
        let mut agg = None;
        let mut open = vec![0.0; targets];
        if edges > 0 {
            let gates = gates.unwrap_or_else(|| tape.constant(Tensor::column(vec![1.0; edges])));
            let g = tape.value(gates).data();
            for (s, o) in open.iter_mut().enumerate() {
                *o = g[offsets[s]..offsets[s + 1]].iter().sum();
            }
            let k = self.k.forward(tape, store, keys);
            let v = self.v.forward(tape, store, values);
            let owner: Vec<usize> = (0..targets)
                .flat_map(|s| std::iter::repeat_n(s, offsets[s + 1] - offsets[s]))
                .collect();
            let qe = tape.gather_rows(q, &owner);
            let prod = tape.mul(qe, k);
            let scores = tape.block_sum(prod, head_dim);
            let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
            let w = tape.gated_softmax(scores, gates, offsets);
            let w = tape.repeat_cols(w, head_dim);
            let weighted = tape.mul(w, v);
            agg = Some(tape.segment_sum(weighted, offsets));
        }
        let empty: Vec<f64> = open.iter().map(|&m| if m > 0.0 { 0.0 } else { 1.0 }).collect();
        let mask = tape.constant(Tensor::column(empty));
        let fallback = tape.mul_col(q, mask);
        let mixed = match agg {
            Some(a) => tape.add(a, fallback),
            None => fallback,
        };
        self.out.forward(tape, store, mixed)
    }
}

/// Attention for one query over explicit key/value vectors.
pub fn attention_aggregate(
    query: &[f64],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    attn: &Attention,
    store: &ParamStore,
) -> Result<Vec<f64>> {
    if keys.len() != values.len() {
        return Err(Error::Shape(format!("{} keys vs {} values", keys.len(), values.len())));
    }
    if query.len() != attn.q.fan_in || keys.iter().chain(values).any(|k| k.len() != attn.k.fan_in) {
        return Err(Error::Shape("attention input widths".into()));
    }
    let mut tape = Tape::default();
    let q = tape.constant(Tensor::row(query.to_vec()));
    let flat = |rows: &[Vec<f64>]| Tensor::matrix(rows.len(), attn.k.fan_in, rows.concat());
    let k = tape.constant(flat(keys));
    let v = tape.constant(flat(values));
    let out = attn.forward(&mut tape, store, q, k, v, &[0, keys.len()], None);
    Ok(tape.value(out).data().to_vec())
}

pub fn clamp_pi(p: f64) -> f64 {
    p.clamp(PI_EPS, 1.0 - PI_EPS)
}

/// Logistic noise `ln(ε / (1 − ε))` for `ε ~ U(0, 1)`.
pub fn concrete_noise(rng: &mut Rng) -> f64 {
    logit(rng.open01())
}

pub fn concrete_from_noise(pi: f64, noise_logit: f64, tau: f64) -> f64 {
    sigmoid((logit(clamp_pi(pi)) + noise_logit) / tau)
}

pub fn concrete_bernoulli_sample(pi: f64, tau: f64, rng: &mut Rng) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} outside (0, 1)")));
    }
    Ok(concrete_from_noise(pi, concrete_noise(rng), tau))
}

/// `μ + exp(log σ) ⊙ ε`, with `log σ` clamped to `[−10, 10]`.
pub fn reparameterize_gaussian(mu: &[f64], log_sigma: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    if mu.len() != log_sigma.len() {
        return Err(Error::Shape(format!("μ has {} entries, log σ {}", mu.len(), log_sigma.len())));
    }
    Ok(mu
        .iter()
        .zip(log_sigma)
        .map(|(&m, &s)| m + s.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp() * rng.normal())
        .collect())
}

pub fn kl_bernoulli(pi: f64, pi0: f64) -> f64 {
    let (p, q) = (clamp_pi(pi), clamp_pi(pi0));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

pub fn kl_gaussian_std(mu: &[f64], log_sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_sigma)
        .map(|(&m, &s)| m * m + (2.0 * s).exp() - 1.0 - 2.0 * s)
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_encode_basics() {
        let w = time_frequencies(4);
        let p = vec![0.0; 4];
        assert!(time_encode(0.0, &w, &p).unwrap().iter().all(|&x| x == 1.0));
        let te = time_encode(std::f64::consts::PI / w[0], &w, &p).unwrap();
        assert!((te[0] + 1.0).abs() < 1e-12);
        assert!(time_encode(-1.0, &w, &p).is_err());
        assert!(time_encode(1.0, &w[..3], &p[..3]).is_err());
    }

    #[test]
    fn mlp_forward_arithmetic() {
        let l = vec![(Tensor::matrix(1, 1, vec![2.0]), Tensor::row(vec![1.0]))];
        assert_eq!(mlp_forward(&[3.0], &l, Activation::Relu).unwrap(), vec![7.0]);
        let id = vec![(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]), Tensor::row(vec![0.0, 0.0]))];
        assert_eq!(mlp_forward(&[-1.5, 2.0], &id, Activation::Relu).unwrap(), vec![-1.5, 2.0]);
        assert!(mlp_forward(&[1.0, 2.0], &l, Activation::Relu).is_err());
    }

    #[test]
    fn attention_degenerate_cases() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0, 0);
        let attn = Attention::new(&mut store, "a", 3, 3, 4, 1, &mut rng).unwrap();
        let q = vec![0.2, -0.4, 0.9];
        // singleton softmax: output is the projected value
        let v = vec![vec![1.0, 2.0, -1.0]];
        let got = attention_aggregate(&q, std::slice::from_ref(&q), &v, &attn, &store).unwrap();
        let mut t = Tape::default();
        let x = t.constant(Tensor::row(v[0].clone()));
        let pv = attn.v.forward(&mut t, &store, x);
        let want = attn.out.forward(&mut t, &store, pv);
        for (a, b) in got.iter().zip(t.value(want).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // duplicated key/value leaves output unchanged
        let k2 = vec![q.clone(), q.clone()];
        let v2 = vec![v[0].clone(), v[0].clone()];
        let dup = attention_aggregate(&q, &k2, &v2, &attn, &store).unwrap();
        for (a, b) in got.iter().zip(&dup) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(attention_aggregate(&q, &k2, &v, &attn, &store).is_err());
        assert!(Attention::new(&mut store, "b", 3, 3, 5, 2, &mut rng).is_err());
    }

    #[test]
    fn concrete_contract() {
        assert_eq!(concrete_from_noise(0.5, 0.0, 0.7), 0.5);
        let mut rng = Rng::new(1, 0);
        assert!(concrete_bernoulli_sample(0.5, 1.0, &mut rng).is_err());
        let lo = concrete_from_noise(0.3, 0.4, 0.5);
        let hi = concrete_from_noise(0.6, 0.4, 0.5);
        assert!(hi > lo);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_bernoulli(0.5, 0.5), 0.0);
        assert!((kl_bernoulli(0.9, 0.5) - 0.368064).abs() < 1e-6);
        assert_eq!(kl_gaussian_std(&[0.0], &[0.0]), 0.0);
        assert!((kl_gaussian_std(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reparameterize_zero_noise_limit() {
        let mut rng = Rng::new(2, 0);
        let z = reparameterize_gaussian(&[1.5, -2.0], &[f64::NEG_INFINITY, -50.0], &mut rng).unwrap();
        assert!((z[0] - 1.5).abs() < 1e-3 && (z[1] + 2.0).abs() < 1e-3);
    }
}
