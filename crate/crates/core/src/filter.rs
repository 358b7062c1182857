//! Neighborhood filtering by learned edge retention: concrete-relaxed
//! Bernoulli gates with a straight-through hard threshold, and the
//! Bernoulli-KL structure regularizer.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::{self, Mlp, PI_EPS};
use crate::numerics::{ParamStore, Rng, Tape, Tensor, Var};
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub enabled: bool,
    pub tau: f64,
    pub pi0: f64,
    pub phi0: f64,
    /// Forward with the hard gate; when false the relaxed value is used in
    /// both passes, which keeps the objective smooth for gradient checks.
    pub straight_through: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            enabled: true,
            tau: 0.7,
            pi0: 0.5,
            phi0: 0.1,
            straight_through: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(self.pi0 > 0.0 && self.pi0 < 1.0) {
            return Err(Error::InvalidArgument(format!("pi0 {} outside (0, 1)", self.pi0)));
        }
        if !(0.0..1.0).contains(&self.phi0) {
            return Err(Error::InvalidArgument(format!("phi0 {} outside [0, 1)", self.phi0)));
        }
        Ok(())
    }
}

/// Which stored edge a gate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EdgeRef {
    Original(usize),
    Generated(usize),
}

impl std::fmt::Display for EdgeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EdgeRef::Original(e) => write!(f, "e{e}"),
            EdgeRef::Generated(k) => write!(f, "g{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EdgeGate {
    pub edge: EdgeRef,
    pub layer: usize,
    pub pi: f64,
    pub relaxed: f64,
    pub hard: bool,
}

/// Gates for one layer, on the tape.
#[derive(Clone, Debug)]
pub struct LayerGates {
    /// Retention probabilities, `E × 1`.
    pub pi: Var,
    /// Values multiplied into attention, `E × 1`.
    pub gate: Var,
    pub relaxed: Vec<f64>,
    pub hard: Vec<bool>,
}

/// `π = clamp(σ(MLP(x_i ⊕ x_j ⊕ TE(Δt) ⊕ e)))`, batched over rows of `input`.
#[derive(Clone, Debug)]
pub struct RetentionMlp {
    pub mlp: Mlp,
}

impl RetentionMlp {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Var {
        let s = self.mlp.forward(tape, store, input);
        let p = tape.sigmoid(s);
        tape.clamp(p, PI_EPS, 1.0 - PI_EPS)
    }
}

/// Retention probability for one edge given explicit inputs.
#[allow(clippy::too_many_arguments)]
pub fn retention_probability(
    x_i: &[f64],
    x_j: &[f64],
    t: f64,
    t_ij: f64,
    e_ij: &[f64],
    te: &nn::TimeEncoder,
    mlp: &RetentionMlp,
    store: &ParamStore,
) -> Result<f64> {
    if t < t_ij {
        return Err(Error::InvalidArgument(format!("query time {t} precedes edge time {t_ij}")));
    }
    let mut input = Vec::with_capacity(mlp.mlp.input_dim());
    input.extend_from_slice(x_i);
    input.extend_from_slice(x_j);
    let mut tape = Tape::default();
    let enc = te.forward(&mut tape, store, &[t - t_ij]);
    input.extend_from_slice(tape.value(enc).data());
    input.extend_from_slice(e_ij);
    if input.len() != mlp.mlp.input_dim() {
        return Err(Error::Shape(format!(
            "retention input width {} vs {}",
            input.len(),
            mlp.mlp.input_dim()
        )));
    }
    let x = tape.constant(Tensor::row(input));
    let p = mlp.forward(&mut tape, store, x);
    Ok(tape.scalar(p))
}

/// Samples gates for the probabilities in `pi` (`E × 1`).
///
/// Training draws a concrete relaxation and thresholds it at `φ₀`; the hard
/// value is used forward while gradients pass through the relaxed sample.
/// Evaluation is noise-free: relaxed = π.
pub fn gate_edges(tape: &mut Tape, pi: Var, cfg: &FilterConfig, rng: &mut Rng, mode: Mode) -> LayerGates {
    let n = tape.value(pi).len();
    let relaxed_var = match mode {
        Mode::Train => {
            let noise: Vec<f64> = (0..n).map(|_| nn::concrete_noise(rng)).collect();
            tape.concrete(pi, noise, cfg.tau)
        }
        Mode::Eval => pi,
    };
    let relaxed = tape.value(relaxed_var).data().to_vec();
    let hard: Vec<bool> = relaxed.iter().map(|&r| r > cfg.phi0).collect();
    let gate = if cfg.straight_through || mode == Mode::Eval {
        tape.straight_through(relaxed_var, hard.iter().map(|&h| h as u8 as f64).collect())
    } else {
        relaxed_var
    };
    LayerGates { pi, gate, relaxed, hard }
}

/// Gate records for explicit probabilities, without a tape.
pub fn gate_values(pis: &[f64], cfg: &FilterConfig, rng: &mut Rng, mode: Mode) -> Result<Vec<(f64, bool)>> {
    cfg.validate()?;
    Ok(pis
        .iter()
        .map(|&p| {
            let p = nn::clamp_pi(p);
            let r = match mode {
                Mode::Train => nn::concrete_from_noise(p, nn::concrete_noise(rng), cfg.tau),
                Mode::Eval => p,
            };
            (r, r > cfg.phi0)
        })
        .collect())
}

/// Mean Bernoulli KL to the prior over gated edges; zero when there are none.
pub fn eib_loss(tape: &mut Tape, pi: Var, pi0: f64) -> Var {
    let k = tape.kl_bernoulli(pi, pi0);
    tape.mean(k)
}

pub fn eib_value(pis: &[f64], pi0: f64) -> f64 {
    if pis.is_empty() {
        return 0.0;
    }
    pis.iter().map(|&p| nn::kl_bernoulli(p, pi0)).sum::<f64>() / pis.len() as f64
}

pub fn write_gate_csv(gates: &[EdgeGate], mut w: impl Write) -> Result<()> {
    writeln!(w, "edge,layer,pi,relaxed,hard")?;
    for g in gates {
        writeln!(w, "{},{},{:.9},{:.9},{}", g.edge, g.layer, g.pi, g.relaxed, g.hard as u8)?;
    }
    Ok(())
}
