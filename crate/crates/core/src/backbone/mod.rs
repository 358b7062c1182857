//! Memory-based temporal attention backbone producing Gaussian node
//! posteriors, reparameterized embeddings and link scores.

pub mod memory;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use memory::{memory_update, Memory, MemoryDelta, MemoryUpdater};

use crate::enhancer::{AugmentedView, EdgeGenerator};
use crate::error::{Error, Result};
use crate::filter::{self, EdgeGate, EdgeRef, FilterConfig, RetentionMlp};
use crate::graph::TemporalGraph;
use crate::numerics::nn::{self, Activation, Attention, Linear, Mlp, TimeEncoder, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::numerics::{ParamStore, Rng, Tape, Tensor, Var};
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding and memory width `K`.
    pub dim: usize,
    pub time_dim: usize,
    /// Edge feature width used when the data carries no edge features.
    pub edge_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Real temporal neighbors attended per node.
    pub neighbors: usize,
    pub use_memory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 172,
            time_dim: 100,
            edge_dim: 16,
            layers: 1,
            heads: 2,
            neighbors: 10,
            use_memory: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidArgument("at least one layer is required".into()));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "{} heads must divide embedding width {}",
                self.heads, self.dim
            )));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument("time_dim must be even and positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub attn: Attention,
    pub merge: Linear,
    pub head: Linear,
    pub retention: RetentionMlp,
}

/// All trainable components; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub dim_node: usize,
    pub edge_width: usize,
    pub te: TimeEncoder,
    pub updater: MemoryUpdater,
    pub layers: Vec<LayerParams>,
    pub generator: EdgeGenerator,
    pub decoder: Linear,
}

impl Model {
    pub fn new(cfg: &ModelConfig, dim_node: usize, dim_edge: usize, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.dim;
        if dim_node > k {
            return Err(Error::InvalidArgument(format!(
                "node features ({dim_node}) wider than the embedding ({k})"
            )));
        }
        let ew = if dim_edge > 0 { dim_edge } else { cfg.edge_dim };
        let td = cfg.time_dim;
        let te = TimeEncoder::new(store, "time", td)?;
        let updater = MemoryUpdater::new(store, k, td, ew, rng)?;
        let layers = (0..cfg.layers)
            .map(|l| {
                let retention = RetentionMlp {
                    mlp: Mlp::new(store, &format!("layer{l}.retain"), &[2 * k + td + ew, k, 1], Activation::Relu, rng)?,
                };
                retention.mlp.zero_last(store);
                Ok(LayerParams {
                    attn: Attention::new(store, &format!("layer{l}.attn"), k + td, k + td + ew, k, cfg.heads, rng)?,
                    merge: Linear::new(store, &format!("layer{l}.merge"), 2 * k, k, rng)?,
                    head: Linear::new(store, &format!("layer{l}.head"), k, 2 * k, rng)?,
                    retention,
                })
            })
            .collect::<Result<_>>()?;
        let generator = EdgeGenerator {
            mlp: Mlp::new(store, "generator", &[2 * dim_node + td, k, ew], Activation::Relu, rng)?,
        };
        let decoder = Linear::new(store, "decoder", 2 * k, 1, rng)?;
        Ok(Model {
            cfg: cfg.clone(),
            dim_node,
            edge_width: ew,
            te,
            updater,
            layers,
            generator,
            decoder,
        })
    }
}

/// Options that vary between training, evaluation and ablations.
#[derive(Clone, Debug)]
pub struct ForwardOptions<'a> {
    pub mode: Mode,
    /// Gating configuration; `None` leaves every edge open.
    pub filter: Option<&'a FilterConfig>,
    /// Sample `Z` from the posterior instead of using `μ`.
    pub sample_z: bool,
    /// Keep per-edge gate records.
    pub record_gates: bool,
}

/// Inputs shared by every layer of one batch.
pub struct BatchContext<'a> {
    pub graph: &'a TemporalGraph,
    pub view: &'a AugmentedView,
    /// Generated edge features, `|view| × edge_width`.
    pub generated: Option<Var>,
    pub memory: &'a Memory,
    pub delta: &'a MemoryDelta,
    pub t_query: f64,
}

pub struct LayerTerms {
    pub eib: Var,
    pub xib: Var,
    pub edges: usize,
    pub retained: usize,
}

pub struct Embeddings {
    /// `|targets| × K`.
    pub z: Var,
    pub index: HashMap<usize, usize>,
    pub layers: Vec<LayerTerms>,
    pub gates: Vec<EdgeGate>,
}

#[derive(Clone, Copy)]
struct Entry {
    nbr: usize,
    t: f64,
    edge: EdgeRef,
}

impl Model {
    /// Neighborhood of `v` at `t`: recent real events plus batch-local generated edges.
    fn neighborhood(&self, ctx: &BatchContext, v: usize) -> Result<Vec<Entry>> {
        let mut out: Vec<Entry> = ctx
            .graph
            .temporal_neighbors(v, ctx.t_query, self.cfg.neighbors)?
            .into_iter()
            .map(|e| Entry { nbr: e.node, t: e.t, edge: EdgeRef::Original(e.event) })
            .collect();
        for k in ctx.view.incident_before(v, ctx.t_query) {
            let e = &ctx.view.edges[k];
            let nbr = if e.src == v { e.dst } else { e.src };
            out.push(Entry { nbr, t: e.t, edge: EdgeRef::Generated(k) });
        }
        Ok(out)
    }

    fn initial_embeddings(&self, tape: &mut Tape, ctx: &BatchContext, nodes: &[usize]) -> Var {
        let k = self.cfg.dim;
        let base = if self.cfg.use_memory {
            ctx.delta.lookup(tape, ctx.memory, nodes)
        } else {
            tape.constant(Tensor::zeros_matrix(nodes.len(), k))
        };
        let d = self.dim_node;
        let feats = ctx.graph.node_features();
        if d == 0 || feats.data().iter().all(|&x| x == 0.0) {
            return base;
        }
        let mut x = vec![0.0; nodes.len() * k];
        for (r, &v) in nodes.iter().enumerate() {
            x[r * k..r * k + d].copy_from_slice(feats.row_slice(v));
        }
        let x = tape.constant(Tensor::matrix(nodes.len(), k, x));
        tape.add(base, x)
    }

    /// Embeddings of `targets` after all layers, at the batch query time.
    pub fn embed_nodes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &BatchContext,
        targets: &[usize],
        opts: &ForwardOptions,
        rng: &Rng,
    ) -> Result<Embeddings> {
        let k = self.cfg.dim;
        let depth = self.layers.len();
        let mut hoods: HashMap<usize, Vec<Entry>> = HashMap::new();
        // sets[l] holds the nodes whose layer-l embedding is needed
        let mut sets: Vec<Vec<usize>> = vec![Vec::new(); depth + 1];
        let mut top: Vec<usize> = Vec::new();
        let mut seen = BTreeSet::new();
        for &v in targets {
            if seen.insert(v) {
                top.push(v);
            }
        }
        sets[depth] = top;
        for l in (0..depth).rev() {
            let mut s = sets[l + 1].clone();
            let mut have: BTreeSet<usize> = s.iter().copied().collect();
            for &v in &sets[l + 1] {
                if let std::collections::hash_map::Entry::Vacant(e) = hoods.entry(v) {
                    e.insert(self.neighborhood(ctx, v)?);
                }
                for e in &hoods[&v] {
                    if have.insert(e.nbr) {
                        s.push(e.nbr);
                    }
                }
            }
            sets[l] = s;
        }

        // edge features for every referenced edge
        let ew = self.edge_width;
        let mut orig_rows: HashMap<usize, usize> = HashMap::new();
        let mut orig_feats = Vec::new();
        for v in sets[1..].iter().flatten() {
            for e in &hoods[v] {
                if let EdgeRef::Original(ev) = e.edge {
                    let next = orig_rows.len();
                    orig_rows.entry(ev).or_insert_with(|| {
                        let f = &ctx.graph.event(ev).features;
                        if f.is_empty() {
                            orig_feats.extend(std::iter::repeat_n(0.0, ew));
                        } else {
                            orig_feats.extend_from_slice(f);
                        }
                        next
                    });
                }
            }
        }
        let n_orig = orig_rows.len();
        let orig = tape.constant(Tensor::matrix(n_orig, ew, orig_feats));
        let edge_table = match ctx.generated {
            Some(gen) => tape.concat_rows(&[orig, gen]),
            None => orig,
        };

        let mut z = self.initial_embeddings(tape, ctx, &sets[0]);
        let mut index: HashMap<usize, usize> = sets[0].iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut terms = Vec::with_capacity(depth);
        let mut gates_out = Vec::new();

        for (l, layer) in self.layers.iter().enumerate() {
            let tg = &sets[l + 1];
            let tgt_rows: Vec<usize> = tg.iter().map(|v| index[v]).collect();
            let mut offsets = vec![0usize];
            let mut nbr_rows = Vec::new();
            let mut own_rows = Vec::new();
            let mut dts = Vec::new();
            let mut edge_rows = Vec::new();
            let mut refs = Vec::new();
            for (r, v) in tg.iter().enumerate() {
                for e in &hoods[v] {
                    nbr_rows.push(index[&e.nbr]);
                    own_rows.push(tgt_rows[r]);
                    dts.push(ctx.t_query - e.t);
                    edge_rows.push(match e.edge {
                        EdgeRef::Original(ev) => orig_rows[&ev],
                        EdgeRef::Generated(g) => n_orig + g,
                    });
                    refs.push(e.edge);
                }
                offsets.push(nbr_rows.len());
            }
            let n_edges = nbr_rows.len();
            let qz = tape.gather_rows(z, &tgt_rows);
            let t0 = self.te.forward(tape, store, &vec![0.0; tg.len()]);
            let query = tape.concat_cols(&[qz, t0]);

            let mut gate = None;
            let mut eib = tape.constant(Tensor::scalar(0.0));
            let mut retained = n_edges;
            let keys = if n_edges > 0 {
                let kz = tape.gather_rows(z, &nbr_rows);
                let kt = self.te.forward(tape, store, &dts);
                let ke = tape.gather_rows(edge_table, &edge_rows);
                let keys = tape.concat_cols(&[kz, kt, ke]);
                if let Some(fc) = opts.filter {
                    let oz = tape.gather_rows(z, &own_rows);
                    let input = tape.concat_cols(&[oz, kz, kt, ke]);
                    let pi = layer.retention.forward(tape, store, input);
                    let mut frng = rng.child(100 + l as u64);
                    let lg = filter::gate_edges(tape, pi, fc, &mut frng, opts.mode);
                    eib = filter::eib_loss(tape, pi, fc.pi0);
                    retained = lg.hard.iter().filter(|&&h| h).count();
                    if opts.record_gates {
                        let pis = tape.value(pi).data();
                        gates_out.extend(refs.iter().enumerate().map(|(i, &edge)| EdgeGate {
                            edge,
                            layer: l,
                            pi: pis[i],
                            relaxed: lg.relaxed[i],
                            hard: lg.hard[i],
                        }));
                    }
                    gate = Some(lg.gate);
                }
                keys
            } else {
                tape.constant(Tensor::zeros_matrix(0, k + self.cfg.time_dim + ew))
            };
            let attn = layer.attn.forward(tape, store, query, keys, keys, &offsets, gate);
            let merged = tape.concat_cols(&[attn, qz]);
            let h = layer.merge.forward(tape, store, merged);
            let h = tape.relu(h);
            let out = layer.head.forward(tape, store, h);
            let mu = tape.slice_cols(out, 0, k);
            let ls = tape.slice_cols(out, k, k);
            let ls = tape.clamp(ls, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
            let kl = tape.kl_gaussian(mu, ls);
            let xib = tape.mean(kl);
            z = if opts.sample_z && opts.mode == Mode::Train {
                let mut zr = rng.child(200 + l as u64);
                let eps = Tensor::matrix(tg.len(), k, (0..tg.len() * k).map(|_| zr.normal()).collect());
                let eps = tape.constant(eps);
                let sd = tape.exp(ls);
                let noise = tape.mul(sd, eps);
                tape.add(mu, noise)
            } else {
                mu
            };
            index = tg.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            terms.push(LayerTerms { eib, xib, edges: n_edges, retained });
        }
        Ok(Embeddings { z, index, layers: terms, gates: gates_out })
    }

    /// Logits `[z_i ⊕ z_j] W + b` for each `(i, j)` pair.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, emb: &Embeddings, pairs: &[(usize, usize)]) -> Var {
        let a: Vec<usize> = pairs.iter().map(|(i, _)| emb.index[i]).collect();
        let b: Vec<usize> = pairs.iter().map(|(_, j)| emb.index[j]).collect();
        let za = tape.gather_rows(emb.z, &a);
        let zb = tape.gather_rows(emb.z, &b);
        let cat = tape.concat_cols(&[za, zb]);
        self.decoder.forward(tape, store, cat)
    }
}

/// `Z = μ + σ ⊙ ε` in training, `μ` in evaluation.
pub fn embed(mu: &[f64], log_sigma: &[f64], rng: &mut Rng, mode: Mode) -> Result<Vec<f64>> {
    match mode {
        Mode::Train => nn::reparameterize_gaussian(mu, log_sigma, rng),
        Mode::Eval => {
            if mu.len() != log_sigma.len() {
                return Err(Error::Shape("μ and log σ lengths differ".into()));
            }
            Ok(mu.to_vec())
        }
    }
}

/// Mean Gaussian KL to the standard normal over `(μ, log σ)` pairs.
pub fn xib_loss(dists: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    if dists.is_empty() {
        return 0.0;
    }
    dists.iter().map(|(m, s)| nn::kl_gaussian_std(m, s)).sum::<f64>() / dists.len() as f64
}

/// `σ([z_i ⊕ z_j] · w + b)`.
pub fn decode_link(z_i: &[f64], z_j: &[f64], w: &[f64], bias: f64) -> Result<f64> {
    if z_i.len() != z_j.len() || w.len() != z_i.len() + z_j.len() {
        return Err(Error::Shape(format!(
            "decoder expects 2·{} weights, got {} for widths {} and {}",
            z_i.len(),
            w.len(),
            z_i.len(),
            z_j.len()
        )));
    }
    let s: f64 = z_i.iter().chain(z_j).zip(w).map(|(a, b)| a * b).sum::<f64>() + bias;
    Ok(crate::numerics::tape::sigmoid(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_link_values() {
        assert!((decode_link(&[1.0], &[0.0], &[2.0, -1.0], 0.0).unwrap() - 0.880797).abs() < 1e-6);
        assert_eq!(decode_link(&[0.3, 1.0], &[2.0, -1.0], &[0.0; 4], 0.0).unwrap(), 0.5);
        let a = decode_link(&[1.0], &[0.0], &[2.0, -1.0], 0.0).unwrap();
        let b = decode_link(&[0.0], &[1.0], &[2.0, -1.0], 0.0).unwrap();
        assert_ne!(a, b);
        assert!(decode_link(&[1.0], &[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn embed_and_xib() {
        let mut r = Rng::new(0, 0);
        assert_eq!(embed(&[1.0, 2.0], &[0.0, 0.0], &mut r, Mode::Eval).unwrap(), vec![1.0, 2.0]);
        assert_eq!(xib_loss(&[(vec![0.0], vec![0.0])]), 0.0);
        assert!((xib_loss(&[(vec![1.0], vec![0.0])]) - 0.5).abs() < 1e-15);
        assert_eq!(xib_loss(&[]), 0.0);
    }
}
