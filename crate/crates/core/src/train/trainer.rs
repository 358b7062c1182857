use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, EpochMetrics, MetricsReport};
use super::negative::negative_sample;
use crate::backbone::{memory_update, BatchContext, ForwardOptions, Memory, MemoryDelta, Model, ModelConfig};
use crate::enhancer::{enhance, EnhancerConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::{EdgeGate, FilterConfig};
use crate::graph::{EvalMode, Event, Split, SplitSpec, TemporalGraph};
use crate::numerics::{AdamConfig, ParamStore, Rng, Tape, Var};
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub negatives: usize,
    pub eval_negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Evaluate every this many epochs (the last epoch is always evaluated).
    pub eval_every: usize,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            negatives: 5,
            eval_negatives: 1,
            epochs: 10,
            lr: 1e-4,
            seed: 0,
            eval_every: 1,
            threads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1e-5 }
    }
}

/// Everything that determines a training run apart from the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub filter: FilterConfig,
    pub enhancer: EnhancerConfig,
    pub loss: LossWeights,
    pub split: SplitSpec,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.batch_size == 0 || t.negatives == 0 || t.eval_negatives == 0 {
            return Err(Error::InvalidArgument("batch size and negative counts must be positive".into()));
        }
        if !(t.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.loss.alpha < 0.0 || self.loss.beta < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        self.model.validate()?;
        self.filter.validate()?;
        self.split.validate()
    }

    /// Weights actually applied: with the filter disabled both terms are off.
    pub fn effective_weights(&self) -> LossWeights {
        if self.filter.enabled {
            self.loss
        } else {
            LossWeights { alpha: 0.0, beta: 0.0 }
        }
    }
}

// substream tags
const INIT: u64 = 1;
const TRAIN: u64 = 2;
const EVAL: u64 = 3;
const NEG: u64 = 10;
const ENH: u64 = 11;
const MODEL: u64 = 12;

/// Loss components of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub loss: f64,
    pub ce: f64,
    pub eib: f64,
    pub xib: f64,
}

struct BatchOut {
    tape: Tape,
    delta: MemoryDelta,
    applied: usize,
    loss: Var,
    parts: LossParts,
    pos: Vec<f64>,
    neg: Vec<Vec<f64>>,
    gates: Vec<EdgeGate>,
}

/// Scores for one evaluation positive and its negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub event: usize,
    pub positive: f64,
    pub negatives: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub val_trans: Option<f64>,
    pub val_ind: Option<f64>,
    pub test_trans: Option<f64>,
    pub test_ind: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Val,
    Test,
}

pub struct FitResult {
    pub report: MetricsReport,
    pub store: ParamStore,
    pub memory: Memory,
}

pub struct Trainer<'g> {
    pub exp: Experiment,
    pub graph: &'g TemporalGraph,
    pub split: Split,
    pub train_graph: TemporalGraph,
    pub model: Model,
    pub store: ParamStore,
    /// Memory at the end of the last training epoch.
    pub memory: Memory,
    pub exec: Execution,
    train_dst: Vec<usize>,
    eval_dst: Vec<usize>,
}

fn destinations(events: &[Event]) -> Vec<usize> {
    let set: std::collections::BTreeSet<usize> = events.iter().map(|e| e.dst).collect();
    set.into_iter().collect()
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g TemporalGraph, exp: Experiment) -> Result<Self> {
        exp.validate()?;
        let split = Split::new(graph, &exp.split)?;
        let train_graph = graph.subgraph(&split.train_events);
        let mut store = ParamStore::new();
        let mut rng = Rng::derive(exp.train.seed, &[INIT]);
        let model = Model::new(&exp.model, graph.dim_node(), graph.dim_edge(), &mut store, &mut rng)?;
        let memory = Memory::new(graph.n_nodes(), exp.model.dim);
        let exec = Execution::from_threads(exp.train.threads);
        Ok(Trainer {
            train_dst: destinations(train_graph.events()),
            eval_dst: destinations(graph.events()),
            split,
            train_graph,
            model,
            store,
            memory,
            exec,
            exp,
            graph,
        })
    }

    fn options(&self, mode: Mode, record_gates: bool) -> ForwardOptions<'_> {
        let on = self.exp.filter.enabled;
        ForwardOptions {
            mode,
            filter: on.then_some(&self.exp.filter),
            sample_z: on,
            record_gates,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_batch(
        &self,
        store: &ParamStore,
        graph: &TemporalGraph,
        mem: &Memory,
        pending: &[Event],
        batch: &[Event],
        candidates: &[usize],
        negatives: usize,
        mode: Mode,
        rng: &Rng,
        record_gates: bool,
    ) -> Result<BatchOut> {
        let t_query = batch[0].t;
        let mut tape = Tape::new(self.exec);
        let applied = pending.partition_point(|e| e.t < t_query);
        let delta = if self.exp.model.use_memory && applied > 0 {
            let refs: Vec<&Event> = pending[..applied].iter().collect();
            self.model.updater.apply(&mut tape, store, &self.model.te, mem, &refs)?
        } else {
            MemoryDelta::default()
        };

        let positives: Vec<(usize, usize)> = batch.iter().map(|e| (e.src, e.dst)).collect();
        let negs = negative_sample(&positives, candidates, &mut rng.child(NEG), negatives);
        let mut focal = Vec::with_capacity(positives.len() * (2 + negatives));
        for (p, n) in positives.iter().zip(&negs) {
            focal.push(p.0);
            focal.push(p.1);
            focal.extend(n);
        }
        let view = enhance(graph, &focal, t_query, &self.exp.enhancer, &rng.child(ENH), self.exec)?;
        let generated = (!view.is_empty())
            .then(|| self.model.generator.features(&mut tape, store, &self.model.te, graph, &view));
        let ctx = BatchContext { graph, view: &view, generated, memory: mem, delta: &delta, t_query };
        let opts = self.options(mode, record_gates);
        let emb = self.model.embed_nodes(&mut tape, store, &ctx, &focal, &opts, &rng.child(MODEL))?;

        let neg_pairs: Vec<(usize, usize)> = positives
            .iter()
            .zip(&negs)
            .flat_map(|(&(i, _), n)| n.iter().map(move |&j| (i, j)))
            .collect();
        let pos_logits = self.model.decode(&mut tape, store, &emb, &positives);
        let neg_logits = self.model.decode(&mut tape, store, &emb, &neg_pairs);
        let lp = tape.bce_with_logits(pos_logits, vec![1.0; positives.len()]);
        let ln = tape.bce_with_logits(neg_logits, vec![0.0; neg_pairs.len()]);
        let ce = tape.add(lp, ln);
        let ce = tape.scale(ce, 0.5);
        let w = self.exp.effective_weights();
        let mut loss = ce;
        let (mut eib, mut xib) = (0.0, 0.0);
        for term in &emb.layers {
            eib += tape.scalar(term.eib);
            xib += tape.scalar(term.xib);
            let a = tape.scale(term.eib, w.alpha);
            let b = tape.scale(term.xib, w.beta);
            loss = tape.add(loss, a);
            loss = tape.add(loss, b);
        }
        let parts = LossParts { loss: tape.scalar(loss), ce: tape.scalar(ce), eib, xib };
        let pos = tape.value(pos_logits).data().to_vec();
        let nv = tape.value(neg_logits).data();
        let neg = (0..positives.len())
            .map(|i| nv[i * negatives..(i + 1) * negatives].to_vec())
            .collect();
        Ok(BatchOut { tape, delta, applied, loss, parts, pos, neg, gates: emb.gates })
    }

    /// One pass over the training events; memory starts from zero.
    pub fn train_epoch(&mut self, epoch: usize) -> Result<LossParts> {
        self.pass(epoch, true)
    }

    /// Mean training loss of one pass with the current parameters, without
    /// updating them.
    pub fn epoch_loss(&mut self, epoch: usize) -> Result<LossParts> {
        let memory = self.memory.clone();
        let out = self.pass(epoch, false);
        self.memory = memory;
        out
    }

    fn pass(&mut self, epoch: usize, update: bool) -> Result<LossParts> {
        let adam = AdamConfig { lr: self.exp.train.lr, ..Default::default() };
        let mut mem = Memory::new(self.graph.n_nodes(), self.exp.model.dim);
        let mut pending: Vec<Event> = Vec::new();
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        let bs = self.exp.train.batch_size;
        let events = self.train_graph.events().to_vec();
        for (b, batch) in events.chunks(bs).enumerate() {
            let rng = Rng::derive(self.exp.train.seed, &[TRAIN, epoch as u64, b as u64]);
            let out = self.run_batch(
                &self.store,
                &self.train_graph,
                &mem,
                &pending,
                batch,
                &self.train_dst,
                self.exp.train.negatives,
                Mode::Train,
                &rng,
                false,
            )?;
            let p = out.parts;
            if ![p.loss, p.ce, p.eib, p.xib].iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: loss {} (ce {}, eib {}, xib {})",
                    p.loss, p.ce, p.eib, p.xib
                )));
            }
            if update {
                let grads = out.tape.backward(out.loss);
                self.store.absorb(&out.tape, &grads);
                self.store.adam_step(&adam)?;
            }
            mem.commit(&out.tape, &out.delta);
            pending.drain(..out.applied);
            pending.extend_from_slice(batch);
            sum.loss += p.loss;
            sum.ce += p.ce;
            sum.eib += p.eib;
            sum.xib += p.xib;
            batches += 1;
        }
        self.flush(&mut mem, &pending)?;
        self.memory = mem;
        let n = batches.max(1) as f64;
        Ok(LossParts { loss: sum.loss / n, ce: sum.ce / n, eib: sum.eib / n, xib: sum.xib / n })
    }

    fn flush(&self, mem: &mut Memory, pending: &[Event]) -> Result<()> {
        if self.exp.model.use_memory && !pending.is_empty() {
            let refs: Vec<&Event> = pending.iter().collect();
            memory_update(mem, &refs, &self.model.updater, &self.model.te, &self.store)?;
        }
        Ok(())
    }

    /// Scores every event of `range` chronologically, continuing from `mem`
    /// and `pending`, which are advanced past the range.
    pub fn score_range(
        &self,
        store: &ParamStore,
        mem: &mut Memory,
        pending: &mut Vec<Event>,
        range: Range<usize>,
        tag: u64,
        mut gates: Option<&mut Vec<EdgeGate>>,
    ) -> Result<Vec<Scored>> {
        let events = &self.graph.events()[range.clone()];
        let mut out = Vec::with_capacity(events.len());
        for (b, batch) in events.chunks(self.exp.train.batch_size).enumerate() {
            let rng = Rng::derive(self.exp.train.seed, &[EVAL, tag, b as u64]);
            let res = self.run_batch(
                store,
                self.graph,
                mem,
                pending,
                batch,
                &self.eval_dst,
                self.exp.train.eval_negatives,
                Mode::Eval,
                &rng,
                gates.is_some(),
            )?;
            mem.commit(&res.tape, &res.delta);
            pending.drain(..res.applied);
            pending.extend_from_slice(batch);
            let start = range.start + b * self.exp.train.batch_size;
            for (i, (p, n)) in res.pos.into_iter().zip(res.neg).enumerate() {
                out.push(Scored { event: start + i, positive: p, negatives: n });
            }
            if let Some(g) = gates.as_deref_mut() {
                g.extend(res.gates);
            }
        }
        Ok(out)
    }

    fn ap_for(&self, scored: &[Scored], mode: EvalMode) -> Result<f64> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for s in scored.iter().filter(|s| self.split.classify(self.graph, s.event) == mode) {
            scores.push(s.positive);
            labels.push(true);
            for &n in &s.negatives {
                scores.push(n);
                labels.push(false);
            }
        }
        if scores.is_empty() {
            return Err(Error::EmptyEvaluation { mode: mode.name() });
        }
        average_precision(&scores, &labels)
    }

    /// Validation and test AP for both modes using `store` and the memory
    /// at the training boundary. Modes without edges report `None`.
    pub fn evaluate_all(&self, store: &ParamStore, memory: &Memory) -> Result<EvalSummary> {
        let mut mem = memory.clone();
        let mut pending = Vec::new();
        let val = self.score_range(store, &mut mem, &mut pending, self.split.val.clone(), 0, None)?;
        let test = self.score_range(store, &mut mem, &mut pending, self.split.test.clone(), 1, None)?;
        let opt = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::EmptyEvaluation { .. }) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(EvalSummary {
            val_trans: opt(self.ap_for(&val, EvalMode::Transductive))?,
            val_ind: opt(self.ap_for(&val, EvalMode::Inductive))?,
            test_trans: opt(self.ap_for(&test, EvalMode::Transductive))?,
            test_ind: opt(self.ap_for(&test, EvalMode::Inductive))?,
        })
    }

    /// AP on one split part and mode with the current parameters.
    pub fn evaluate(&self, part: Part, mode: EvalMode) -> Result<f64> {
        let mut mem = self.memory.clone();
        let mut pending = Vec::new();
        let val = self.score_range(&self.store, &mut mem, &mut pending, self.split.val.clone(), 0, None)?;
        let scored = match part {
            Part::Val => val,
            Part::Test => self.score_range(&self.store, &mut mem, &mut pending, self.split.test.clone(), 1, None)?,
        };
        self.ap_for(&scored, mode)
    }

    /// Trains for the configured epochs, selecting the epoch with the best
    /// validation AP (transductive, falling back to inductive).
    pub fn fit(&mut self) -> Result<FitResult> {
        let epochs = self.exp.train.epochs;
        let every = self.exp.train.eval_every.max(1);
        let mut report = MetricsReport { seed: self.exp.train.seed, epochs: Vec::new(), best_epoch: None };
        let mut best: Option<(f64, ParamStore, Memory)> = None;
        for epoch in 0..epochs {
            let start = Instant::now();
            let parts = self.train_epoch(epoch)?;
            let mut m = EpochMetrics {
                epoch,
                loss: parts.loss,
                ce: parts.ce,
                eib: parts.eib,
                xib: parts.xib,
                ap_val_trans: None,
                ap_val_ind: None,
                ap_test_trans: None,
                ap_test_ind: None,
                seconds: 0.0,
            };
            if (epoch + 1) % every == 0 || epoch + 1 == epochs {
                let s = self.evaluate_all(&self.store, &self.memory)?;
                m.ap_val_trans = s.val_trans;
                m.ap_val_ind = s.val_ind;
                m.ap_test_trans = s.test_trans;
                m.ap_test_ind = s.test_ind;
                if let Some(v) = s.val_trans.or(s.val_ind) {
                    if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                        best = Some((v, self.store.clone(), self.memory.clone()));
                        report.best_epoch = Some(epoch);
                    }
                }
            }
            m.seconds = start.elapsed().as_secs_f64();
            report.epochs.push(m);
        }
        let (store, memory) = match best {
            Some((_, s, m)) => (s, m),
            None => (self.store.clone(), self.memory.clone()),
        };
        Ok(FitResult { report, store, memory })
    }

    /// Gate records of a deterministic pass over the validation range.
    pub fn gate_dump(&self) -> Result<Vec<EdgeGate>> {
        let mut mem = self.memory.clone();
        let mut pending = Vec::new();
        let mut gates = Vec::new();
        self.score_range(&self.store, &mut mem, &mut pending, self.split.val.clone(), 0, Some(&mut gates))?;
        Ok(gates)
    }

    /// Loss of one training batch starting from empty memory, recorded on a
    /// fresh tape; used for gradient checks.
    pub fn batch_loss(&self, tape: &mut Tape, store: &ParamStore, batch: Range<usize>) -> Result<(Var, LossParts)> {
        let events = &self.train_graph.events()[batch];
        let mem = Memory::new(self.graph.n_nodes(), self.exp.model.dim);
        let rng = Rng::derive(self.exp.train.seed, &[TRAIN, u64::MAX, 0]);
        // earlier events of the same batch act as pending memory updates
        let split = events.len() / 2;
        let (history, batch) = events.split_at(split.max(1).min(events.len() - 1));
        let out = self.run_batch(
            store,
            &self.train_graph,
            &mem,
            history,
            batch,
            &self.train_dst,
            self.exp.train.negatives,
            Mode::Train,
            &rng,
            false,
        )?;
        *tape = out.tape;
        Ok((out.loss, out.parts))
    }
}
