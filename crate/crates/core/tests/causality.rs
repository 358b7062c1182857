//! Nothing computed for time `t` may depend on events at or after `t`.

mod common;

use gtgib_core::backbone::{memory_update, BatchContext, ForwardOptions, Memory, MemoryDelta, Model, ModelConfig};
use gtgib_core::enhancer::{enhance, EnhancerConfig};
use gtgib_core::filter::FilterConfig;
use gtgib_core::graph::{ingest_events, Event, RawEvent, TemporalGraph};
use gtgib_core::numerics::{ParamStore, Rng, Tape};
use gtgib_core::train::Trainer;
use gtgib_core::{Execution, Mode};

fn rows(g: &TemporalGraph) -> Vec<RawEvent> {
    g.events()
        .iter()
        .map(|e| RawEvent::new(e.src as u64, e.dst as u64, e.t, e.features.clone()))
        .collect()
}

fn embeddings_at(g: &TemporalGraph, t: f64, mode: Mode) -> Vec<f64> {
    let cfg = ModelConfig { dim: 8, time_dim: 4, edge_dim: 4, layers: 2, ..Default::default() };
    let mut store = ParamStore::new();
    let model = Model::new(&cfg, g.dim_node(), g.dim_edge(), &mut store, &mut Rng::new(0, 0)).unwrap();
    let mut mem = Memory::new(g.n_nodes(), cfg.dim);
    let past: Vec<&Event> = g.events().iter().filter(|e| e.t < t).collect();
    memory_update(&mut mem, &past, &model.updater, &model.te, &store).unwrap();

    let targets: Vec<usize> = (0..g.n_nodes()).collect();
    let enh = EnhancerConfig { k_rand: 3, hop_counts: vec![2, 2], hop_fanout: 0 };
    let rng = Rng::new(9, 1);
    let view = enhance(g, &targets, t, &enh, &rng.child(0), Execution::Sequential).unwrap();
    let mut tape = Tape::default();
    let generated = (!view.is_empty()).then(|| model.generator.features(&mut tape, &store, &model.te, g, &view));
    let delta = MemoryDelta::default();
    let ctx = BatchContext { graph: g, view: &view, generated, memory: &mem, delta: &delta, t_query: t };
    let filter = FilterConfig::default();
    let opts = ForwardOptions { mode, filter: Some(&filter), sample_z: true, record_gates: false };
    let emb = model.embed_nodes(&mut tape, &store, &ctx, &targets, &opts, &rng.child(1)).unwrap();
    tape.value(emb.z).data().to_vec()
}

#[test]
fn future_events_do_not_change_embeddings() {
    let g = common::random_graph(12, 80, 4, 3);
    let t = g.events()[50].t;
    // perturb features of every event at or after t and append new ones
    let mut r = rows(&g);
    for row in r.iter_mut().filter(|row| row.t >= t) {
        row.features.iter_mut().for_each(|x| *x += 10.0);
    }
    r.push(RawEvent::new(0, 1, t, vec![1.0; 4]));
    r.push(RawEvent::new(2, 3, t + 100.0, vec![-1.0; 4]));
    let g2 = ingest_events(r).unwrap();
    assert_eq!(g.n_nodes(), g2.n_nodes());
    for mode in [Mode::Train, Mode::Eval] {
        let a = embeddings_at(&g, t, mode);
        let b = embeddings_at(&g2, t, mode);
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn validation_scores_ignore_the_test_range() {
    let g = common::random_graph(15, 300, 2, 8);
    let exp = common::small_experiment();
    let mut t1 = Trainer::new(&g, exp.clone()).unwrap();
    let test_start = t1.split.test.start;
    let mut r = rows(&g);
    for row in &mut r[test_start..] {
        row.features.iter_mut().for_each(|x| *x = -*x);
    }
    let g2 = ingest_events(r).unwrap();
    let mut t2 = Trainer::new(&g2, exp).unwrap();
    t1.train_epoch(0).unwrap();
    t2.train_epoch(0).unwrap();
    let score = |t: &Trainer| {
        let mut mem = t.memory.clone();
        let mut pending = Vec::new();
        t.score_range(&t.store, &mut mem, &mut pending, t.split.val.clone(), 0, None).unwrap()
    };
    assert_eq!(score(&t1), score(&t2));
}
