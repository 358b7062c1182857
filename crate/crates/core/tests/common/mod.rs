#![allow(dead_code)]

use gtgib_core::graph::{ingest_events, RawEvent, TemporalGraph};
use gtgib_core::numerics::Rng;
use gtgib_core::train::Experiment;

/// Random events over `nodes` nodes with `dim` edge features.
pub fn random_graph(nodes: u64, events: usize, dim: usize, seed: u64) -> TemporalGraph {
    let mut r = Rng::new(seed, 0);
    let mut t = 0.0;
    let rows = (0..events)
        .map(|_| {
            t += r.exponential(1.0);
            let a = r.below(nodes as usize) as u64;
            let mut b = r.below(nodes as usize) as u64;
            if b == a {
                b = (a + 1) % nodes;
            }
            RawEvent::new(a, b, t, (0..dim).map(|_| r.normal()).collect())
        })
        .collect();
    ingest_events(rows).unwrap()
}

/// A small model configuration that trains quickly.
pub fn small_experiment() -> Experiment {
    let mut e = Experiment::default();
    e.model.dim = 8;
    e.model.time_dim = 4;
    e.model.edge_dim = 4;
    e.train.batch_size = 20;
    e.train.epochs = 2;
    e.train.lr = 1e-3;
    e.enhancer.k_rand = 2;
    e.enhancer.hop_counts = vec![2, 2];
    e
}

/// Configuration used for end-to-end runs on the synthetic dataset.
pub fn synthetic_experiment() -> Experiment {
    let mut e = Experiment::default();
    e.model.dim = 32;
    e.model.time_dim = 16;
    e.train.lr = 1e-3;
    e
}
