//! Structure enhancement: global random and local hop-based candidate
//! sampling around focal nodes, plus synthesis of the candidate edges'
//! timestamps and features. Also a Monte-Carlo check of the hit-probability
//! bound for the mixed sampler.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{Event, Provenance, RawEvent, TemporalGraph};
use crate::numerics::nn::{Mlp, TimeEncoder};
use crate::numerics::{ParamStore, Rng, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancerConfig {
    pub k_rand: usize,
    pub hop_counts: Vec<usize>,
    /// Most recent events followed per node while expanding hops; 0 = all.
    pub hop_fanout: usize,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        EnhancerConfig {
            k_rand: 10,
            hop_counts: vec![20, 30],
            hop_fanout: 0,
        }
    }
}

impl EnhancerConfig {
    pub fn disabled() -> Self {
        EnhancerConfig { k_rand: 0, hop_counts: vec![], hop_fanout: 0 }
    }

    pub fn is_enabled(&self) -> bool {
        self.k_rand > 0 || self.hop_counts.iter().any(|&c| c > 0)
    }

    pub fn max_per_node(&self) -> usize {
        self.k_rand + self.hop_counts.iter().sum::<usize>()
    }
}

/// A synthesized candidate edge. Features are produced on the tape by
/// [`EdgeGenerator`], so only the topology and timestamp live here.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratedEdge {
    pub src: usize,
    pub dst: usize,
    pub t: f64,
    /// Query time the edge was generated for.
    pub t_query: f64,
}

/// Batch-local augmentation of a base graph.
#[derive(Clone, Debug, Default)]
pub struct AugmentedView {
    pub edges: Vec<GeneratedEdge>,
    /// Per focal node: `(node, range into edges)`.
    pub focal: Vec<(usize, std::ops::Range<usize>)>,
    incident: HashMap<usize, Vec<usize>>,
}

impl AugmentedView {
    fn new(edges: Vec<GeneratedEdge>, focal: Vec<(usize, std::ops::Range<usize>)>) -> Self {
        let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
        for (k, e) in edges.iter().enumerate() {
            incident.entry(e.src).or_default().push(k);
            if e.dst != e.src {
                incident.entry(e.dst).or_default().push(k);
            }
        }
        AugmentedView { edges, focal, incident }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Generated edges touching `v` with timestamp strictly before `t`.
    pub fn incident_before(&self, v: usize, t: f64) -> impl Iterator<Item = usize> + '_ {
        self.incident
            .get(&v)
            .into_iter()
            .flatten()
            .copied()
            .filter(move |&k| self.edges[k].t < t)
    }

    pub fn to_events(&self, features: &Tensor) -> Vec<Event> {
        self.edges
            .iter()
            .enumerate()
            .map(|(k, e)| Event {
                src: e.src,
                dst: e.dst,
                t: e.t,
                features: features.row_slice(k).to_vec(),
                provenance: Provenance::Generated,
            })
            .collect()
    }
}

/// Up to `k` distinct nodes, uniformly without replacement, among nodes
/// active at or before `t` other than `i`.
pub fn sample_random_candidates(g: &TemporalGraph, i: usize, t: f64, k: usize, rng: &mut Rng) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let pool: Vec<usize> = g.active_nodes(t).iter().copied().filter(|&v| v != i).collect();
    rng.sample_indices(pool.len(), k).into_iter().map(|x| pool[x]).collect()
}

/// Samples `hop_counts[l]` nodes from each hop set of `i`'s augmented
/// neighborhood, where `random_links` act as extra hop-1 links formed at `t`.
/// Deeper hops exclude direct neighbors, and no node is picked twice.
pub fn sample_hop_candidates(
    g: &TemporalGraph,
    i: usize,
    t: f64,
    hop_counts: &[usize],
    random_links: &[usize],
    fanout: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let depth = hop_counts.iter().rposition(|&c| c > 0).map_or(0, |p| p + 1);
    if depth == 0 {
        return Ok(vec![Vec::new(); hop_counts.len()]);
    }
    let fanout = if fanout == 0 { usize::MAX } else { fanout };
    let mut hop1: BTreeMap<usize, f64> = BTreeMap::new();
    for e in g.before(i, t)?.iter().rev().take(fanout) {
        if e.node != i {
            let s = hop1.entry(e.node).or_insert(f64::NEG_INFINITY);
            *s = s.max(e.t);
        }
    }
    for &j in random_links {
        hop1.insert(j, t);
    }
    let mut sets: Vec<BTreeSet<usize>> = vec![hop1.keys().copied().collect()];
    if depth > 1 {
        sets.extend(g.expand_hops(i, hop1, depth - 1, fanout));
    }
    let direct = sets[0].clone();
    let mut taken: BTreeSet<usize> = random_links.iter().copied().collect();
    let mut out = vec![Vec::new(); hop_counts.len()];
    for (l, &count) in hop_counts.iter().enumerate().take(depth) {
        let pool: Vec<usize> = sets[l]
            .iter()
            .copied()
            .filter(|v| !taken.contains(v) && (l == 0 || !direct.contains(v)))
            .collect();
        let picked: Vec<usize> = rng.sample_indices(pool.len(), count).into_iter().map(|x| pool[x]).collect();
        taken.extend(&picked);
        out[l] = picked;
    }
    Ok(out)
}

/// Timestamp for a generated edge, avoiding an exact copy of an existing
/// `(i, j, t)` event.
fn draw_timestamp(g: &TemporalGraph, i: usize, j: usize, t: f64, rng: &mut Rng) -> f64 {
    for _ in 0..16 {
        let tn = rng.uniform() * t;
        let clash = g
            .incident(i)
            .map(|es| es.iter().any(|e| e.node == j && e.t == tn))
            .unwrap_or(false);
        if !clash {
            return tn;
        }
    }
    rng.uniform() * t
}

/// Runs random, then hop-based sampling, then timestamp generation for every
/// distinct focal node. Each node draws from its own substream, so the result
/// is independent of execution order.
pub fn enhance(
    g: &TemporalGraph,
    focal: &[usize],
    t: f64,
    cfg: &EnhancerConfig,
    rng: &Rng,
    exec: Execution,
) -> Result<AugmentedView> {
    if !cfg.is_enabled() {
        return Ok(AugmentedView::empty());
    }
    let nodes: Vec<usize> = focal.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let per_node: Vec<Result<Vec<GeneratedEdge>>> = exec.map(nodes.len(), |k| {
        let i = nodes[k];
        let mut r = rng.child(i as u64);
        let rand = sample_random_candidates(g, i, t, cfg.k_rand, &mut r);
        let hops = sample_hop_candidates(g, i, t, &cfg.hop_counts, &rand, cfg.hop_fanout, &mut r)?;
        Ok(rand
            .iter()
            .chain(hops.iter().flatten())
            .map(|&j| GeneratedEdge { src: i, dst: j, t: draw_timestamp(g, i, j, t, &mut r), t_query: t })
            .collect())
    });
    let mut edges = Vec::new();
    let mut ranges = Vec::with_capacity(nodes.len());
    for (k, r) in per_node.into_iter().enumerate() {
        let start = edges.len();
        edges.extend(r?);
        ranges.push((nodes[k], start..edges.len()));
    }
    Ok(AugmentedView::new(edges, ranges))
}

/// Feature synthesis `MLP(x_i ⊕ x_j ⊕ TE(t_q − t_new))` for generated edges.
#[derive(Clone, Debug)]
pub struct EdgeGenerator {
    pub mlp: Mlp,
}

impl EdgeGenerator {
    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Features for every edge in `view`: `|edges| × output_dim`.
    pub fn features(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        te: &TimeEncoder,
        g: &TemporalGraph,
        view: &AugmentedView,
    ) -> Var {
        let d = g.dim_node();
        let n = view.edges.len();
        let mut x = Vec::with_capacity(n * 2 * d);
        for e in &view.edges {
            x.extend_from_slice(g.node_features().row_slice(e.src));
            x.extend_from_slice(g.node_features().row_slice(e.dst));
        }
        let dts: Vec<f64> = view.edges.iter().map(|e| e.t_query - e.t).collect();
        let enc = te.forward(tape, store, &dts);
        let input = if d > 0 {
            let xv = tape.constant(Tensor::matrix(n, 2 * d, x));
            tape.concat_cols(&[xv, enc])
        } else {
            enc
        };
        self.mlp.forward(tape, store, input)
    }
}

/// One generated event with features computed from the current parameters.
pub fn generate_edge(
    g: &TemporalGraph,
    i: usize,
    j: usize,
    t: f64,
    rng: &mut Rng,
    gen: &EdgeGenerator,
    te: &TimeEncoder,
    store: &ParamStore,
) -> Result<Event> {
    if i == j {
        return Err(Error::InvalidArgument("generated edge endpoints must differ".into()));
    }
    g.incident(i)?;
    g.incident(j)?;
    let tn = draw_timestamp(g, i, j, t, rng);
    let view = AugmentedView::new(vec![GeneratedEdge { src: i, dst: j, t: tn, t_query: t }], vec![]);
    let mut tape = Tape::default();
    let f = gen.features(&mut tape, store, te, g, &view);
    Ok(view.to_events(tape.value(f)).remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitBoundConfig {
    pub n_nodes: usize,
    /// Sizes of the planted hop sets around the focal node.
    pub hop_sizes: Vec<usize>,
    /// Truth nodes planted inside each hop set.
    pub truth_per_hop: Vec<usize>,
    /// Truth nodes planted outside all hop sets.
    pub truth_outside: usize,
    /// Probability of a global uniform draw.
    pub mix_weight: f64,
    /// Probability of each hop given a local draw.
    pub hop_weights: Vec<f64>,
    pub k_values: Vec<usize>,
    pub trials: usize,
    pub delta: f64,
    pub seed: u64,
}

impl Default for HitBoundConfig {
    fn default() -> Self {
        HitBoundConfig {
            n_nodes: 200,
            hop_sizes: vec![20, 40],
            truth_per_hop: vec![4, 4],
            truth_outside: 2,
            mix_weight: 0.3,
            hop_weights: vec![0.5, 0.5],
            k_values: vec![1, 5, 10, 20, 30, 50],
            trials: 10_000,
            delta: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitRow {
    pub k: usize,
    pub empirical_p: f64,
    pub sigma: f64,
    pub bound: f64,
    pub threshold_flag: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitBoundReport {
    pub c: f64,
    pub k_star: Option<usize>,
    pub universe: usize,
    pub truth: usize,
    pub degenerate: bool,
    pub rows: Vec<HitRow>,
}

impl HitBoundReport {
    pub fn all_hold(&self) -> bool {
        !self.degenerate && self.rows.iter().all(|r| r.holds)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "k,empirical_p,bound,threshold_flag")?;
        for r in &self.rows {
            writeln!(w, "{},{:.6},{:.6},{}", r.k, r.empirical_p, r.bound, r.threshold_flag)?;
        }
        Ok(())
    }
}

/// `1 − exp(−c·k)`.
pub fn hit_bound(c: f64, k: usize) -> f64 {
    1.0 - (-c * k as f64).exp()
}

/// `⌈ln(1/δ) / c⌉`, or `None` when `c = 0`.
pub fn hit_threshold(c: f64, delta: f64) -> Option<usize> {
    (c > 0.0).then(|| ((1.0 / delta).ln() / c).ceil() as usize)
}

/// Plants hop sets and truth nodes in a small graph, then estimates the
/// probability that `k` draws of the mixed sampler find a truth node.
/// `k*` is always appended to the evaluated `k` values.
pub fn verify_hit_bound(cfg: &HitBoundConfig, exec: Execution) -> Result<HitBoundReport> {
    let layers = cfg.hop_sizes.len();
    if cfg.truth_per_hop.len() != layers || cfg.hop_weights.len() != layers {
        return Err(Error::InvalidArgument("hop sizes, truth counts and weights must align".into()));
    }
    if !(0.0..=1.0).contains(&cfg.mix_weight) || cfg.hop_weights.iter().any(|&b| b < 0.0) {
        return Err(Error::InvalidArgument("sampler weights must be probabilities".into()));
    }
    let wsum: f64 = cfg.hop_weights.iter().sum();
    if cfg.mix_weight < 1.0 && (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("hop weights must sum to 1".into()));
    }
    let planted: usize = cfg.hop_sizes.iter().sum();
    if planted + 1 > cfg.n_nodes {
        return Err(Error::InvalidArgument("hop sets exceed the node count".into()));
    }
    if cfg.truth_per_hop.iter().zip(&cfg.hop_sizes).any(|(t, s)| t > s) {
        return Err(Error::InvalidArgument("more truth nodes than hop members".into()));
    }

    // focal node 0; hop-l nodes follow in blocks, each hop-(l+1) node hangs off a
    // hop-l node through an earlier event so the causal expansion reaches it.
    let focal = 0usize;
    let mut rows = Vec::new();
    let mut blocks = Vec::new();
    let mut next = 1usize;
    for (l, &size) in cfg.hop_sizes.iter().enumerate() {
        let block: Vec<usize> = (next..next + size).collect();
        next += size;
        let t = (layers - l) as f64;
        for (x, &v) in block.iter().enumerate() {
            let parent = if l == 0 {
                focal
            } else {
                let prev: &Vec<usize> = &blocks[l - 1];
                if prev.is_empty() {
                    return Err(Error::InvalidArgument("an empty hop cannot feed a deeper one".into()));
                }
                prev[x % prev.len()]
            };
            rows.push(RawEvent::new(parent as u64, v as u64, t, vec![]));
        }
        blocks.push(block);
    }
    // background nodes interact among themselves so every node is active
    for v in next..cfg.n_nodes {
        let u = if v + 1 < cfg.n_nodes { v + 1 } else { next.min(v.saturating_sub(1)) };
        if u != v {
            rows.push(RawEvent::new(v as u64, u as u64, 0.5, vec![]));
        }
    }
    let g = crate::graph::ingest_events(rows)?;
    let t_query = layers as f64 + 1.0;
    let hop_sets = if layers > 0 {
        g.khop_neighbors(focal, t_query, layers)?
    } else {
        vec![]
    };
    // deeper sets exclude nodes already reachable at a shallower hop
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let hop_sets: Vec<Vec<usize>> = hop_sets
        .into_iter()
        .map(|s| {
            let v: Vec<usize> = s.into_iter().filter(|x| !seen.contains(x)).collect();
            seen.extend(&v);
            v
        })
        .collect();
    let universe: Vec<usize> = (0..g.n_nodes()).filter(|&v| v != focal).collect();

    let mut prng = Rng::derive(cfg.seed, &[0xb0b]);
    let mut truth: BTreeSet<usize> = BTreeSet::new();
    for (l, set) in hop_sets.iter().enumerate() {
        for x in prng.sample_indices(set.len(), cfg.truth_per_hop[l]) {
            truth.insert(set[x]);
        }
    }
    let outside: Vec<usize> = universe.iter().copied().filter(|v| !seen.contains(v)).collect();
    for x in prng.sample_indices(outside.len(), cfg.truth_outside) {
        truth.insert(outside[x]);
    }
    if truth.is_empty() {
        return Err(Error::Degenerate("no planted truth edges".into()));
    }

    let mut c = cfg.mix_weight * truth.len() as f64 / universe.len() as f64;
    for (l, set) in hop_sets.iter().enumerate() {
        if !set.is_empty() {
            let hits = set.iter().filter(|v| truth.contains(v)).count();
            c += (1.0 - cfg.mix_weight) * cfg.hop_weights[l] * hits as f64 / set.len() as f64;
        }
    }
    let k_star = hit_threshold(c, cfg.delta);
    if k_star.is_none() {
        return Ok(HitBoundReport {
            c,
            k_star,
            universe: universe.len(),
            truth: truth.len(),
            degenerate: true,
            rows: vec![],
        });
    }
    let mut ks = cfg.k_values.clone();
    if let Some(ks_) = k_star {
        if !ks.contains(&ks_) {
            ks.push(ks_);
        }
    }
    let draw = |r: &mut Rng| -> bool {
        let v = if r.uniform() < cfg.mix_weight || hop_sets.iter().all(|s| s.is_empty()) {
            universe[r.below(universe.len())]
        } else {
            let mut u = r.uniform() * wsum;
            let mut l = 0;
            while l + 1 < layers && u >= cfg.hop_weights[l] {
                u -= cfg.hop_weights[l];
                l += 1;
            }
            let set = &hop_sets[l];
            if set.is_empty() {
                return false;
            }
            set[r.below(set.len())]
        };
        truth.contains(&v)
    };
    let rows = ks
        .iter()
        .map(|&k| {
            let hits: usize = exec
                .map(cfg.trials, |trial| {
                    let mut r = Rng::derive(cfg.seed, &[k as u64, trial as u64]);
                    (0..k).any(|_| draw(&mut r)) as usize
                })
                .into_iter()
                .sum();
            let p = if cfg.trials == 0 { 0.0 } else { hits as f64 / cfg.trials as f64 };
            let sigma = (p * (1.0 - p) / cfg.trials.max(1) as f64).sqrt();
            let bound = hit_bound(c, k);
            let flag = k_star.is_some_and(|s| k >= s);
            let mut holds = p >= bound - 3.0 * sigma;
            if flag {
                holds &= p >= (1.0 - cfg.delta) - 3.0 * sigma;
            }
            HitRow { k, empirical_p: p, sigma, bound, threshold_flag: flag, holds }
        })
        .collect();
    Ok(HitBoundReport {
        c,
        k_star,
        universe: universe.len(),
        truth: truth.len(),
        degenerate: false,
        rows,
    })
}
