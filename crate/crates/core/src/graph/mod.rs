//! Event storage and causal neighborhood queries.

mod io;
mod split;

pub use io::{read_jodie_csv, read_remap_csv, write_jodie_csv, write_remap_csv};
pub use split::{EvalMode, Split, SplitSpec};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Generated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub src: usize,
    pub dst: usize,
    pub t: f64,
    pub features: Vec<f64>,
    pub provenance: Provenance,
}

/// One input row before id compaction.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEvent {
    pub src: u64,
    pub dst: u64,
    pub t: f64,
    pub features: Vec<f64>,
}

impl RawEvent {
    pub fn new(src: u64, dst: u64, t: f64, features: Vec<f64>) -> Self {
        RawEvent { src, dst, t, features }
    }
}

/// An incident event as seen from one endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborEntry {
    pub node: usize,
    pub t: f64,
    pub event: usize,
}

#[derive(Clone, Debug)]
pub struct TemporalGraph {
    events: Vec<Event>,
    node_features: Tensor,
    index: Vec<Vec<NeighborEntry>>,
    dim_edge: usize,
    labels: Vec<String>,
    /// Nodes ordered by first appearance, with the matching times.
    by_first_seen: Vec<usize>,
    first_seen: Vec<f64>,
    self_loops: usize,
}

/// Builds a graph from rows with arbitrary integer ids. Ids are compacted to
/// `0..n` in ascending order of the original id; events are stably sorted by time.
pub fn ingest_events(rows: Vec<RawEvent>) -> Result<TemporalGraph> {
    let ids: BTreeSet<u64> = rows.iter().flat_map(|r| [r.src, r.dst]).collect();
    let map: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let labels = ids.iter().map(|id| id.to_string()).collect();
    let events = rows
        .into_iter()
        .map(|r| (map[&r.src], map[&r.dst], r.t, r.features))
        .collect();
    TemporalGraph::from_rows(events, labels, 0)
}

impl TemporalGraph {
    /// Builds a graph over nodes `0..labels.len()` with zero node features of width `dim_node`.
    pub fn from_rows(
        rows: Vec<(usize, usize, f64, Vec<f64>)>,
        labels: Vec<String>,
        dim_node: usize,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty);
        }
        let k = rows[0].3.len();
        let n = labels.len();
        for (row, r) in rows.iter().enumerate() {
            if !(r.2 >= 0.0) || !r.2.is_finite() {
                return Err(Error::NegativeTimestamp { row, t: r.2 });
            }
            if r.3.len() != k {
                return Err(Error::RaggedFeatures { row, expected: k, found: r.3.len() });
            }
            if r.3.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("row {row}: non-finite edge feature")));
            }
            if r.0 >= n || r.1 >= n {
                return Err(Error::UnknownNode(r.0.max(r.1)));
            }
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[a].2.total_cmp(&rows[b].2));
        let mut slots: Vec<Option<(usize, usize, f64, Vec<f64>)>> = rows.into_iter().map(Some).collect();
        let events = order
            .into_iter()
            .map(|i| {
                let (src, dst, t, features) = slots[i].take().expect("each row used once");
                Event { src, dst, t, features, provenance: Provenance::Original }
            })
            .collect();
        Ok(Self::from_sorted(events, labels, Tensor::zeros_matrix(n, dim_node), k))
    }

    fn from_sorted(events: Vec<Event>, labels: Vec<String>, node_features: Tensor, dim_edge: usize) -> Self {
        let n = labels.len();
        let mut index = vec![Vec::new(); n];
        let mut first = vec![f64::INFINITY; n];
        let mut self_loops = 0;
        for (e, ev) in events.iter().enumerate() {
            index[ev.src].push(NeighborEntry { node: ev.dst, t: ev.t, event: e });
            if ev.src != ev.dst {
                index[ev.dst].push(NeighborEntry { node: ev.src, t: ev.t, event: e });
            } else {
                self_loops += 1;
            }
            first[ev.src] = first[ev.src].min(ev.t);
            first[ev.dst] = first[ev.dst].min(ev.t);
        }
        let mut by_first_seen: Vec<usize> = (0..n).filter(|&v| first[v].is_finite()).collect();
        by_first_seen.sort_by(|&a, &b| first[a].total_cmp(&first[b]).then(a.cmp(&b)));
        let first_seen = by_first_seen.iter().map(|&v| first[v]).collect();
        TemporalGraph {
            events,
            node_features,
            index,
            dim_edge,
            labels,
            by_first_seen,
            first_seen,
            self_loops,
        }
    }

    /// Same nodes and features, restricted to the given events (in index order).
    pub fn subgraph(&self, events: &[usize]) -> TemporalGraph {
        let evs = events.iter().map(|&e| self.events[e].clone()).collect();
        Self::from_sorted(evs, self.labels.clone(), self.node_features.clone(), self.dim_edge)
    }

    pub fn with_node_features(mut self, features: Tensor) -> Result<Self> {
        if features.rows() != self.n_nodes() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                self.n_nodes()
            )));
        }
        self.node_features = features;
        Ok(self)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, e: usize) -> &Event {
        &self.events[e]
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn dim_node(&self) -> usize {
        self.node_features.cols()
    }

    pub fn dim_edge(&self) -> usize {
        self.dim_edge
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn self_loops(&self) -> usize {
        self.self_loops
    }

    pub fn max_time(&self) -> f64 {
        self.events.last().map(|e| e.t).unwrap_or(0.0)
    }

    /// Every incident event of `i`, in time order.
    pub fn incident(&self, i: usize) -> Result<&[NeighborEntry]> {
        self.index.get(i).map(Vec::as_slice).ok_or(Error::UnknownNode(i))
    }

    /// Nodes whose first event happened at or before `t`.
    pub fn active_nodes(&self, t: f64) -> &[usize] {
        let n = self.first_seen.partition_point(|&f| f <= t);
        &self.by_first_seen[..n]
    }

    /// At most `limit` incident events strictly before `t`, most recent first.
    pub fn temporal_neighbors(&self, i: usize, t: f64, limit: usize) -> Result<Vec<NeighborEntry>> {
        let entries = self.before(i, t)?;
        Ok(entries.iter().rev().take(limit).copied().collect())
    }

    /// All incident events strictly before `t`, oldest first.
    pub fn before(&self, i: usize, t: f64) -> Result<&[NeighborEntry]> {
        let entries = self.incident(i)?;
        let end = entries.partition_point(|e| e.t < t);
        Ok(&entries[..end])
    }

    /// Per-hop node sets reachable from `i` through causally ordered event paths.
    pub fn khop_neighbors(&self, i: usize, t: f64, hops: usize) -> Result<Vec<BTreeSet<usize>>> {
        if hops == 0 {
            return Err(Error::InvalidArgument("hop count must be at least 1".into()));
        }
        self.incident(i)?;
        let seed = BTreeMap::from([(i, t)]);
        Ok(self.expand_hops(i, seed, hops, usize::MAX))
    }

    /// Breadth-first causal expansion. `frontier` maps each node to the latest
    /// time at which it was reached; deeper events must precede that time.
    /// Returns `hops` sets, each excluding `root`. At most `fanout` most recent
    /// events are followed per node.
    pub fn expand_hops(
        &self,
        root: usize,
        mut frontier: BTreeMap<usize, f64>,
        hops: usize,
        fanout: usize,
    ) -> Vec<BTreeSet<usize>> {
        let mut out = Vec::with_capacity(hops);
        for _ in 0..hops {
            let mut next: BTreeMap<usize, f64> = BTreeMap::new();
            for (&u, &tu) in &frontier {
                let Ok(entries) = self.before(u, tu) else { continue };
                for e in entries.iter().rev().take(fanout) {
                    if e.node == root {
                        continue;
                    }
                    let slot = next.entry(e.node).or_insert(f64::NEG_INFINITY);
                    *slot = slot.max(e.t);
                }
            }
            out.push(next.keys().copied().collect());
            frontier = next;
        }
        out
    }
}
