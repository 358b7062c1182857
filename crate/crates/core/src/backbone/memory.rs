//! Per-node recurrent state updated by interaction events.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::graph::Event;
use crate::numerics::nn::{Linear, TimeEncoder};
use crate::numerics::params::{read_f64, read_u64};
use crate::numerics::{ParamStore, Rng, Tape, Tensor, Var};

const MAGIC: &[u8; 8] = b"GTGIBMEM";

/// Committed node states and their last-update clocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    dim: usize,
    states: Vec<f64>,
    clock: Vec<f64>,
}

impl Memory {
    pub fn new(n_nodes: usize, dim: usize) -> Self {
        Memory {
            dim,
            states: vec![0.0; n_nodes * dim],
            clock: vec![0.0; n_nodes],
        }
    }

    pub fn reset(&mut self) {
        self.states.fill(0.0);
        self.clock.fill(0.0);
    }

    pub fn n_nodes(&self) -> usize {
        self.clock.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, v: usize) -> &[f64] {
        &self.states[v * self.dim..(v + 1) * self.dim]
    }

    pub fn clock(&self, v: usize) -> f64 {
        self.clock[v]
    }

    pub fn is_fresh(&self, v: usize) -> bool {
        self.state(v).iter().all(|&x| x == 0.0)
    }

    /// Stores a delta's values and clocks.
    pub fn commit(&mut self, tape: &Tape, delta: &MemoryDelta) {
        if let Some(s) = delta.states {
            let vals = tape.value(s);
            for (r, &v) in delta.nodes.iter().enumerate() {
                self.states[v * self.dim..(v + 1) * self.dim].copy_from_slice(vals.row_slice(r));
                self.clock[v] = delta.clocks[r];
            }
        }
    }

    pub fn write_snapshot(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n_nodes() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for &x in self.states.iter().chain(&self.clock) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a memory snapshot".into()));
        }
        let n = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let mut m = Memory::new(n, dim);
        for x in m.states.iter_mut().chain(m.clock.iter_mut()) {
            *x = read_f64(&mut r)?;
        }
        Ok(m)
    }
}

/// Gated recurrent cell over event messages
/// `[s_own ⊕ s_other ⊕ TE(t − clock_own) ⊕ e]`.
#[derive(Clone, Debug)]
pub struct MemoryUpdater {
    pub x: Linear,
    pub h: Linear,
    pub dim: usize,
    pub edge_width: usize,
}

impl MemoryUpdater {
    pub fn new(store: &mut ParamStore, dim: usize, time_dim: usize, edge_width: usize, rng: &mut Rng) -> Result<Self> {
        let msg = 2 * dim + time_dim + edge_width;
        Ok(MemoryUpdater {
            x: Linear::new(store, "memory.x", msg, 3 * dim, rng)?,
            h: Linear::new(store, "memory.h", dim, 3 * dim, rng)?,
            dim,
            edge_width,
        })
    }

    fn cell(&self, tape: &mut Tape, store: &ParamStore, msg: Var, h: Var) -> Var {
        let k = self.dim;
        let gx = self.x.forward(tape, store, msg);
        let gh = self.h.forward(tape, store, h);
        let (xr, xz, xn) = (tape.slice_cols(gx, 0, k), tape.slice_cols(gx, k, k), tape.slice_cols(gx, 2 * k, k));
        let (hr, hz, hn) = (tape.slice_cols(gh, 0, k), tape.slice_cols(gh, k, k), tape.slice_cols(gh, 2 * k, k));
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let z = tape.add(xz, hz);
        let z = tape.sigmoid(z);
        let rh = tape.mul(r, hn);
        let n = tape.add(xn, rh);
        let n = tape.tanh(n);
        let d = tape.sub(h, n);
        let zd = tape.mul(z, d);
        tape.add(n, zd)
    }

    /// Applies `events` (time-sorted) on top of `mem`, recording the update on
    /// the tape. Events are grouped into waves of node-disjoint events, which
    /// reproduces strictly sequential processing.
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        te: &TimeEncoder,
        mem: &Memory,
        events: &[&Event],
    ) -> Result<MemoryDelta> {
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut nodes = Vec::new();
        for e in events {
            for v in [e.src, e.dst] {
                if v >= mem.n_nodes() {
                    return Err(Error::UnknownNode(v));
                }
                local.entry(v).or_insert_with(|| {
                    nodes.push(v);
                    nodes.len() - 1
                });
            }
        }
        if nodes.is_empty() {
            return Ok(MemoryDelta::default());
        }
        let mut clocks: Vec<f64> = nodes.iter().map(|&v| mem.clock(v)).collect();
        let k = self.dim;
        let init: Vec<f64> = nodes.iter().flat_map(|&v| mem.state(v).iter().copied()).collect();
        let mut s = tape.constant(Tensor::matrix(nodes.len(), k, init));

        let mut node_wave = vec![0usize; nodes.len()];
        let mut waves: Vec<Vec<usize>> = Vec::new();
        for (i, e) in events.iter().enumerate() {
            let (a, b) = (local[&e.src], local[&e.dst]);
            let w = node_wave[a].max(node_wave[b]);
            node_wave[a] = w + 1;
            node_wave[b] = w + 1;
            if waves.len() <= w {
                waves.push(Vec::new());
            }
            waves[w].push(i);
        }

        for wave in waves {
            // one message per distinct endpoint
            let mut own = Vec::new();
            let mut other = Vec::new();
            let mut dts = Vec::new();
            let mut feats = Vec::new();
            for &i in &wave {
                let e = events[i];
                let (a, b) = (local[&e.src], local[&e.dst]);
                let ends: &[(usize, usize)] = if a == b { &[(a, a)] } else { &[(a, b), (b, a)] };
                for &(x, y) in ends {
                    if e.t < clocks[x] {
                        return Err(Error::OutOfOrder { node: nodes[x], event_time: e.t, clock: clocks[x] });
                    }
                    own.push(x);
                    other.push(y);
                    dts.push(e.t - clocks[x]);
                    if e.features.is_empty() {
                        feats.extend(std::iter::repeat_n(0.0, self.edge_width));
                    } else {
                        feats.extend_from_slice(&e.features);
                    }
                }
            }
            let rows = own.len();
            let so = tape.gather_rows(s, &own);
            let sx = tape.gather_rows(s, &other);
            let enc = te.forward(tape, store, &dts);
            let mut parts = vec![so, sx, enc];
            if self.edge_width > 0 {
                parts.push(tape.constant(Tensor::matrix(rows, self.edge_width, feats)));
            }
            let msg = tape.concat_cols(&parts);
            let next = self.cell(tape, store, msg, so);
            s = tape.scatter_rows(s, &own, next);
            for &i in &wave {
                let e = events[i];
                clocks[local[&e.src]] = e.t;
                clocks[local[&e.dst]] = e.t;
            }
        }
        Ok(MemoryDelta { nodes, local, states: Some(s), clocks })
    }
}

/// Uncommitted memory rows produced on a tape.
#[derive(Clone, Debug, Default)]
pub struct MemoryDelta {
    pub nodes: Vec<usize>,
    pub local: HashMap<usize, usize>,
    pub states: Option<Var>,
    pub clocks: Vec<f64>,
}

impl MemoryDelta {
    /// Memory rows for `query` nodes: updated rows where present, committed
    /// rows (as constants) elsewhere.
    pub fn lookup(&self, tape: &mut Tape, mem: &Memory, query: &[usize]) -> Var {
        let k = mem.dim();
        let mut fixed = Vec::new();
        let mut fixed_rows = 0;
        let base = self.nodes.len();
        let idx: Vec<usize> = query
            .iter()
            .map(|&v| match self.local.get(&v) {
                Some(&r) if self.states.is_some() => r,
                _ => {
                    fixed.extend_from_slice(mem.state(v));
                    fixed_rows += 1;
                    base + fixed_rows - 1
                }
            })
            .collect();
        let fixed = tape.constant(Tensor::matrix(fixed_rows, k, fixed));
        let all = match self.states {
            Some(s) if fixed_rows > 0 => tape.concat_rows(&[s, fixed]),
            Some(s) => s,
            None => fixed,
        };
        tape.gather_rows(all, &idx)
    }
}

/// Applies and commits `events` immediately.
pub fn memory_update(
    mem: &mut Memory,
    events: &[&Event],
    updater: &MemoryUpdater,
    te: &TimeEncoder,
    store: &ParamStore,
) -> Result<()> {
    let mut tape = Tape::default();
    let delta = updater.apply(&mut tape, store, te, mem, events)?;
    mem.commit(&tape, &delta);
    Ok(())
}
