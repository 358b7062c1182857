use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::TemporalGraph;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub inductive_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.70,
            val_frac: 0.15,
            test_frac: 0.15,
            inductive_fraction: 0.10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::InvalidArgument("split fractions must be positive".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("split fractions must sum to 1".into()));
        }
        if !(0.0..1.0).contains(&self.inductive_fraction) {
            return Err(Error::InvalidArgument("inductive_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Transductive,
    Inductive,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Transductive => "transductive",
            EvalMode::Inductive => "inductive",
        }
    }
}

/// Chronological split with inductive node masking.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// Timestamps opening the validation and test ranges.
    pub val_start: f64,
    pub test_start: f64,
    /// Nodes sampled from val/test and withheld from training.
    pub masked: BTreeSet<usize>,
    /// Training events left after dropping those touching masked nodes.
    pub train_events: Vec<usize>,
    seen: Vec<bool>,
}

impl Split {
    pub fn new(g: &TemporalGraph, spec: &SplitSpec) -> Result<Self> {
        spec.validate()?;
        let n = g.n_events();
        let ev = g.events();
        let quantile_time = |frac: f64| {
            let idx = ((frac * n as f64) + 1e-9).floor() as usize;
            if idx >= n {
                f64::INFINITY
            } else {
                ev[idx].t
            }
        };
        let val_start = quantile_time(spec.train_frac);
        let test_start = quantile_time(spec.train_frac + spec.val_frac);
        let a = ev.partition_point(|e| e.t < val_start);
        let b = ev.partition_point(|e| e.t < test_start);

        let mut later: BTreeSet<usize> = BTreeSet::new();
        for e in &ev[a..] {
            later.insert(e.src);
            later.insert(e.dst);
        }
        let later: Vec<usize> = later.into_iter().collect();
        let count = ((spec.inductive_fraction * g.n_nodes() as f64).round() as usize).min(later.len());
        let mut rng = Rng::derive(spec.seed, &[0x5117]);
        let masked: BTreeSet<usize> = rng
            .sample_indices(later.len(), count)
            .into_iter()
            .map(|i| later[i])
            .collect();

        let train_events: Vec<usize> = (0..a)
            .filter(|&i| !masked.contains(&ev[i].src) && !masked.contains(&ev[i].dst))
            .collect();
        if train_events.is_empty() {
            return Err(Error::InvalidArgument(
                "no training events remain after inductive masking".into(),
            ));
        }
        let mut seen = vec![false; g.n_nodes()];
        for &i in &train_events {
            seen[ev[i].src] = true;
            seen[ev[i].dst] = true;
        }
        Ok(Split {
            train: 0..a,
            val: a..b,
            test: b..n,
            val_start,
            test_start,
            masked,
            train_events,
            seen,
        })
    }

    pub fn is_seen(&self, v: usize) -> bool {
        self.seen.get(v).copied().unwrap_or(false)
    }

    pub fn n_seen(&self) -> usize {
        self.seen.iter().filter(|&&s| s).count()
    }

    /// Whether an event belongs to the given evaluation mode.
    pub fn classify(&self, g: &TemporalGraph, e: usize) -> EvalMode {
        let ev = g.event(e);
        if self.is_seen(ev.src) && self.is_seen(ev.dst) {
            EvalMode::Transductive
        } else {
            EvalMode::Inductive
        }
    }

    pub fn eval_edges(&self, g: &TemporalGraph, range: Range<usize>, mode: EvalMode) -> Vec<usize> {
        range.filter(|&e| self.classify(g, e) == mode).collect()
    }
}
