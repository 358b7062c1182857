//! Planted-preference bipartite event streams for end-to-end testing.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    /// Size of each user's preferred item set.
    pub preferred: usize,
    /// Per-user event rate (events per time unit).
    pub rate: f64,
    pub horizon: f64,
    /// Fraction of events that target a uniformly random item.
    pub noise: f64,
    /// Fraction of users whose events all fall after the 70% event quantile.
    pub unseen: f64,
    /// Zipf exponent of item popularity when drawing preferred sets; 0 is uniform.
    pub item_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 50,
            n_items: 50,
            preferred: 5,
            rate: 1.0,
            horizon: 60.0,
            noise: 0.1,
            unseen: 0.2,
            item_skew: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.preferred == 0 {
            return Err(Error::InvalidArgument("user, item and preferred-set counts must be positive".into()));
        }
        if self.preferred > self.n_items {
            return Err(Error::InvalidArgument("preferred-set size exceeds the number of items".into()));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) || !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument("rate and horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.noise) || !(0.0..1.0).contains(&self.unseen) {
            return Err(Error::InvalidArgument("noise and unseen fractions must lie in [0, 1)".into()));
        }
        if !(self.item_skew >= 0.0) {
            return Err(Error::InvalidArgument("item skew must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_unseen(&self) -> usize {
        (self.unseen * self.n_users as f64).round() as usize
    }
}

/// Planted structure behind a synthetic graph. Users are nodes
/// `0..n_users`, items follow.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub preferred: Vec<Vec<usize>>,
    pub unseen: Vec<usize>,
    /// Per event (graph order): whether the item was drawn at random.
    pub noise: Vec<bool>,
}

impl GroundTruth {
    pub fn is_preferred(&self, user: usize, item: usize) -> bool {
        self.preferred.get(user).is_some_and(|p| p.contains(&item))
    }

    /// `user,unseen,preferred` with preferred items separated by `;`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "user,unseen,preferred")?;
        for (u, p) in self.preferred.iter().enumerate() {
            let items: Vec<String> = p.iter().map(|i| i.to_string()).collect();
            writeln!(w, "{u},{},{}", self.unseen.contains(&u), items.join(";"))?;
        }
        Ok(())
    }
}

fn weighted_without_replacement(weights: &[f64], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let mut x = rng.uniform() * total;
        let mut pick = w.iter().rposition(|&v| v > 0.0).expect("positive weight remains");
        for (i, &v) in w.iter().enumerate() {
            if v > 0.0 && x < v {
                pick = i;
                break;
            }
            x -= v;
        }
        w[pick] = 0.0;
        out.push(pick);
    }
    out.sort_unstable();
    out
}

/// Each user emits a Poisson stream of events to items of its preferred set
/// (or, with probability `noise`, to a uniform item). Unseen users only emit
/// after the time of the event at the 70% quantile.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(TemporalGraph, GroundTruth)> {
    spec.validate()?;
    let (nu, ni) = (spec.n_users, spec.n_items);
    let mut rng = Rng::derive(spec.seed, &[0x5e7]);
    let unseen: Vec<usize> = {
        let mut u = rng.sample_indices(nu, spec.n_unseen());
        u.sort_unstable();
        u
    };
    let weights: Vec<f64> = (0..ni).map(|r| ((r + 1) as f64).powf(-spec.item_skew)).collect();
    let preferred: Vec<Vec<usize>> = (0..nu)
        .map(|_| {
            weighted_without_replacement(&weights, spec.preferred, &mut rng)
                .into_iter()
                .map(|i| nu + i)
                .collect()
        })
        .collect();

    let stream = |u: usize, start: f64, rng: &mut Rng| {
        let mut out = Vec::new();
        let mut t = start + rng.exponential(spec.rate);
        while t < spec.horizon {
            let noisy = rng.uniform() < spec.noise;
            let item = if noisy { nu + rng.below(ni) } else { preferred[u][rng.below(spec.preferred)] };
            out.push((u, item, t, noisy));
            t += rng.exponential(spec.rate);
        }
        out
    };
    let quantile = |rows: &[(usize, usize, f64, bool)]| {
        let mut ts: Vec<f64> = rows.iter().map(|r| r.2).collect();
        ts.sort_by(f64::total_cmp);
        ts.get(((0.7 * ts.len() as f64) + 1e-9).floor() as usize).copied().unwrap_or(0.0)
    };

    let mut rows = Vec::new();
    for u in (0..nu).filter(|u| !unseen.contains(u)) {
        let mut r = rng.child(u as u64);
        rows.extend(stream(u, 0.0, &mut r));
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("synthetic spec produced no events".into()));
    }
    let start = quantile(&rows);
    let mut late = Vec::new();
    for &u in &unseen {
        let mut r = rng.child(u as u64);
        late.extend(stream(u, start, &mut r));
    }
    // dropping early late-user events pushes the quantile later; repeat until stable
    loop {
        let mut all = rows.clone();
        all.extend(late.iter().copied());
        let q = quantile(&all);
        let before = late.len();
        late.retain(|r| r.2 >= q);
        if late.len() == before {
            break;
        }
    }
    rows.extend(late);
    rows.sort_by(|a, b| a.2.total_cmp(&b.2));

    let noise = rows.iter().map(|r| r.3).collect();
    let labels = (0..nu).map(|u| format!("u{u}")).chain((0..ni).map(|i| format!("i{i}"))).collect();
    let g = TemporalGraph::from_rows(rows.into_iter().map(|r| (r.0, r.1, r.2, Vec::new())).collect(), labels, 0)?;
    Ok((g, GroundTruth { preferred, unseen, noise }))
}
