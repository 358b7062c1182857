use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use super::trainer::{EvalSummary, Experiment, Trainer};
use crate::enhancer::EnhancerConfig;
use crate::error::{Error, Result};
use crate::graph::TemporalGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    RandOnly,
    HopOnly,
    NoEnhancer,
    NoTgib,
    /// Backbone only: no enhancer and no filter.
    Base,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Full, Variant::RandOnly, Variant::HopOnly, Variant::NoEnhancer, Variant::NoTgib, Variant::Base];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RandOnly => "rand_only",
            Variant::HopOnly => "hop_only",
            Variant::NoEnhancer => "no_enhancer",
            Variant::NoTgib => "no_tgib",
            Variant::Base => "base",
        }
    }

    pub fn apply(self, exp: &Experiment) -> Experiment {
        let mut e = exp.clone();
        let no_tgib = |e: &mut Experiment| {
            e.filter.enabled = false;
            e.loss.alpha = 0.0;
            e.loss.beta = 0.0;
        };
        match self {
            Variant::Full => {}
            Variant::RandOnly => e.enhancer.hop_counts.clear(),
            Variant::HopOnly => e.enhancer.k_rand = 0,
            Variant::NoEnhancer => e.enhancer = EnhancerConfig::disabled(),
            Variant::NoTgib => no_tgib(&mut e),
            Variant::Base => {
                e.enhancer = EnhancerConfig::disabled();
                no_tgib(&mut e);
            }
        }
        e
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Test AP at the best validation epoch, one entry per seed.
    pub runs: Vec<EvalSummary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v.sqrt())
}

impl AblationRow {
    pub fn test_trans(&self) -> (f64, f64) {
        mean_std(&self.runs.iter().filter_map(|r| r.test_trans).collect::<Vec<_>>())
    }

    pub fn test_ind(&self) -> (f64, f64) {
        mean_std(&self.runs.iter().filter_map(|r| r.test_ind).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Columns: variant, mean ± std of test AP per mode and the difference of
    /// each mean from the full model.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "variant,seeds,trans_mean,trans_std,ind_mean,ind_std,trans_delta,ind_delta")?;
        let full = self.row(Variant::Full).map(|r| (r.test_trans().0, r.test_ind().0));
        for r in &self.rows {
            let (tm, ts) = r.test_trans();
            let (im, is) = r.test_ind();
            let (dt, di) = full.map(|(ft, fi)| (tm - ft, im - fi)).unwrap_or((f64::NAN, f64::NAN));
            writeln!(
                w,
                "{},{},{tm:.6},{ts:.6},{im:.6},{is:.6},{dt:.6},{di:.6}",
                r.variant.name(),
                r.runs.len()
            )?;
        }
        Ok(())
    }
}

/// Trains every variant once per seed and records test AP at the epoch
/// selected on validation.
pub fn run_ablation(
    graph: &TemporalGraph,
    base: &Experiment,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut exp = v.apply(base);
            exp.train.seed = seed;
            let mut trainer = Trainer::new(graph, exp)?;
            let fit = trainer.fit()?;
            runs.push(trainer.evaluate_all(&fit.store, &fit.memory)?);
        }
        rows.push(AblationRow { variant: v, runs });
    }
    Ok(AblationReport { seeds: seeds.to_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_toggle_components() {
        let e = Experiment::default();
        assert!(Variant::Full.apply(&e).enhancer.is_enabled());
        assert!(!Variant::NoEnhancer.apply(&e).enhancer.is_enabled());
        assert_eq!(Variant::HopOnly.apply(&e).enhancer.k_rand, 0);
        assert!(Variant::RandOnly.apply(&e).enhancer.hop_counts.is_empty());
        let b = Variant::Base.apply(&e);
        assert!(!b.filter.enabled && !b.enhancer.is_enabled() && b.loss.alpha == 0.0);
        assert_eq!("no_tgib".parse::<Variant>().unwrap(), Variant::NoTgib);
        assert!("x".parse::<Variant>().is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
