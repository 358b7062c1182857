use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean over positives of the precision at each positive's rank, ranking by
/// descending score. Equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::InvalidArgument("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Loss and metric summary of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub eib: f64,
    pub xib: f64,
    pub ap_val_trans: Option<f64>,
    pub ap_val_ind: Option<f64>,
    pub ap_test_trans: Option<f64>,
    pub ap_test_ind: Option<f64>,
    /// Wall-clock time; excluded from the JSON report so it stays reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch with the best validation AP; its test AP is the reported result.
    pub best_epoch: Option<usize>,
}

impl MetricsReport {
    pub fn best(&self) -> Option<&EpochMetrics> {
        self.best_epoch.and_then(|b| self.epochs.iter().find(|e| e.epoch == b))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,ce,eib,xib,ap_val_trans,ap_val_ind,ap_test_trans,ap_test_ind,seconds,seed")?;
        let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{},{},{},{},{:.3},{}",
                e.epoch,
                e.ce,
                e.eib,
                e.xib,
                f(e.ap_val_trans),
                f(e.ap_val_ind),
                f(e.ap_test_trans),
                f(e.ap_test_ind),
                e.seconds,
                self.seed
            )?;
        }
        Ok(())
    }
}
